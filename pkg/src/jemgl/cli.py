"""Command-line entry point: ``jemgl <command> [flags]``.

Every command takes an optional ``--config`` JSON file whose keys are the
long flag names with dashes replaced by underscores.  Explicit flags win
over the file, which wins over the built-in defaults.  The effective
settings are written to ``config.lock.json`` next to the outputs.

Exit codes: 0 success, 2 bad input, 3 solver did not converge, 1 anything
else (including a benchmark where more than 10% of repetitions failed).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .evaluation import EDGE_THRESHOLD, MetricError, evaluate, theorem1_bound
from .experiments import (
    PENALTIES,
    aggregate,
    default_grid,
    gram_spec_for,
    grid_search,
    grid_search_heldout,
    run_benchmark,
)
from .graphcore import DimensionError, LaplacianError, LaplacianSet, read_matrix_csv, write_matrix_csv
from .penalty import DEFAULT_RIDGE, GramKind, SpecError, build_gram
from .solver import AdaptiveRho, ConfigError, NumericalError, ProblemData, SolverConfig, solve
from .synthdata import (
    DatasetError,
    GenerationError,
    PatternSpec,
    generate_pattern,
    load_dataset,
    sample_covariance,
    sample_signals,
    save_dataset,
)

logger = logging.getLogger("jemgl")

EXIT_OK, EXIT_FAILURE, EXIT_INPUT, EXIT_NONCONVERGED = 0, 1, 2, 3
LOCK_FILE = "config.lock.json"
MAX_FAILURE_RATE = 0.10


class InputError(Exception):
    """Bad flags, config or input files (exit code 2)."""


_SOLVER_DEFAULTS = {
    "penalty": "ggl",
    "weights": None,
    "rho_n": 0.1,
    "rho_pen": 1.0,
    "rho_admm": 1.0,
    "tol": 1e-3,
    "max_iter": 10000,
    "adaptive": True,
    "ridge": DEFAULT_RIDGE,
    "b_update": "exact",
    "center": False,
}

DEFAULTS = {
    "generate": {"pattern": 1, "p": 15, "k": 3, "n": [100, 100, 100], "seed": 0,
                 "edge_prob": None, "out": None},
    "solve": {**_SOLVER_DEFAULTS, "data": None, "out": None, "trace": None},
    "gridsearch": {**_SOLVER_DEFAULTS, "data": None, "out": None, "grid": None,
                   "criterion": "fs", "threshold": EDGE_THRESHOLD, "holdout": 0.2},
    "benchmark": {**_SOLVER_DEFAULTS, "pattern": [1], "penalties": list(PENALTIES), "p": 15,
                  "n": [[100, 100, 100]], "reps": 10, "seed": 2024, "jobs": 1, "grid": None,
                  "threshold": EDGE_THRESHOLD, "full": False, "out": None},
    "evaluate": {"estimate": None, "truth": None, "threshold": EDGE_THRESHOLD, "out": None},
    "bound": {"truth": None, "penalty": "ggl", "weights": None, "rho_pen": 1.0, "n": None,
              "tau": None, "ridge": DEFAULT_RIDGE, "out": None},
}

# --full reproduces the complete synthetic protocol.
FULL_PROTOCOL = {"pattern": [1, 2, 3], "n": [[100, 100, 100], [60, 90, 150]], "reps": 50}


# -- parsing helpers --------------------------------------------------------

def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _sizes_list(text: str) -> list[list[int]]:
    """``100,100,100;60,90,150`` -> two sample-size settings."""
    return [_int_list(part) for part in text.split(";") if part.strip()]


def _weights(text: str):
    """JSON (``[[0,1],[1,0]]``) or a comma list (``1,0.5``)."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return _float_list(text)


def _bool(text: str) -> bool:
    if text.lower() in ("1", "true", "yes", "on"):
        return True
    if text.lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _add_solver_flags(sp: argparse.ArgumentParser) -> None:
    S = argparse.SUPPRESS
    sp.add_argument("--penalty", choices=["ggl", "tvgl", "lsp", "zero"], default=S)
    sp.add_argument("--weights", type=_weights, default=S,
                    help="TVGL: comma list of K-1 weights; LSP: JSON KxK matrix")
    sp.add_argument("--rho-n", type=float, default=S)
    sp.add_argument("--rho-pen", type=float, default=S)
    sp.add_argument("--rho-admm", type=float, default=S, help="initial ADMM penalty")
    sp.add_argument("--tol", type=float, default=S, help="stop when ||L - L_prev||_F <= tol")
    sp.add_argument("--max-iter", type=int, default=S)
    sp.add_argument("--adaptive", type=_bool, default=S, help="residual-balancing ADMM penalty")
    sp.add_argument("--ridge", type=float, default=S)
    sp.add_argument("--b-update", choices=["exact", "clip"], default=S)
    sp.add_argument("--center", type=_bool, default=S, help="subtract block means")


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    parser = argparse.ArgumentParser(prog="jemgl", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("generate", help="synthetic ground truth and graph signals")
    sp.add_argument("--pattern", default=S, help="1, 2 or 3")
    sp.add_argument("--p", type=int, default=S)
    sp.add_argument("--k", type=int, default=S)
    sp.add_argument("--n", type=_int_list, default=S, help="per-graph sample sizes, e.g. 100,100,100")
    sp.add_argument("--seed", type=int, default=S)
    sp.add_argument("--edge-prob", type=float, default=S)
    sp.add_argument("--out", default=S, required=False)

    sp = sub.add_parser("solve", help="estimate Laplacians for one rho_n")
    sp.add_argument("--data", default=S)
    _add_solver_flags(sp)
    sp.add_argument("--trace", default=S, help="JSON-lines file of per-iteration records")
    sp.add_argument("--out", default=S)

    sp = sub.add_parser("gridsearch", help="select rho_n over a grid")
    sp.add_argument("--data", default=S)
    _add_solver_flags(sp)
    sp.add_argument("--grid", type=_float_list, default=S, help="comma list; default 21-point grid")
    sp.add_argument("--criterion", choices=["fs", "heldout-loglik"], default=S)
    sp.add_argument("--threshold", type=float, default=S, help="edge detection threshold")
    sp.add_argument("--holdout", type=float, default=S, help="held-out fraction for heldout-loglik")
    sp.add_argument("--out", default=S)

    sp = sub.add_parser("benchmark", help="Monte-Carlo comparison of penalties")
    sp.add_argument("--pattern", type=_int_list, default=S)
    sp.add_argument("--penalties", type=lambda t: t.split(","), default=S)
    sp.add_argument("--p", type=int, default=S)
    sp.add_argument("--n", type=_sizes_list, default=S,
                    help="sample-size settings separated by ';', e.g. '100,100,100;60,90,150'")
    sp.add_argument("--reps", type=int, default=S)
    sp.add_argument("--seed", type=int, default=S)
    sp.add_argument("--jobs", type=int, default=S, help="worker processes (env JEMGL_JOBS overrides)")
    sp.add_argument("--grid", type=_float_list, default=S)
    sp.add_argument("--threshold", type=float, default=S)
    sp.add_argument("--full", action="store_true", default=S,
                    help="all patterns, both sample-size settings, 50 repetitions")
    _add_solver_flags(sp)
    sp.add_argument("--out", default=S)

    sp = sub.add_parser("evaluate", help="RE and FS of estimates against a truth")
    sp.add_argument("--estimate", default=S, help="directory with estimate_k.csv files")
    sp.add_argument("--truth", default=S, help="directory with truth_k.csv files")
    sp.add_argument("--threshold", type=float, default=S)
    sp.add_argument("--out", default=S, help="write the report here instead of stdout")

    sp = sub.add_parser("bound", help="Frobenius error bound for a ground truth")
    sp.add_argument("--truth", default=S)
    sp.add_argument("--penalty", choices=["ggl", "tvgl", "lsp"], default=S)
    sp.add_argument("--weights", type=_weights, default=S)
    sp.add_argument("--rho-pen", type=float, default=S)
    sp.add_argument("--n", type=int, default=S, help="total sample size")
    sp.add_argument("--tau", type=float, default=S)
    sp.add_argument("--ridge", type=float, default=S)
    sp.add_argument("--out", default=S)

    for name, p in sub.choices.items():
        p.add_argument("--config", default=None, help="JSON file of settings")
    return parser


def resolve_config(command: str, flags: dict, config_path: Optional[str]) -> dict:
    """Merge defaults, the JSON config file and explicit flags (in that order)."""
    cfg = dict(DEFAULTS[command])
    if config_path:
        try:
            file_cfg = json.loads(Path(config_path).read_text())
        except (OSError, ValueError) as exc:
            raise InputError(f"cannot read config {config_path}: {exc}") from exc
        if not isinstance(file_cfg, dict):
            raise InputError("config file must hold a JSON object")
        unknown = set(file_cfg) - set(cfg)
        if unknown:
            raise InputError(f"unknown config keys for {command}: {sorted(unknown)}")
        cfg.update(file_cfg)
    cfg.update(flags)
    return cfg


# -- plumbing ---------------------------------------------------------------

def _require(cfg: dict, *keys: str) -> None:
    missing = [k for k in keys if cfg.get(k) is None]
    if missing:
        raise InputError("missing required setting(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))


def _out_dir(cfg: dict) -> Path:
    _require(cfg, "out")
    path = Path(cfg["out"])
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InputError(f"cannot create {path}: {exc}") from exc
    return path


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def _write_lock(out: Path, command: str, cfg: dict) -> None:
    (out / LOCK_FILE).write_text(_dump_json({"command": command, "version": __version__, **cfg}))


def _solver_config(cfg: dict, rho_n: Optional[float] = None) -> SolverConfig:
    return SolverConfig(
        rho_n=float(cfg["rho_n"] if rho_n is None else rho_n),
        rho_pen=float(cfg["rho_pen"]),
        rho_admm_init=float(cfg["rho_admm"]),
        tol_change=float(cfg["tol"]),
        max_iter=int(cfg["max_iter"]),
        adaptive_rho=AdaptiveRho(enabled=bool(cfg["adaptive"])),
        ridge=float(cfg["ridge"]),
        b_update=cfg["b_update"],
    )


def _gram_spec(cfg: dict, K: int):
    return gram_spec_for(cfg["penalty"], K, ridge=float(cfg["ridge"]), weights=cfg.get("weights"))


def _fmt(x) -> str:
    return format(float(x), ".17g") if isinstance(x, (float, np.floating)) else str(x)


def _write_table(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(x) for x in r])
    path.write_text(buf.getvalue())


def _write_estimate(out: Path, L: LaplacianSet) -> None:
    for k, g in enumerate(L):
        write_matrix_csv(out / f"estimate_{k}.csv", g.entries)


def _read_stack(path: Path, prefix: str) -> LaplacianSet:
    files = sorted(path.glob(f"{prefix}_*.csv"), key=lambda f: int(f.stem.rsplit("_", 1)[1]))
    if not files:
        raise InputError(f"no {prefix}_k.csv files in {path}")
    try:
        return LaplacianSet.from_arrays([read_matrix_csv(f) for f in files])
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read {prefix} matrices from {path}: {exc}") from exc


def _load(cfg: dict):
    _require(cfg, "data")
    return load_dataset(cfg["data"])


# -- commands ---------------------------------------------------------------

def cmd_generate(cfg: dict) -> int:
    out = _out_dir(cfg)
    counts = list(cfg["n"])
    K = int(cfg["k"])
    if len(counts) != K:
        raise InputError(f"--n has {len(counts)} sizes but --k is {K}")
    extra = {} if cfg.get("edge_prob") is None else {"edge_prob": float(cfg["edge_prob"])}
    spec = PatternSpec(str(cfg["pattern"]), int(cfg["p"]), K, int(cfg["seed"]), **extra)
    truth = generate_pattern(spec)
    data = sample_signals(truth, counts, spec.seed)
    save_dataset(out, data, truth, seed=spec.seed, pattern=spec.pattern.index,
                 extra={"pattern_spec": spec.to_json()})
    _write_lock(out, "generate", cfg)
    return EXIT_OK


def cmd_solve(cfg: dict) -> int:
    ds = _load(cfg)
    out = _out_dir(cfg)
    S = sample_covariance(ds.data, center=bool(cfg["center"]))
    config = _solver_config(cfg)
    data = ProblemData.build(S, ds.data.counts, build_gram(_gram_spec(cfg, ds.data.K)))
    if cfg.get("trace"):
        with open(cfg["trace"], "w") as fh:
            report = solve(data, config, trace=fh)
    else:
        report = solve(data, config)
    _write_estimate(out, report.estimate)
    rep = report.to_json()
    # timing varies run to run; keep the report byte-reproducible
    logger.info("solve: %d iterations in %.3f s", report.iterations, rep.pop("wall_time"))
    (out / "report.json").write_text(_dump_json(rep))
    _write_lock(out, "solve", cfg)
    if not report.converged:
        print(f"not converged after {report.iterations} iterations", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_gridsearch(cfg: dict) -> int:
    ds = _load(cfg)
    out = _out_dir(cfg)
    grid = default_grid() if cfg.get("grid") is None else np.asarray(cfg["grid"], dtype=float)
    spec = _gram_spec(cfg, ds.data.K)
    config = _solver_config(cfg)
    thr = float(cfg["threshold"])
    if cfg["criterion"] == "fs":
        if ds.truth is None:
            raise InputError("criterion 'fs' needs ground truth; use --criterion heldout-loglik")
        S = sample_covariance(ds.data, center=bool(cfg["center"]))
        res = grid_search(S, ds.data.counts, ds.truth, spec, config, grid, thr)
    else:
        res = grid_search_heldout(ds.data, spec, config, grid, center=bool(cfg["center"]),
                                  holdout=float(cfg["holdout"]), truth=ds.truth, edge_threshold=thr)
    _write_table(out / "grid.csv", ["rho_n", "RE", "FS", "score", "iters", "converged"],
                 [(r.rho_n, r.re, r.fs, r.score, r.iters, int(r.converged)) for r in res.rows])
    best = {k: v for k, v in asdict(res.best).items() if k != "wall_time"}
    (out / "best.json").write_text(_dump_json({"criterion": res.criterion, **best}))
    _write_estimate(out, res.best_estimate)
    _write_lock(out, "gridsearch", cfg)
    print(_fmt(res.best.rho_n))
    return EXIT_OK


def _jobs(cfg: dict) -> int:
    env = os.environ.get("JEMGL_JOBS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise InputError(f"JEMGL_JOBS must be an integer, got {env!r}") from exc
    return max(1, int(cfg["jobs"]))


def cmd_benchmark(cfg: dict) -> int:
    out = _out_dir(cfg)
    if cfg.get("full"):
        cfg = {**cfg, **FULL_PROTOCOL}
    jobs = _jobs(cfg)
    config = _solver_config(cfg)
    penalties = list(cfg["penalties"])
    for pen in penalties:
        GramKind.parse(pen)  # fail early on a typo
    rows = []
    for pattern in cfg["pattern"]:
        for counts in cfg["n"]:
            rows += run_benchmark(pattern, penalties, int(cfg["p"]), counts, int(cfg["reps"]),
                                  int(cfg["seed"]), config, cfg.get("grid"),
                                  float(cfg["threshold"]), jobs=jobs)
    _write_table(out / "runs.csv",
                 ["pattern", "penalty", "n_spec", "seed", "rho_n", "RE", "FS", "iters", "wall_time", "error"],
                 [(r.pattern, r.penalty, r.n_spec, r.seed, r.rho_n, r.RE, r.FS, r.iters, r.wall_time, r.error)
                  for r in rows])
    agg = aggregate(rows)
    _write_table(out / "summary.csv",
                 ["pattern", "penalty", "n_spec", "RE_mean", "RE_std", "FS_mean", "FS_std", "successes", "failures"],
                 [tuple(asdict(a).values()) for a in agg])
    (out / "summary.json").write_text(_dump_json([asdict(a) for a in agg]))
    _write_lock(out, "benchmark", {**cfg, "jobs": jobs})
    for a in agg:
        print(f"pattern {a.pattern} {a.penalty:<15} n={a.n_spec:<14} "
              f"RE {a.RE_mean:.3f} +- {a.RE_std:.3f}  FS {a.FS_mean:.3f} +- {a.FS_std:.3f}")
    failed = sum(1 for r in rows if r.error)
    if rows and failed / len(rows) > MAX_FAILURE_RATE:
        print(f"{failed} of {len(rows)} runs failed", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


def cmd_evaluate(cfg: dict) -> int:
    _require(cfg, "estimate", "truth")
    est = _read_stack(Path(cfg["estimate"]), "estimate")
    truth = _read_stack(Path(cfg["truth"]), "truth")
    report = evaluate(est, truth, float(cfg["threshold"]))
    text = _dump_json(report.to_json())
    if cfg.get("out"):
        Path(cfg["out"]).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_bound(cfg: dict) -> int:
    _require(cfg, "truth", "n", "tau")
    truth = _read_stack(Path(cfg["truth"]), "truth")
    gram = build_gram(_gram_spec(cfg, truth.K))
    report = theorem1_bound(truth, gram, float(cfg["rho_pen"]), int(cfg["n"]), float(cfg["tau"]))
    text = _dump_json(report.to_json())
    if cfg.get("out"):
        Path(cfg["out"]).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "solve": cmd_solve,
    "gridsearch": cmd_gridsearch,
    "benchmark": cmd_benchmark,
    "evaluate": cmd_evaluate,
    "bound": cmd_bound,
}

_INPUT_ERRORS = (InputError, DatasetError, DimensionError, LaplacianError, SpecError,
                 ConfigError, MetricError, GenerationError, ValueError, OSError)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with code 2
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    flags = {k: v for k, v in vars(ns).items() if k not in ("command", "config", "verbose")}
    try:
        cfg = resolve_config(ns.command, flags, ns.config)
        return COMMANDS[ns.command](cfg)
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except _INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
