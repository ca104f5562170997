"""Grid search, Monte-Carlo repetitions and benchmark aggregation."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .evaluation import EDGE_THRESHOLD, evaluate
from .graphcore import LaplacianSet, log_pseudo_determinant
from .penalty import GramKind, GramSpec, build_gram
from .solver import ProblemData, SolverConfig, solve
from .synthdata import (
    Pattern,
    PatternSpec,
    SignalDataset,
    generate_pattern,
    sample_covariance,
    sample_signals,
)

logger = logging.getLogger(__name__)

PENALTIES = ("ggl", "tvgl", "lsp")
PENALTY_LABELS = {
    GramKind.GROUP_GRAPH_LASSO: "JEMGL-GGL",
    GramKind.TIME_VARYING: "JEMGL-TVGL",
    GramKind.LAPLACIAN_SHRINKAGE: "JEMGL-LSP",
    GramKind.ZERO: "JEMGL-separate",
}


def default_grid() -> np.ndarray:
    """``10^(-2 + 2r/15)`` for ``r = 0, ..., 20``."""
    return 10.0 ** (-2.0 + 2.0 * np.arange(21) / 15.0)


def banded_lsp_weights(K: int, near: float = 1.0, far: float = 1.0) -> np.ndarray:
    """``near`` for neighbouring graphs, ``far`` for the rest, zero diagonal."""
    idx = np.arange(K)
    gap = np.abs(idx[:, None] - idx[None, :])
    return np.where(gap == 1, near, np.where(gap > 1, far, 0.0))


def preset_lsp_weights(pattern, K: int) -> np.ndarray:
    """Shrinkage weights used for the synthetic benchmarks, per pattern."""
    far = {Pattern.COMMON_PLUS_UNIQUE: 1.0, Pattern.TIME_VARYING_DOWNSAMPLE: 0.5,
           Pattern.MODULAR_SHARED: 0.1}[Pattern.parse(pattern)]
    return banded_lsp_weights(K, 1.0, far)


def gram_spec_for(penalty, K: int, pattern=None, ridge: Optional[float] = None,
                  weights=None) -> GramSpec:
    """Gram specification with the benchmark defaults.

    Time-varying weights default to ones.  Shrinkage weights default to ones,
    or to the per-pattern preset when ``pattern`` is given.
    """
    kind = GramKind.parse(penalty)
    kw = {} if ridge is None else {"ridge": ridge}
    if weights is None and kind is GramKind.LAPLACIAN_SHRINKAGE and pattern is not None:
        weights = preset_lsp_weights(pattern, K)
    if weights is not None and kind is GramKind.LAPLACIAN_SHRINKAGE:
        weights = tuple(tuple(float(x) for x in row) for row in np.asarray(weights))
    elif weights is not None and kind is GramKind.TIME_VARYING:
        weights = tuple(float(x) for x in np.ravel(weights))
    return GramSpec(kind, K, weights, **kw)


@dataclass(frozen=True)
class GridRow:
    rho_n: float
    re: float
    fs: float
    iters: int
    converged: bool
    wall_time: float
    score: float = float("nan")


@dataclass
class GridResult:
    rows: list[GridRow]
    best: GridRow
    criterion: str
    best_estimate: Optional[LaplacianSet] = field(default=None, repr=False)


def _select(rows: Sequence[GridRow], criterion: str) -> int:
    if criterion == "fs":
        key = lambda i: (-rows[i].fs, rows[i].re, rows[i].rho_n)
    else:
        key = lambda i: (-rows[i].score, rows[i].rho_n)
    return min(range(len(rows)), key=key)


def grid_search(covariances: np.ndarray, counts: Sequence[int], truth: LaplacianSet,
                gram_spec: GramSpec, config: SolverConfig, grid: Optional[Iterable[float]] = None,
                edge_threshold: float = EDGE_THRESHOLD) -> GridResult:
    """Pick ``rho_n`` by F-score against the ground truth.

    Ties are broken by lower relative error, then by the smaller ``rho_n``.
    """
    grid = default_grid() if grid is None else np.asarray(list(grid), dtype=float)
    if grid.size == 0:
        raise ValueError("empty grid")
    data = ProblemData.build(covariances, counts, build_gram(gram_spec))
    rows, estimates = [], []
    for rho_n in grid:
        rep = solve(data, replace(config, rho_n=float(rho_n)))
        m = evaluate(rep.estimate, truth, edge_threshold)
        rows.append(GridRow(float(rho_n), m.re, m.fs, rep.iterations, rep.converged, rep.wall_time))
        estimates.append(rep.estimate)
    i = _select(rows, "fs")
    return GridResult(rows, rows[i], "fs", estimates[i])


def heldout_loglik(L: LaplacianSet, covariances: np.ndarray, counts: Sequence[int]) -> float:
    """Average Gaussian log-likelihood (up to constants) of held-out covariances."""
    c = np.asarray(counts, dtype=float)
    vals = [log_pseudo_determinant(g) - float(np.trace(S @ g.entries))
            for g, S in zip(L, covariances)]
    return float(np.dot(c / c.sum(), vals))


def split_dataset(data: SignalDataset, holdout: float = 0.2) -> tuple[SignalDataset, SignalDataset]:
    """Deterministic split: the trailing ``holdout`` fraction of every block."""
    train, test = [], []
    for X in data.blocks:
        n_test = max(1, int(round(holdout * X.shape[0])))
        if n_test >= X.shape[0]:
            raise ValueError("block too small to hold out samples")
        train.append(X[:-n_test])
        test.append(X[-n_test:])
    return SignalDataset(tuple(train)), SignalDataset(tuple(test))


def grid_search_heldout(data: SignalDataset, gram_spec: GramSpec, config: SolverConfig,
                        grid: Optional[Iterable[float]] = None, center: bool = True,
                        holdout: float = 0.2, truth: Optional[LaplacianSet] = None,
                        edge_threshold: float = EDGE_THRESHOLD) -> GridResult:
    """Pick ``rho_n`` by held-out log-likelihood (no ground truth needed)."""
    grid = default_grid() if grid is None else np.asarray(list(grid), dtype=float)
    train, test = split_dataset(data, holdout)
    S_train = sample_covariance(train, center=center)
    S_test = sample_covariance(test, center=center)
    pd = ProblemData.build(S_train, train.counts, build_gram(gram_spec))
    rows, estimates = [], []
    for rho_n in grid:
        rep = solve(pd, replace(config, rho_n=float(rho_n)))
        score = heldout_loglik(rep.estimate, S_test, test.counts)
        re = fs = float("nan")
        if truth is not None:
            m = evaluate(rep.estimate, truth, edge_threshold)
            re, fs = m.re, m.fs
        rows.append(GridRow(float(rho_n), re, fs, rep.iterations, rep.converged, rep.wall_time, score))
        estimates.append(rep.estimate)
    i = _select(rows, "heldout-loglik")
    return GridResult(rows, rows[i], "heldout-loglik", estimates[i])


@dataclass(frozen=True)
class BenchmarkRow:
    pattern: int
    penalty: str
    n_spec: str
    seed: int
    rho_n: float
    RE: float
    FS: float
    iters: int
    wall_time: float
    error: str = ""


def repetition_seed(base_seed: int, rep: int) -> int:
    """Sub-seed of repetition ``rep``; stable across worker counts."""
    return int(np.random.SeedSequence(int(base_seed), spawn_key=(rep,)).generate_state(1, np.uint64)[0]
               % (2 ** 63))


def run_repetition(pattern, penalties: Sequence[str], p: int, counts: Sequence[int], seed: int,
                   config: SolverConfig, grid: Optional[Sequence[float]] = None,
                   edge_threshold: float = EDGE_THRESHOLD,
                   pattern_overrides: Optional[dict] = None) -> list[BenchmarkRow]:
    """One Monte-Carlo draw: generate, then grid-search every penalty on the same data."""
    pattern = Pattern.parse(pattern)
    K = len(counts)
    n_spec = "(" + ",".join(str(int(c)) for c in counts) + ")"
    truth = generate_pattern(PatternSpec(pattern, p, K, seed, **(pattern_overrides or {})))
    data = sample_signals(truth, counts, seed)
    S = sample_covariance(data, center=False)
    rows = []
    for pen in penalties:
        spec = gram_spec_for(pen, K, pattern, ridge=config.ridge)
        t0 = time.perf_counter()
        res = grid_search(S, counts, truth, spec, config, grid, edge_threshold)
        rows.append(BenchmarkRow(pattern.index, PENALTY_LABELS[spec.kind], n_spec, seed,
                                 res.best.rho_n, res.best.re, res.best.fs,
                                 res.best.iters, time.perf_counter() - t0))
    return rows


def _safe_repetition(args) -> list[BenchmarkRow]:
    pattern, penalties, p, counts, seed, config, grid, thr, overrides = args
    try:
        return run_repetition(pattern, penalties, p, counts, seed, config, grid, thr, overrides)
    except Exception as exc:  # recorded per row, aggregated over successes
        logger.warning("repetition with seed %d failed: %s", seed, exc)
        n_spec = "(" + ",".join(str(int(c)) for c in counts) + ")"
        nan = float("nan")
        return [BenchmarkRow(Pattern.parse(pattern).index,
                             PENALTY_LABELS[GramKind.parse(pen)], n_spec, seed,
                             nan, nan, nan, 0, 0.0, f"{type(exc).__name__}: {exc}")
                for pen in penalties]


def run_benchmark(pattern, penalties: Sequence[str], p: int, counts: Sequence[int],
                  repetitions: int, seed: int, config: SolverConfig,
                  grid: Optional[Sequence[float]] = None, edge_threshold: float = EDGE_THRESHOLD,
                  jobs: int = 1, pattern_overrides: Optional[dict] = None) -> list[BenchmarkRow]:
    """All repetitions of one (pattern, sample sizes) setup, every penalty."""
    tasks = [(pattern, tuple(penalties), p, tuple(counts), repetition_seed(seed, r), config,
              None if grid is None else tuple(grid), edge_threshold, pattern_overrides)
             for r in range(repetitions)]
    if jobs > 1 and len(tasks) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_safe_repetition, tasks))
    else:
        results = [_safe_repetition(t) for t in tasks]
    return [row for rows in results for row in rows]


@dataclass(frozen=True)
class AggregateRow:
    pattern: int
    penalty: str
    n_spec: str
    RE_mean: float
    RE_std: float
    FS_mean: float
    FS_std: float
    successes: int
    failures: int


def aggregate(rows: Sequence[BenchmarkRow]) -> list[AggregateRow]:
    """Mean and standard deviation per (pattern, penalty, n) over successful rows."""
    groups: dict = {}
    for r in rows:
        groups.setdefault((r.pattern, r.penalty, r.n_spec), []).append(r)
    out = []
    for (pattern, penalty, n_spec), rs in groups.items():
        ok = [r for r in rs if not r.error]
        re = np.array([r.RE for r in ok])
        fs = np.array([r.FS for r in ok])
        nan = float("nan")
        out.append(AggregateRow(
            pattern, penalty, n_spec,
            float(re.mean()) if ok else nan, float(re.std()) if ok else nan,
            float(fs.mean()) if ok else nan, float(fs.std()) if ok else nan,
            len(ok), len(rs) - len(ok)))
    return out
