"""Synthetic ground truth, graph-signal sampling and dataset I/O.

Random numbers come from numpy's Philox generator (counter based, 64-bit
keys).  Independent streams are derived with ``SeedSequence(seed,
spawn_key=...)`` so every graph/block can be regenerated on its own.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .graphcore import (
    RANK_TOL,
    DimensionError,
    GraphLaplacian,
    LaplacianSet,
    read_matrix_csv,
    symmetrize,
    write_matrix_csv,
)

MAX_RETRIES = 1000
CONNECTIVITY_TOL = 1e-9


class GenerationError(RuntimeError):
    pass


class DatasetError(ValueError):
    pass


def rng(seed: int, *key: int) -> np.random.Generator:
    """Philox stream for ``seed`` and an optional spawn key."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


class Pattern(str, enum.Enum):
    COMMON_PLUS_UNIQUE = "CommonPlusUnique"
    TIME_VARYING_DOWNSAMPLE = "TimeVaryingDownsample"
    MODULAR_SHARED = "ModularShared"

    @classmethod
    def parse(cls, value) -> "Pattern":
        if isinstance(value, cls):
            return value
        by_index = {"1": cls.COMMON_PLUS_UNIQUE, "2": cls.TIME_VARYING_DOWNSAMPLE,
                    "3": cls.MODULAR_SHARED}
        s = str(value)
        if s in by_index:
            return by_index[s]
        for member in cls:
            if member.value.lower() == s.lower():
                return member
        raise ValueError(f"unknown pattern {value!r}")

    @property
    def index(self) -> int:
        return list(Pattern).index(self) + 1


@dataclass(frozen=True)
class PatternSpec:
    pattern: Pattern
    p: int
    K: int = 3
    seed: int = 0
    edge_prob: Optional[float] = None  # 0.2 for pattern 1, 0.3 for pattern 2
    unique_fraction: float = 0.05
    perturb_range: tuple[float, float] = (0.5, 1.0)
    clip_max: float = 2.0
    downsample_fraction: float = 0.10
    n_modules: int = 3
    p_within: float = 0.5
    p_across: float = 0.1
    weight_range: tuple[float, float] = (0.75, 2.0)
    max_retries: int = MAX_RETRIES

    def __post_init__(self):
        object.__setattr__(self, "pattern", Pattern.parse(self.pattern))
        if self.edge_prob is None:
            default = 0.3 if self.pattern is Pattern.TIME_VARYING_DOWNSAMPLE else 0.2
            object.__setattr__(self, "edge_prob", default)
        if self.p < 3:
            raise DimensionError("patterns need p >= 3")
        if self.K < 1:
            raise DimensionError("K must be positive")
        for name in ("edge_prob", "unique_fraction", "downsample_fraction", "p_within", "p_across"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        lo, hi = self.weight_range
        if not 0 <= lo <= hi:
            raise ValueError("invalid weight range")
        if self.pattern is Pattern.MODULAR_SHARED and self.n_modules > self.p:
            raise ValueError("more modules than nodes")

    def to_json(self) -> dict:
        out = {}
        for k in self.__dataclass_fields__:
            v = getattr(self, k)
            out[k] = v.value if isinstance(v, Pattern) else (list(v) if isinstance(v, tuple) else v)
        return out


def _er_adjacency(gen: np.random.Generator, p: int, prob: float, weight_range) -> np.ndarray:
    iu = np.triu_indices(p, k=1)
    present = gen.random(iu[0].size) < prob
    weights = gen.uniform(*weight_range, size=iu[0].size)
    W = np.zeros((p, p))
    W[iu] = np.where(present, weights, 0.0)
    return W + W.T


def _common_plus_unique(spec: PatternSpec, gen: np.random.Generator) -> list[np.ndarray]:
    p = spec.p
    Wc = _er_adjacency(gen, p, spec.edge_prob, spec.weight_range)
    iu = np.triu_indices(p, k=1)
    n_pairs = iu[0].size
    n_pick = math.ceil(spec.unique_fraction * n_pairs - 1e-12)
    lo, hi = spec.perturb_range
    out = []
    for _ in range(spec.K):
        U = np.zeros((p, p))
        if n_pick:
            chosen = gen.choice(n_pairs, size=n_pick, replace=False)
            mag = gen.uniform(lo, hi, size=n_pick)
            sign = np.where(gen.random(n_pick) < 0.5, -1.0, 1.0)
            U[iu[0][chosen], iu[1][chosen]] = sign * mag
            U = U + U.T
        out.append(np.clip(Wc + U, 0.0, spec.clip_max))
    return out


def _time_varying(spec: PatternSpec, gen: np.random.Generator) -> list[np.ndarray]:
    p = spec.p
    W = _er_adjacency(gen, p, spec.edge_prob, spec.weight_range)
    out = [W]
    for _ in range(1, spec.K):
        W = W.copy()
        iu = np.triu_indices(p, k=1)
        edges = np.flatnonzero(W[iu] > 0)
        n_drop = int(round(spec.downsample_fraction * edges.size))
        if n_drop:
            drop = gen.choice(edges, size=n_drop, replace=False)
            W[iu[0][drop], iu[1][drop]] = 0.0
            W[iu[1][drop], iu[0][drop]] = 0.0
        out.append(W)
    return out


def module_labels(p: int, n_modules: int) -> np.ndarray:
    """Contiguous, near-equal module assignment of the nodes."""
    return np.repeat(np.arange(n_modules), [len(c) for c in np.array_split(np.arange(p), n_modules)])


def _modular(spec: PatternSpec, gen: np.random.Generator) -> list[np.ndarray]:
    p = spec.p
    labels = module_labels(p, spec.n_modules)
    same = labels[:, None] == labels[None, :]
    prob = np.where(same, spec.p_within, spec.p_across)
    iu = np.triu_indices(p, k=1)
    present = gen.random(iu[0].size) < prob[iu]
    weights = gen.uniform(*spec.weight_range, size=iu[0].size)
    base = np.zeros((p, p))
    base[iu] = np.where(present, weights, 0.0)
    base = base + base.T
    # Graph "middle" is the full modular graph; the first and last graphs each
    # lose the internal edges of one (distinct) module.
    K = spec.K
    dropped = gen.permutation(spec.n_modules)
    out = []
    for k in range(K):
        W = base.copy()
        if K > 1 and k in (0, K - 1):
            m = dropped[0] if k == 0 else dropped[1 % spec.n_modules]
            inside = np.outer(labels == m, labels == m)
            W[inside] = 0.0
        out.append(W)
    return out


_BUILDERS = {
    Pattern.COMMON_PLUS_UNIQUE: _common_plus_unique,
    Pattern.TIME_VARYING_DOWNSAMPLE: _time_varying,
    Pattern.MODULAR_SHARED: _modular,
}


def is_connected(W: np.ndarray) -> bool:
    L = np.diag(W.sum(axis=1)) - W
    return bool(np.linalg.eigvalsh(L)[1] > CONNECTIVITY_TOL)


def generate_pattern(spec: PatternSpec) -> LaplacianSet:
    """Draw a connected ground-truth set of K Laplacians for ``spec``.

    Raises
    ------
    GenerationError
        If no draw with every graph connected is found within
        ``spec.max_retries`` attempts.
    """
    build = _BUILDERS[spec.pattern]
    for attempt in range(spec.max_retries):
        gen = rng(spec.seed, 0, attempt)
        adj = build(spec, gen)
        if all(is_connected(W) for W in adj):
            return LaplacianSet(tuple(GraphLaplacian.from_adjacency(W) for W in adj))
    raise GenerationError(
        f"{spec.pattern.value}: no connected draw in {spec.max_retries} attempts (seed {spec.seed})")


@dataclass(frozen=True, eq=False)
class SignalDataset:
    blocks: tuple[np.ndarray, ...]
    means: Optional[tuple[np.ndarray, ...]] = None

    def __post_init__(self):
        blocks = tuple(np.atleast_2d(np.asarray(b, dtype=float)) for b in self.blocks)
        if not blocks:
            raise DatasetError("dataset has no blocks")
        if len({b.shape[1] for b in blocks}) != 1:
            raise DatasetError("blocks have different signal dimensions")
        for b in blocks:
            if not np.all(np.isfinite(b)):
                raise DatasetError("non-finite sample values")
            b.setflags(write=False)
        object.__setattr__(self, "blocks", blocks)

    @property
    def K(self) -> int:
        return len(self.blocks)

    @property
    def p(self) -> int:
        return self.blocks[0].shape[1]

    @property
    def counts(self) -> tuple[int, ...]:
        return tuple(b.shape[0] for b in self.blocks)


def sample_signals(truth: LaplacianSet, counts: Sequence[int], seed: int,
                   rank_tol: float = RANK_TOL) -> SignalDataset:
    """Draw ``x ~ N(0, L_k^+)`` for every graph.

    Each sample is ``U_+ diag(lam_+)^(-1/2) z`` with ``z`` standard normal, so
    it lies exactly in the range of ``L_k``.
    """
    counts = [int(c) for c in counts]
    if len(counts) != truth.K:
        raise DimensionError(f"{truth.K} graphs but {len(counts)} sample counts")
    if min(counts) < 1:
        raise DimensionError("sample counts must be positive")
    blocks = []
    for k, (g, n_k) in enumerate(zip(truth, counts)):
        evals, U = np.linalg.eigh(g.entries)
        keep = evals > rank_tol * evals.max()
        A = U[:, keep] / np.sqrt(evals[keep])
        z = rng(seed, 1, k).standard_normal((n_k, int(keep.sum())))
        X = z @ A.T
        # Remove the rounding-level component along the ones vector.
        X -= X.mean(axis=1, keepdims=True)
        blocks.append(X)
    return SignalDataset(tuple(blocks))


def sample_covariance(data: SignalDataset, center: bool = False) -> np.ndarray:
    """Per-block ``(1/n_k) sum (x - m)(x - m)^T``; returns shape (K, p, p)."""
    covs = []
    for X in data.blocks:
        if X.shape[0] < 1:
            raise DatasetError("empty block")
        Xc = X - X.mean(axis=0) if center else X
        covs.append(symmetrize(Xc.T @ Xc / X.shape[0]))
    return np.stack(covs)


# -- on-disk layout -------------------------------------------------------

MANIFEST = "manifest.json"


def block_name(k: int) -> str:
    return f"block_{k}.csv"


def truth_name(k: int) -> str:
    return f"truth_{k}.csv"


def save_dataset(path, data: SignalDataset, truth: Optional[LaplacianSet] = None,
                 seed: Optional[int] = None, pattern=None, extra: Optional[dict] = None) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest = {"p": data.p, "K": data.K, "counts": list(data.counts), "seed": seed,
                "pattern": pattern}
    if extra:
        manifest.update(extra)
    for k, X in enumerate(data.blocks):
        write_matrix_csv(path / block_name(k), X)
    if truth is not None:
        for k, g in enumerate(truth):
            write_matrix_csv(path / truth_name(k), g.entries)
    (path / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


@dataclass
class LoadedDataset:
    data: SignalDataset
    truth: Optional[LaplacianSet]
    manifest: dict = field(default_factory=dict)


def load_dataset(path) -> LoadedDataset:
    path = Path(path)
    try:
        manifest = json.loads((path / MANIFEST).read_text())
        K, p = int(manifest["K"]), int(manifest["p"])
    except (OSError, ValueError, KeyError) as exc:
        raise DatasetError(f"cannot read manifest in {path}: {exc}") from exc
    blocks = []
    for k in range(K):
        try:
            X = read_matrix_csv(path / block_name(k))
        except (OSError, ValueError) as exc:
            raise DatasetError(f"cannot read {block_name(k)}: {exc}") from exc
        if X.shape[1] != p:
            raise DatasetError(f"{block_name(k)} has {X.shape[1]} columns, expected {p}")
        blocks.append(X)
    counts = manifest.get("counts")
    if counts is not None and [b.shape[0] for b in blocks] != list(counts):
        raise DatasetError("block sizes disagree with manifest counts")
    truth = None
    if all((path / truth_name(k)).exists() for k in range(K)):
        try:
            truth = LaplacianSet.from_arrays([read_matrix_csv(path / truth_name(k)) for k in range(K)])
        except ValueError as exc:
            raise DatasetError(f"invalid ground truth: {exc}") from exc
        if truth.p != p:
            raise DatasetError("ground truth dimension differs from blocks")
    return LoadedDataset(SignalDataset(tuple(blocks)), truth, manifest)
