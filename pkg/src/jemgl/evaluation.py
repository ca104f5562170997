"""Estimation-quality metrics and the non-asymptotic error-bound calculator."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .graphcore import DimensionError, LaplacianSet, pseudo_inverse
from .penalty import GramMatrix

EDGE_THRESHOLD = 1e-2


class MetricError(ValueError):
    pass


def _stacks(est, truth) -> tuple[np.ndarray, np.ndarray]:
    A = est.stack if isinstance(est, LaplacianSet) else np.asarray(est, dtype=float)
    B = truth.stack if isinstance(truth, LaplacianSet) else np.asarray(truth, dtype=float)
    if A.shape != B.shape:
        raise DimensionError(f"estimate shape {A.shape} differs from truth shape {B.shape}")
    return A, B


def relative_error(est, truth) -> float:
    """Mean over graphs of ``||L_hat_k - L_k||_F / ||L_k||_F``."""
    A, B = _stacks(est, truth)
    denom = np.linalg.norm(B, axis=(1, 2))
    if np.any(denom == 0):
        raise MetricError("relative error undefined for an all-zero ground-truth graph")
    return float(np.mean(np.linalg.norm(A - B, axis=(1, 2)) / denom))


@dataclass(frozen=True)
class EdgeCounts:
    tp: int
    fp: int
    fn: int

    @property
    def f_score(self) -> float:
        # No edges in either graph counts as perfect recovery.
        if self.tp == self.fp == self.fn == 0:
            return 1.0
        return 2 * self.tp / (2 * self.tp + self.fn + self.fp)


def edge_set(L: np.ndarray, threshold: float = EDGE_THRESHOLD) -> np.ndarray:
    """Boolean mask over the upper triangle (i < j) of edges with ``|L_ij| > threshold``."""
    iu = np.triu_indices(L.shape[-1], k=1)
    return np.abs(L[..., iu[0], iu[1]]) > threshold


def edge_counts(est, truth, edge_threshold: float = EDGE_THRESHOLD) -> list[EdgeCounts]:
    A, B = _stacks(est, truth)
    out = []
    for a, b in zip(edge_set(A, edge_threshold), edge_set(B, edge_threshold)):
        out.append(EdgeCounts(int(np.sum(a & b)), int(np.sum(a & ~b)), int(np.sum(~a & b))))
    return out


def f_score(est, truth, edge_threshold: float = EDGE_THRESHOLD) -> float:
    """Mean over graphs of ``2 tp / (2 tp + fn + fp)``."""
    return float(np.mean([c.f_score for c in edge_counts(est, truth, edge_threshold)]))


@dataclass(frozen=True)
class MetricsReport:
    re: float
    fs: float
    tp: tuple[int, ...]
    fp: tuple[int, ...]
    fn: tuple[int, ...]
    edge_threshold: float

    def to_json(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def evaluate(est, truth, edge_threshold: float = EDGE_THRESHOLD) -> MetricsReport:
    counts = edge_counts(est, truth, edge_threshold)
    fs = float(np.mean([c.f_score for c in counts]))
    return MetricsReport(
        re=relative_error(est, truth),
        fs=fs,
        tp=tuple(c.tp for c in counts),
        fp=tuple(c.fp for c in counts),
        fn=tuple(c.fn for c in counts),
        edge_threshold=edge_threshold,
    )


@dataclass(frozen=True)
class BoundReport:
    kappa_J: float
    lambda_L: float
    nu: float
    s: int
    tau: float
    rho_n_recommended: float
    bound_value: float
    sample_size_floor: float

    def to_json(self) -> dict:
        return asdict(self)


def _pinv_diagonal(L: np.ndarray) -> np.ndarray:
    """Diagonal of ``L^+``; uses ``(L + 11^T/p)^-1 - 11^T/p`` on connected graphs."""
    p = L.shape[0]
    if np.linalg.eigvalsh(L)[1] > 1e-9 * max(1.0, float(np.abs(L).max())):
        M = np.full((p, p), 1.0 / p)
        return np.diag(np.linalg.inv(L + M)) - 1.0 / p
    return np.diag(pseudo_inverse(L))


def support_size(truth: LaplacianSet) -> int:
    """Ordered off-diagonal positions that are nonzero in at least one graph."""
    stack = truth.stack
    mask = ~np.eye(truth.p, dtype=bool)
    return int(np.count_nonzero(np.any(stack != 0, axis=0) & mask))


def theorem1_bound(truth: LaplacianSet, gram: GramMatrix, rho_pen: float, n: float, tau: float,
                   sample_counts: Optional[Sequence[int]] = None) -> BoundReport:
    """Evaluate the Frobenius error bound and its constants for a ground truth.

    Parameters
    ----------
    truth : LaplacianSet
        True Laplacians ``L_k*``.
    gram : GramMatrix
        Gram matrix of the fusion penalty.
    rho_pen : float
        Weight of the group term in the penalty.
    n : float
        Total sample size.
    tau : float
        In ``(0, 1)``; when ``sample_counts`` is given it must also be below
        ``min_k n_k / n``.
    """
    if truth.K != gram.K:
        raise DimensionError(f"{truth.K} graphs but a {gram.K}x{gram.K} Gram matrix")
    if not 0 < tau < 1:
        raise ValueError("tau must lie in (0, 1)")
    if n <= 0:
        raise ValueError("n must be positive")
    if sample_counts is not None:
        c = np.asarray(sample_counts, dtype=float)
        if tau >= c.min() / c.sum():
            raise ValueError("tau must be below min_k n_k / n")
    K, p = truth.K, truth.p
    smin, smax = gram.sigma_min, gram.sigma_max
    fusion = 1.0 + smin * math.sqrt(K)
    kappa = fusion * (1.0 + rho_pen * math.sqrt(smax))
    lam = max(float(np.linalg.norm(g.entries, 2)) for g in truth)
    nu = max(float(np.max(_pinv_diagonal(g.entries))) for g in truth)
    s = support_size(truth)
    lnp = math.log(p)
    c = 40.0 * math.sqrt(2.0) * nu
    rho_n = 2.0 * fusion * (1.0 / p + c * math.sqrt(lnp / (n * tau)))
    bound = 24.0 * kappa * lam ** 2 * tau ** -1.5 * (math.sqrt(s) / p + c * math.sqrt(s * lnp / n))
    floor = max(2.0 * lnp / tau,
                2 ** 13 * 15 ** 2 * lam ** 2 * kappa ** 2 * nu ** 2 * s * lnp / tau ** 3)
    return BoundReport(kappa, lam, nu, s, tau, rho_n, bound, floor)
