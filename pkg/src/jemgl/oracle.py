"""Slow reference minimizer for tiny instances (test use only).

Plain projected subgradient descent on the penalized objective, written
against the edge weights ``w_k >= 0`` of each graph (``L_k = D(w_k) - W(w_k)``)
so that every iterate is a Laplacian by construction.  Nothing here is
shared with :mod:`jemgl.solver`; only the problem data are common.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .graphcore import LaplacianSet
from .solver import ProblemData

MAX_P = 8
MAX_K = 3


class InstanceTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class OracleConfig:
    """Step ``step_scale * ||w_0|| / sqrt(t)`` along the normalized subgradient.

    Every ``window`` steps the best value is compared with the previous
    checkpoint.  A relative gain below ``tol`` restarts the run from the best
    point with half the step; ``max_halvings`` such restarts end it.
    """

    step_scale: float = 0.05
    max_iter: int = 400_000
    tol: float = 1e-7
    window: int = 2_000
    max_halvings: int = 6

    def __post_init__(self):
        if (self.step_scale <= 0 or self.max_iter < 1 or self.tol <= 0 or self.window < 1
                or self.max_halvings < 0):
            raise ValueError("oracle parameters must be positive")


@dataclass(frozen=True)
class OracleResult:
    estimate: LaplacianSet
    objective: float
    iterations: int


class _Problem:
    def __init__(self, data: ProblemData, rho_n: float, rho_pen: float):
        S = data.covariances
        self.K, self.p = data.K, data.p
        self.iu = np.triu_indices(self.p, k=1)
        i, j = self.iu
        self.wts = data.weights
        self.dS = S[:, i, i] + S[:, j, j] - 2.0 * S[:, i, j]
        self.M = np.full((self.p, self.p), 1.0 / self.p)
        self.rho_n = rho_n
        self.lam = 0.0 if data.gram.is_zero else rho_n * rho_pen
        self.J = data.gram.factor

    def laplacians(self, w: np.ndarray) -> np.ndarray:
        W = np.zeros((self.K, self.p, self.p))
        W[:, self.iu[0], self.iu[1]] = w
        W = W + np.swapaxes(W, 1, 2)
        L = -W
        idx = np.arange(self.p)
        L[:, idx, idx] = W.sum(axis=2)
        return L

    def value(self, w: np.ndarray) -> float:
        # trace(S L) = sum_edges w_e (S_ii + S_jj - 2 S_ij); the l1 term counts
        # each undirected edge twice.
        sign, logdet = np.linalg.slogdet(self.laplacians(w) + self.M)
        if np.any(sign <= 0) or not np.all(np.isfinite(logdet)):
            return np.inf
        v = float(np.dot(self.wts, -logdet + np.sum(w * self.dS, axis=1)))
        v += 2.0 * self.rho_n * float(w.sum())
        if self.lam > 0:
            v += 2.0 * self.lam * float(np.linalg.norm(self.J @ w, axis=0).sum())
        return v

    def subgradient(self, w: np.ndarray) -> np.ndarray:
        i, j = self.iu
        Zinv = np.linalg.inv(self.laplacians(w) + self.M)
        dZ = Zinv[:, i, i] + Zinv[:, j, j] - 2.0 * Zinv[:, i, j]
        g = self.wts[:, None] * (self.dS - dZ) + 2.0 * self.rho_n
        if self.lam > 0:
            Jw = self.J @ w
            norms = np.linalg.norm(Jw, axis=0)
            safe = np.where(norms > 0, norms, 1.0)
            # minimum-norm subgradient (zero) where the group vanishes
            g += 2.0 * self.lam * np.where(norms > 0, (self.J.T @ Jw) / safe, 0.0)
        return g


def _default_start(data: ProblemData) -> np.ndarray:
    """Complete graphs scaled so that ``tr(S_k L_k)`` is about ``p - 1``."""
    p = data.p
    m = p * (p - 1) // 2
    scale = [(p - 1) / (p * max(np.trace(S), 1e-12)) for S in data.covariances]
    return np.repeat(np.asarray(scale)[:, None], m, axis=1)


def oracle_solve(data: ProblemData, rho_n: float, rho_pen: float = 1.0,
                 config: Optional[OracleConfig] = None,
                 start: Optional[np.ndarray] = None) -> OracleResult:
    """Best feasible iterate of projected subgradient descent.

    Parameters
    ----------
    data : ProblemData
        At most 8 nodes and 3 graphs.
    rho_n, rho_pen : float
        Regularization strength and group-term weight.
    start : array of shape (K, p(p-1)/2), optional
        Initial nonnegative edge weights (must give connected graphs).
    """
    config = config or OracleConfig()
    if data.p > MAX_P or data.K > MAX_K:
        raise InstanceTooLarge(f"oracle limited to p <= {MAX_P}, K <= {MAX_K}")
    prob = _Problem(data, rho_n, rho_pen)
    w = _default_start(data) if start is None else np.maximum(np.asarray(start, dtype=float), 0.0)
    f = prob.value(w)
    if not np.isfinite(f):
        raise ValueError("starting point is not in the domain (disconnected graph)")
    best_f, best_w = f, w.copy()
    step0 = config.step_scale * float(np.linalg.norm(w))
    checkpoint = best_f
    halvings, t_local, t = 0, 0, 0
    for t in range(1, int(config.max_iter) + 1):
        t_local += 1
        g = prob.subgradient(w)
        gnorm = float(np.linalg.norm(g))
        if gnorm == 0.0:
            break
        step = step0 / np.sqrt(t_local)
        while True:
            cand = np.maximum(w - (step / gnorm) * g, 0.0)
            f = prob.value(cand)
            if np.isfinite(f):
                break
            step *= 0.5
        w = cand
        if f < best_f:
            best_f, best_w = f, w.copy()
        if t % config.window == 0:
            if checkpoint - best_f <= config.tol * max(1.0, abs(best_f)):
                halvings += 1
                if halvings > config.max_halvings:
                    break
                step0 *= 0.5
                t_local = 0
                w = best_w.copy()
            checkpoint = best_f
    est = LaplacianSet.from_arrays(list(prob.laplacians(best_w)))
    return OracleResult(est, float(best_f), t)
