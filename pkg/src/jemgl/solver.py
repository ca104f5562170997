"""ADMM solver for jointly estimating K graph Laplacians.

Problem (weights ``w_k = n_k / n``)::

    min  sum_k w_k [ -log det(L_k + 11^T/p) + tr(S_k L_k) ]
         + rho_n sum_k ||L_k||_1,off + rho_n rho_pen sum_{i != j} ||J L_ij||_2
    s.t. every L_k is a combinatorial graph Laplacian.

``L_k`` is written as ``P Xi_k P^T`` with ``P`` an orthonormal basis of the
complement of the ones vector, which takes care of the zero row sums and
the semi-definiteness.  Two consensus copies carry the rest: ``B_k`` holds
the sign constraints and ``z_ij = J a_ij`` the group penalty.  ``E`` and
``F`` are the (unscaled) multipliers of ``P Xi_k P^T = B_k`` and
``J a_ij = J b_ij``.

All per-pair quantities are stored as (K, p, p) stacks whose (i, j) fibre is
the K-vector of that pair; the diagonal of ``Z`` and ``F`` is unused.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence, TextIO

import numpy as np

from .graphcore import (
    RANK_TOL,
    ComplementBasis,
    DimensionError,
    LaplacianSet,
    complement_basis,
    symmetrize,
)
from .penalty import DEFAULT_RIDGE, GramMatrix

logger = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    pass


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class AdaptiveRho:
    mu: float = 10.0
    tau_incr: float = 2.0
    tau_decr: float = 2.0
    enabled: bool = True

    def __post_init__(self):
        if not (self.mu > 1 and self.tau_incr > 1 and self.tau_decr > 1):
            raise ConfigError("adaptive rho needs mu, tau_incr, tau_decr > 1")


@dataclass(frozen=True)
class SolverConfig:
    """Solver parameters.

    ``rho_n`` is the regularization strength, ``rho_pen`` the weight of the
    Gram-coupled group term inside the penalty and ``rho_admm_init`` the
    initial ADMM penalty.  ``b_update`` selects how the sign-constrained
    B-subproblem is solved: ``"exact"`` solves the small box-constrained QP
    per edge, ``"clip"`` clips the unconstrained minimizer (the two agree
    whenever ``I + Jt`` is diagonal).
    """

    rho_n: float = 0.1
    rho_pen: float = 1.0
    rho_admm_init: float = 1.0
    tol_change: float = 1e-3
    max_iter: int = 10000
    adaptive_rho: AdaptiveRho = field(default_factory=AdaptiveRho)
    rank_tol: float = RANK_TOL
    ridge: float = DEFAULT_RIDGE
    b_update: str = "exact"

    def __post_init__(self):
        if self.rho_n < 0 or self.rho_pen < 0:
            raise ConfigError("rho_n and rho_pen must be nonnegative")
        if self.rho_admm_init <= 0 or self.tol_change <= 0:
            raise ConfigError("rho_admm_init and tol_change must be positive")
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise ConfigError("max_iter must be a positive integer")
        if self.b_update not in ("exact", "clip"):
            raise ConfigError(f"unknown b_update method {self.b_update!r}")

    def to_json(self) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "adaptive_rho"}
        a = self.adaptive_rho
        out["adaptive_rho"] = {"mu": a.mu, "tau_incr": a.tau_incr, "tau_decr": a.tau_decr, "enabled": a.enabled}
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "SolverConfig":
        obj = dict(obj)
        if "adaptive_rho" in obj:
            obj["adaptive_rho"] = AdaptiveRho(**obj["adaptive_rho"])
        return cls(**obj)


@dataclass(frozen=True, eq=False)
class ProblemData:
    covariances: np.ndarray  # (K, p, p)
    sample_counts: tuple[int, ...]
    gram: GramMatrix
    basis: ComplementBasis

    @classmethod
    def build(cls, covariances, sample_counts: Sequence[int], gram: GramMatrix) -> "ProblemData":
        S = np.asarray(covariances, dtype=float)
        if S.ndim == 2:
            S = S[None]
        if S.ndim != 3 or S.shape[1] != S.shape[2]:
            raise DimensionError(f"covariances must have shape (K, p, p), got {S.shape}")
        K, p, _ = S.shape
        counts = tuple(int(n) for n in sample_counts)
        if len(counts) != K:
            raise DimensionError(f"{K} covariances but {len(counts)} sample counts")
        if min(counts) <= 0:
            raise DimensionError("sample counts must be positive")
        if gram.K != K:
            raise DimensionError(f"Gram matrix is {gram.K}x{gram.K} but K={K}")
        if np.max(np.abs(S - np.swapaxes(S, 1, 2))) > 1e-10:
            raise DimensionError("covariances must be symmetric")
        S = symmetrize(S)
        S.setflags(write=False)
        return cls(S, counts, gram, complement_basis(p))

    @property
    def K(self) -> int:
        return self.covariances.shape[0]

    @property
    def p(self) -> int:
        return self.covariances.shape[1]

    @property
    def n(self) -> int:
        return sum(self.sample_counts)

    @property
    def weights(self) -> np.ndarray:
        """Likelihood weights ``n_k / n``."""
        c = np.asarray(self.sample_counts, dtype=float)
        return c / c.sum()

    def Q(self, rho_n: float) -> np.ndarray:
        """``Q_k = S_k + (n rho_n / n_k)(I - 11^T)``."""
        p = self.p
        H = np.eye(p) - np.ones((p, p))
        scale = rho_n / self.weights
        return self.covariances + scale[:, None, None] * H


@dataclass
class SolverState:
    Xi: np.ndarray  # (K, p-1, p-1)
    Z: np.ndarray  # (K, p, p), z_ij = J a_ij
    B: np.ndarray  # (K, p, p)
    E: np.ndarray  # (K, p, p)
    F: np.ndarray  # (K, p, p), f_ij
    iter: int = 0
    rho_admm: float = 1.0

    @classmethod
    def initial(cls, K: int, p: int, rho_admm: float) -> "SolverState":
        z = np.zeros((K, p, p))
        Xi = np.broadcast_to(np.eye(p - 1), (K, p - 1, p - 1)).copy()
        return cls(Xi, z.copy(), z.copy(), z.copy(), z.copy(), 0, float(rho_admm))

    def copy(self) -> "SolverState":
        return SolverState(
            self.Xi.copy(), self.Z.copy(), self.B.copy(), self.E.copy(), self.F.copy(),
            self.iter, self.rho_admm,
        )

    def laplacians(self, basis: ComplementBasis) -> np.ndarray:
        P = basis.matrix
        return symmetrize(P @ self.Xi @ P.T)


@dataclass(frozen=True)
class SolverReport:
    estimate: LaplacianSet
    objective_trace: tuple[float, ...]
    primal_residual: float
    dual_residual: float
    iterations: int
    converged: bool
    wall_time: float
    objective: float
    rho_admm: float
    state: Optional[SolverState] = field(default=None, repr=False, compare=False)

    def to_json(self) -> dict:
        return {
            "objective": self.objective,
            "iterations": self.iterations,
            "converged": self.converged,
            "primal_residual": self.primal_residual,
            "dual_residual": self.dual_residual,
            "rho_admm": self.rho_admm,
            "wall_time": self.wall_time,
            "objective_trace": list(self.objective_trace),
        }


def _offdiag_mask(p: int) -> np.ndarray:
    return ~np.eye(p, dtype=bool)


def _apply(M: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Apply a K x K matrix to every (i, j) fibre of a (K, p, p) stack."""
    return np.einsum("kl,lij->kij", M, X)


def objective(L, data: ProblemData, config: SolverConfig) -> float:
    """Penalized negative log-likelihood of a set of Laplacians."""
    stack = L.stack if isinstance(L, LaplacianSet) else np.asarray(L, dtype=float)
    if stack.shape != data.covariances.shape:
        raise DimensionError(f"expected shape {data.covariances.shape}, got {stack.shape}")
    p = data.p
    M = np.full((p, p), 1.0 / p)
    sign, logdet = np.linalg.slogdet(stack + M)
    if np.any(sign <= 0) or not np.all(np.isfinite(logdet)):
        raise NumericalError("objective undefined: L_k + 11^T/p is singular")
    traces = np.einsum("kij,kji->k", data.covariances, stack)
    w = data.weights
    value = float(np.dot(w, -logdet + traces))
    mask = _offdiag_mask(p)
    off = stack[:, mask]
    value += config.rho_n * float(np.abs(off).sum())
    if not data.gram.is_zero and config.rho_pen > 0:
        JL = data.gram.factor @ off
        value += config.rho_n * config.rho_pen * float(np.linalg.norm(JL, axis=0).sum())
    return value


def xi_diagonal(evals: np.ndarray, rho: float, w) -> np.ndarray:
    """Positive root of ``rho d^2 + rho lam d - w = 0``, evaluated stably."""
    w = np.broadcast_to(np.asarray(w, dtype=float), evals.shape[:-1])[..., None]
    root = np.sqrt(rho * rho * evals * evals + 4.0 * rho * w)
    pos = evals > 0
    out = np.empty_like(evals)
    out[~pos] = ((-rho * evals + root) / (2.0 * rho))[~pos]
    out[pos] = (2.0 * w / (rho * evals + root))[pos]
    return out


def xi_update(state: SolverState, data: ProblemData, config: SolverConfig) -> np.ndarray:
    """Closed-form Xi step.

    For each k, with ``S_k = P^T (w_k Q_k + E_k - rho B_k) P / rho = V diag(lam) V^T``,
    returns ``V diag(d) V^T`` where ``d`` solves ``rho d - w_k / d + rho lam = 0``.
    """
    rho = state.rho_admm
    P = data.basis.matrix
    w = data.weights
    G = w[:, None, None] * data.Q(config.rho_n) + state.E - rho * state.B
    S = symmetrize(P.T @ G @ P) / rho
    try:
        evals, V = np.linalg.eigh(S)
    except np.linalg.LinAlgError as exc:
        bad = [k for k in range(data.K) if not np.all(np.isfinite(S[k]))]
        raise NumericalError(f"eigendecomposition failed for graph(s) {bad or '?'}") from exc
    D = xi_diagonal(evals, rho, w)
    return symmetrize((V * D[:, None, :]) @ np.swapaxes(V, 1, 2))


def group_shrink(V: np.ndarray, threshold: float) -> np.ndarray:
    """Block soft-threshold along axis 0: ``[1 - t / ||v||]_+ v``."""
    norms = np.linalg.norm(V, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(norms > threshold, 1.0 - threshold / norms, 0.0)
    return V * scale


def a_update(state: SolverState, data: ProblemData, config: SolverConfig) -> np.ndarray:
    """Group soft-threshold of ``J b_ij - f_ij / rho`` at ``rho_n rho_pen / rho``."""
    p = data.p
    if data.gram.is_zero:
        return np.zeros((data.K, p, p))
    rho = state.rho_admm
    V = _apply(data.gram.factor, state.B) - state.F / rho
    Z = group_shrink(V, config.rho_n * config.rho_pen / rho)
    Z[:, np.arange(p), np.arange(p)] = 0.0
    return Z


def nonpositive_qp(H: np.ndarray, C: np.ndarray, X0: Optional[np.ndarray] = None,
                   tol: float = 1e-14, max_sweeps: int = 1000) -> np.ndarray:
    """Solve ``min 0.5 x^T H x - c^T x  s.t. x <= 0`` for every column of C.

    Cyclic coordinate descent, vectorized over columns.  ``H`` must be
    positive definite; ``C`` has shape (K, m).
    """
    K = H.shape[0]
    X = np.minimum(np.linalg.solve(H, C), 0.0) if X0 is None else X0.copy()
    hdiag = np.diag(H)
    for _ in range(max_sweeps):
        delta = 0.0
        for k in range(K):
            r = C[k] - H[k] @ X + hdiag[k] * X[k]
            new = np.minimum(r / hdiag[k], 0.0)
            delta = max(delta, float(np.max(np.abs(new - X[k]), initial=0.0)))
            X[k] = new
        if delta <= tol:
            break
    return X


def b_update(state: SolverState, L: np.ndarray, Z: np.ndarray, data: ProblemData,
             config: SolverConfig) -> np.ndarray:
    """Sign-constrained consensus step.

    Diagonal entries: ``[e_ii / rho + l_ii]_+``.  Off-diagonal fibres minimize
    ``0.5 b^T (I + Jt) b - c^T b`` over ``b <= 0`` with
    ``c = e_ij / rho + J^T f_ij / rho + l_ij + J^T z_ij``.
    """
    rho = state.rho_admm
    K, p = data.K, data.p
    gram = data.gram
    C = state.E / rho + L
    if not gram.is_zero:
        Jt = gram.factor.T
        C = C + _apply(Jt, state.F) / rho + _apply(Jt, Z)
    B = np.empty_like(C)
    idx = np.arange(p)
    B[:, idx, idx] = np.maximum(C[:, idx, idx], 0.0)

    iu = np.triu_indices(p, k=1)
    # Fibres are symmetric up to rounding; solve each unordered pair once.
    Cu = 0.5 * (C[:, iu[0], iu[1]] + C[:, iu[1], iu[0]])
    H = np.eye(K) + gram.gram
    if gram.is_zero:
        Bu = np.minimum(Cu, 0.0)
    elif config.b_update == "clip" or np.count_nonzero(H - np.diag(np.diag(H))) == 0:
        Bu = np.minimum(np.linalg.solve(H, Cu), 0.0)
    else:
        X0 = np.minimum(state.B[:, iu[0], iu[1]], 0.0)
        Bu = nonpositive_qp(H, Cu, X0)
    B[:, iu[0], iu[1]] = Bu
    B[:, iu[1], iu[0]] = Bu
    return B


def dual_update(state: SolverState, L: np.ndarray, Z: np.ndarray, B: np.ndarray,
                data: ProblemData) -> tuple[np.ndarray, np.ndarray]:
    rho = state.rho_admm
    E = state.E + rho * (L - B)
    if data.gram.is_zero:
        return E, state.F
    F = state.F + rho * (Z - _apply(data.gram.factor, B))
    p = data.p
    F[:, np.arange(p), np.arange(p)] = 0.0
    return E, F


def residuals(L: np.ndarray, Z: np.ndarray, B: np.ndarray, B_old: np.ndarray,
              data: ProblemData, rho: float) -> tuple[float, float]:
    """Primal and dual residual norms over both constraint blocks."""
    primal_sq = float(np.sum((L - B) ** 2))
    dB = B - B_old
    dual_sq = float(np.sum(dB ** 2))
    if not data.gram.is_zero:
        mask = _offdiag_mask(data.p)
        J = data.gram.factor
        primal_sq += float(np.sum((Z - _apply(J, B))[:, mask] ** 2))
        dual_sq += float(np.sum(_apply(J, dB)[:, mask] ** 2))
    return float(np.sqrt(primal_sq)), rho * float(np.sqrt(dual_sq))


def adapt_rho(rho: float, primal: float, dual: float, config: SolverConfig) -> float:
    """Residual balancing.

    The multipliers E and F are kept unscaled, so a change of rho needs no
    rescaling of them (the scaled duals E / rho, F / rho are implicitly
    divided by ``tau_incr`` or multiplied by ``tau_decr``).
    """
    a = config.adaptive_rho
    if not a.enabled:
        return rho
    if primal > a.mu * dual:
        return rho * a.tau_incr
    if dual > a.mu * primal:
        return rho / a.tau_decr
    return rho


def finalize(L: np.ndarray) -> np.ndarray:
    """Clip positive off-diagonals and rebuild the diagonal from the rows."""
    p = L.shape[-1]
    out = np.minimum(symmetrize(L), 0.0)
    idx = np.arange(p)
    out[:, idx, idx] = 0.0
    out[:, idx, idx] = -out.sum(axis=2)
    return out


def _objective_from_xi(Xi_evals: np.ndarray, L: np.ndarray, data: ProblemData,
                       config: SolverConfig) -> float:
    """Objective of ``L = P Xi P^T`` given the eigenvalues of Xi."""
    w = data.weights
    logdet = np.sum(np.log(Xi_evals), axis=1)
    traces = np.einsum("kij,kji->k", data.covariances, L)
    value = float(np.dot(w, -logdet + traces))
    mask = _offdiag_mask(data.p)
    off = L[:, mask]
    value += config.rho_n * float(np.abs(off).sum())
    if not data.gram.is_zero and config.rho_pen > 0:
        value += config.rho_n * config.rho_pen * float(
            np.linalg.norm(data.gram.factor @ off, axis=0).sum())
    return value


def solve(data: ProblemData, config: SolverConfig, init: Optional[SolverState] = None,
          trace: Optional[TextIO] = None,
          callback: Optional[Callable[[dict], None]] = None) -> SolverReport:
    """Run the ADMM iterations until the Laplacian iterates stop moving.

    Parameters
    ----------
    data : ProblemData
    config : SolverConfig
    init : SolverState, optional
        Starting point; defaults to ``Xi_k = I`` and zero everywhere else.
    trace : file object, optional
        Receives one JSON line per iteration
        ``{iter, objective, primal_res, dual_res, rho_admm}``.
    callback : callable, optional
        Called with the same per-iteration record.

    Returns
    -------
    SolverReport
    """
    gram = data.gram
    if not gram.is_zero and gram.sigma_min <= 1e-14 * max(1.0, gram.sigma_max):
        raise ConfigError("Gram factor is singular; use a positive ridge")
    K, p = data.K, data.p
    state = SolverState.initial(K, p, config.rho_admm_init) if init is None else init.copy()
    P = data.basis.matrix
    L_prev = state.laplacians(data.basis)
    trace_vals = []
    primal = dual = float("inf")
    converged = False
    t0 = time.perf_counter()
    for m in range(int(config.max_iter)):
        Xi = xi_update(state, data, config)
        L = symmetrize(P @ Xi @ P.T)
        Z = a_update(state, data, config)
        B = b_update(state, L, Z, data, config)
        E, F = dual_update(state, L, Z, B, data)
        primal, dual = residuals(L, Z, B, state.B, data, state.rho_admm)
        rho_used = state.rho_admm
        state = SolverState(Xi, Z, B, E, F, state.iter + 1, rho_used)

        obj = _objective_from_xi(np.linalg.eigvalsh(Xi), L, data, config)
        if not np.isfinite(obj):
            raise NumericalError(f"non-finite objective at iteration {state.iter}")
        trace_vals.append(obj)
        if trace is not None or callback is not None:
            rec = {"iter": state.iter, "objective": obj, "primal_res": primal,
                   "dual_res": dual, "rho_admm": rho_used}
            if trace is not None:
                trace.write(json.dumps(rec) + "\n")
            if callback is not None:
                callback(rec)

        change = float(np.sqrt(np.sum((L - L_prev) ** 2)))
        L_prev = L
        if change <= config.tol_change:
            converged = True
            break
        state.rho_admm = adapt_rho(rho_used, primal, dual, config)

    wall = time.perf_counter() - t0
    est = finalize(L_prev)
    estimate = LaplacianSet.from_arrays(list(est))
    try:
        final_obj = objective(estimate, data, config)
    except NumericalError:
        # clipping can disconnect a barely-connected iterate
        final_obj = float("inf")
    if not converged:
        logger.info("ADMM stopped at max_iter=%d (primal %.3g, dual %.3g)",
                    config.max_iter, primal, dual)
    return SolverReport(
        estimate=estimate,
        objective_trace=tuple(trace_vals),
        primal_residual=primal,
        dual_residual=dual,
        iterations=state.iter,
        converged=converged,
        wall_time=wall,
        objective=final_obj,
        rho_admm=state.rho_admm,
        state=state,
    )
