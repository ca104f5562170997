"""Gram matrices for the fusion penalty and the penalty itself.

The penalty couples the (i, j) entries of the K Laplacians,
``L_ij = ([L_1]_ij, ..., [L_K]_ij)``, through a K x K Gram matrix
``Jt = J^T J``::

    P(L) = sum_{i != j} ||L_ij||_1 + rho * sum_{i != j} sqrt(L_ij^T Jt L_ij)

Both sums run over ordered pairs, so every undirected edge is counted twice.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .graphcore import DimensionError, LaplacianSet

DEFAULT_RIDGE = 1e-8


class SpecError(ValueError):
    pass


class GramKind(str, enum.Enum):
    GROUP_GRAPH_LASSO = "GroupGraphLasso"
    TIME_VARYING = "TimeVarying"
    LAPLACIAN_SHRINKAGE = "LaplacianShrinkage"
    ZERO = "Zero"

    @classmethod
    def parse(cls, value) -> "GramKind":
        if isinstance(value, cls):
            return value
        aliases = {
            "ggl": cls.GROUP_GRAPH_LASSO,
            "groupgraphlasso": cls.GROUP_GRAPH_LASSO,
            "tvgl": cls.TIME_VARYING,
            "timevarying": cls.TIME_VARYING,
            "lsp": cls.LAPLACIAN_SHRINKAGE,
            "laplacianshrinkage": cls.LAPLACIAN_SHRINKAGE,
            "zero": cls.ZERO,
            "separate": cls.ZERO,
        }
        key = str(value).replace("-", "").replace("_", "").lower()
        try:
            return aliases[key]
        except KeyError:
            raise SpecError(f"unknown penalty kind {value!r}") from None


@dataclass(frozen=True)
class GramSpec:
    """Declarative description of a Gram matrix.

    ``weights`` is a length K-1 sequence for ``TimeVarying`` (weight of the
    k -> k-1 difference) and a K x K symmetric matrix for
    ``LaplacianShrinkage``; it is ignored for the other kinds.
    """

    kind: GramKind
    K: int
    weights: Optional[tuple] = None
    ridge: float = DEFAULT_RIDGE

    def __post_init__(self):
        object.__setattr__(self, "kind", GramKind.parse(self.kind))
        if int(self.K) != self.K or self.K < 1:
            raise DimensionError(f"K must be a positive integer, got {self.K}")
        if self.ridge < 0:
            raise SpecError("ridge must be nonnegative")
        K = int(self.K)
        w = self.weights
        if self.kind is GramKind.TIME_VARYING:
            w = np.ones(K - 1) if w is None else np.asarray(w, dtype=float).ravel()
            if w.shape != (K - 1,):
                raise DimensionError(f"TimeVarying needs {K - 1} weights, got {w.size}")
            if np.any(w <= 0):
                raise SpecError("TimeVarying weights must be strictly positive")
            w = tuple(float(x) for x in w)
        elif self.kind is GramKind.LAPLACIAN_SHRINKAGE:
            W = np.ones((K, K)) - np.eye(K) if w is None else np.asarray(w, dtype=float)
            if W.shape != (K, K):
                raise DimensionError(f"LaplacianShrinkage needs a {K}x{K} weight matrix")
            if np.any(W < 0):
                raise SpecError("LaplacianShrinkage weights must be nonnegative")
            if not np.allclose(W, W.T, rtol=0, atol=1e-12):
                raise SpecError("LaplacianShrinkage weights must be symmetric")
            if np.any(np.diag(W) != 0):
                raise SpecError("LaplacianShrinkage weights need a zero diagonal")
            w = tuple(tuple(float(x) for x in row) for row in W)
        else:
            w = None
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "weights", w)

    def to_json(self) -> dict:
        out = {"kind": self.kind.value, "K": self.K, "ridge": self.ridge}
        if self.weights is not None:
            out["weights"] = [list(r) if isinstance(r, tuple) else r for r in self.weights]
        return out

    @classmethod
    def from_json(cls, obj) -> "GramSpec":
        if isinstance(obj, str):
            obj = json.loads(obj)
        weights = obj.get("weights")
        if weights is not None:
            weights = tuple(tuple(r) if isinstance(r, list) else r for r in weights)
        return cls(obj["kind"], int(obj["K"]), weights, float(obj.get("ridge", DEFAULT_RIDGE)))


@dataclass(frozen=True, eq=False)
class GramMatrix:
    kind: GramKind
    gram: np.ndarray
    factor: np.ndarray
    sigma_min: float
    sigma_max: float

    @property
    def K(self) -> int:
        return self.gram.shape[0]

    @property
    def is_zero(self) -> bool:
        return self.kind is GramKind.ZERO


def time_varying_operator(weights: Sequence[float]) -> np.ndarray:
    """Weighted difference operator: zero first row, then ``L_k - w_k L_{k-1}``."""
    w = np.asarray(weights, dtype=float)
    K = w.size + 1
    J = np.zeros((K, K))
    for k in range(1, K):
        J[k, k] = 1.0
        J[k, k - 1] = -w[k - 1]
    return J


def laplacian_shrinkage_gram(weights) -> np.ndarray:
    W = np.asarray(weights, dtype=float)
    return np.diag(W.sum(axis=1)) - W


def _sym_sqrt(G: np.ndarray) -> np.ndarray:
    evals, V = np.linalg.eigh(G)
    R = (V * np.sqrt(np.clip(evals, 0.0, None))) @ V.T
    return 0.5 * (R + R.T)


def _finish(kind: GramKind, gram: np.ndarray, factor: np.ndarray) -> GramMatrix:
    gram = 0.5 * (gram + gram.T)
    sv = np.linalg.svd(gram, compute_uv=False)
    for a in (gram, factor):
        a.setflags(write=False)
    return GramMatrix(kind, gram, factor, float(sv.min()), float(sv.max()))


def build_gram(spec: GramSpec) -> GramMatrix:
    """Realize the Gram matrix (and a factor J with ``J^T J = gram``)."""
    K = spec.K
    if spec.kind is GramKind.ZERO:
        return _finish(spec.kind, np.zeros((K, K)), np.zeros((K, K)))
    if spec.kind is GramKind.GROUP_GRAPH_LASSO:
        return _finish(spec.kind, np.eye(K), np.eye(K))
    if spec.kind is GramKind.TIME_VARYING:
        J = time_varying_operator(spec.weights)
        gram = J.T @ J
    else:
        gram = laplacian_shrinkage_gram(spec.weights)
    gram = gram + spec.ridge * np.eye(K)
    return _finish(spec.kind, gram, _sym_sqrt(gram))


def _check(L, gram: GramMatrix) -> np.ndarray:
    stack = L.stack if isinstance(L, LaplacianSet) else np.asarray(L, dtype=float)
    if stack.ndim != 3 or stack.shape[0] != gram.K:
        raise DimensionError(f"penalty expects {gram.K} graphs, got shape {stack.shape}")
    return stack


def _offdiag(stack: np.ndarray) -> np.ndarray:
    """(K, p(p-1)) matrix of the ordered off-diagonal entries."""
    p = stack.shape[-1]
    mask = ~np.eye(p, dtype=bool)
    return stack[:, mask]


def group_term(L, gram: GramMatrix) -> float:
    """``sum_{i != j} sqrt(L_ij^T Jt L_ij)``."""
    X = _offdiag(_check(L, gram))
    quad = np.einsum("kn,kl,ln->n", X, gram.gram, X)
    # cancellation noise would otherwise survive the square root as ~1e-8
    floor = 1e-14 * max(gram.sigma_max, 1.0) * np.sum(X * X, axis=0)
    return float(np.sqrt(np.where(quad > floor, quad, 0.0)).sum())


def eval_penalty(L, gram: GramMatrix, rho: float) -> float:
    """Structured fusion penalty ``P1(L) + rho * P2(L)``.

    Parameters
    ----------
    L : LaplacianSet or array of shape (K, p, p)
    gram : GramMatrix
    rho : float
        Weight of the Gram-coupled group term.
    """
    if rho < 0:
        raise ValueError("rho must be nonnegative")
    stack = _check(L, gram)
    l1 = float(np.abs(_offdiag(stack)).sum())
    if gram.is_zero or rho == 0:
        return l1
    return l1 + rho * group_term(stack, gram)


def dual_norm_bound(L, gram: GramMatrix) -> float:
    """Upper bound ``(1 + sigma_min(Jt) sqrt(K)) * max_k ||L_k||_max,off``."""
    stack = _check(L, gram)
    X = _offdiag(stack)
    max_off = float(np.abs(X).max(initial=0.0))
    return (1.0 + gram.sigma_min * np.sqrt(gram.K)) * max_off
