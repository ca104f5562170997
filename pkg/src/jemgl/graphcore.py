"""Laplacian-cone types and the spectral primitives shared by the package.

A combinatorial graph Laplacian is a symmetric PSD matrix with zero row
sums and nonpositive off-diagonal entries.  Everything downstream (the
solver, the samplers, the metrics) works with dense ``numpy`` arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

RANK_TOL = 1e-9

# Tolerances of the stored-type invariants.
ROW_SUM_TOL = 1e-8
OFFDIAG_TOL = 1e-10
PSD_TOL = 1e-8


class DimensionError(ValueError):
    """Raised on non-square input or incompatible dimensions."""


class PseudoDeterminantError(ValueError):
    """Raised when every eigenvalue falls below the rank cutoff."""


class LaplacianError(ValueError):
    """Raised when a matrix is not a valid graph Laplacian."""


def symmetrize(M: np.ndarray) -> np.ndarray:
    """Return ``(M + M^T) / 2``; works on a stack of matrices too."""
    return 0.5 * (M + np.swapaxes(M, -1, -2))


def _as_square(M) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {M.shape}")
    return M


@dataclass(frozen=True)
class ValidationResult:
    ok: bool
    violations: tuple[str, ...] = ()

    def __bool__(self) -> bool:
        return self.ok


def validate_laplacian(M, tol: float = 1e-8) -> ValidationResult:
    """Check the four Laplacian-cone constraints at a common tolerance.

    Parameters
    ----------
    M : array_like, shape (p, p)
        Candidate matrix.
    tol : float
        Absolute tolerance applied to symmetry, row sums, the sign of the
        off-diagonal entries and the smallest eigenvalue.

    Returns
    -------
    ValidationResult
        ``ok`` is True iff no constraint is violated; ``violations`` names
        the failed constraints.
    """
    M = _as_square(M)
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    violations = []
    if not np.all(np.isfinite(M)):
        return ValidationResult(False, ("non-finite entries",))
    if np.max(np.abs(M - M.T), initial=0.0) > tol:
        violations.append("asymmetric")
    if np.max(np.abs(M.sum(axis=1)), initial=0.0) > tol:
        violations.append("nonzero row sums")
    off = M[~np.eye(M.shape[0], dtype=bool)]
    if off.size and off.max() > tol:
        violations.append("positive off-diagonal")
    if np.linalg.eigvalsh(symmetrize(M)).min() < -tol:
        violations.append("not positive semi-definite")
    return ValidationResult(not violations, tuple(violations))


@dataclass(frozen=True, eq=False)
class GraphLaplacian:
    """A p x p combinatorial graph Laplacian, stored densely and read-only."""

    entries: np.ndarray

    def __post_init__(self):
        M = _as_square(self.entries).copy()
        problems = []
        if not np.array_equal(M, M.T):
            problems.append("asymmetric")
        if np.max(np.abs(M.sum(axis=1))) > ROW_SUM_TOL:
            problems.append("nonzero row sums")
        off = M[~np.eye(M.shape[0], dtype=bool)]
        if off.size and off.max() > OFFDIAG_TOL:
            problems.append("positive off-diagonal")
        if np.linalg.eigvalsh(M).min() < -PSD_TOL:
            problems.append("not positive semi-definite")
        if problems:
            raise LaplacianError("invalid Laplacian: " + ", ".join(problems))
        M.setflags(write=False)
        object.__setattr__(self, "entries", M)

    @classmethod
    def from_adjacency(cls, W) -> "GraphLaplacian":
        """Build ``L = D - W`` from a symmetric nonnegative adjacency matrix."""
        W = _as_square(W)
        W = symmetrize(W)
        np.fill_diagonal(W, 0.0)
        if W.min(initial=0.0) < 0:
            raise LaplacianError("adjacency weights must be nonnegative")
        return cls(np.diag(W.sum(axis=1)) - W)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def adjacency(self) -> np.ndarray:
        W = -self.entries.copy()
        np.fill_diagonal(W, 0.0)
        return W

    def edge_count(self, threshold: float = 0.0) -> int:
        """Number of undirected edges with weight above ``threshold``."""
        iu = np.triu_indices(self.dim, k=1)
        return int(np.count_nonzero(np.abs(self.entries[iu]) > threshold))

    def algebraic_connectivity(self) -> float:
        return float(np.linalg.eigvalsh(self.entries)[1]) if self.dim > 1 else 0.0

    def __eq__(self, other) -> bool:
        return isinstance(other, GraphLaplacian) and np.array_equal(self.entries, other.entries)

    def __hash__(self):
        return hash(self.entries.tobytes())


@dataclass(frozen=True, eq=False)
class LaplacianSet:
    """K graph Laplacians over a shared node set."""

    graphs: tuple[GraphLaplacian, ...]
    _stack: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        graphs = tuple(
            g if isinstance(g, GraphLaplacian) else GraphLaplacian(g) for g in self.graphs
        )
        if not graphs:
            raise DimensionError("a LaplacianSet needs at least one graph")
        dims = {g.dim for g in graphs}
        if len(dims) != 1:
            raise DimensionError(f"graphs have mixed dimensions {sorted(dims)}")
        stack = np.stack([g.entries for g in graphs])
        stack.setflags(write=False)
        object.__setattr__(self, "graphs", graphs)
        object.__setattr__(self, "_stack", stack)

    @classmethod
    def from_arrays(cls, arrays: Iterable) -> "LaplacianSet":
        return cls(tuple(GraphLaplacian(a) for a in arrays))

    @property
    def K(self) -> int:
        return len(self.graphs)

    @property
    def p(self) -> int:
        return self.graphs[0].dim

    @property
    def stack(self) -> np.ndarray:
        """Read-only array of shape (K, p, p)."""
        return self._stack

    def __len__(self) -> int:
        return self.K

    def __iter__(self):
        return iter(self.graphs)

    def __getitem__(self, k: int) -> GraphLaplacian:
        return self.graphs[k]

    def __eq__(self, other) -> bool:
        return isinstance(other, LaplacianSet) and np.array_equal(self.stack, other.stack)

    def __hash__(self):
        return hash(self.stack.tobytes())


@dataclass(frozen=True, eq=False)
class ComplementBasis:
    """Orthonormal basis P (p x (p-1)) of the complement of the ones vector."""

    dim: int
    matrix: np.ndarray


def complement_basis(p: int) -> ComplementBasis:
    """Householder construction of an orthonormal basis of ``1^perp``.

    The reflection ``H = I - 2 u u^T / (u^T u)`` with ``u = e_1 - 1/sqrt(p)``
    maps ``e_1`` to the unit ones vector, so columns 2..p of ``H`` are an
    orthonormal basis of its complement.
    """
    if int(p) != p or p < 2:
        raise DimensionError(f"complement basis needs p >= 2, got {p}")
    p = int(p)
    u = np.full(p, -1.0 / np.sqrt(p))
    u[0] += 1.0
    H = np.eye(p) - (2.0 / (u @ u)) * np.outer(u, u)
    P = np.ascontiguousarray(H[:, 1:])
    P.setflags(write=False)
    return ComplementBasis(p, P)


def _spectrum(L) -> tuple[np.ndarray, np.ndarray]:
    L = _as_square(L.entries if isinstance(L, GraphLaplacian) else L)
    return np.linalg.eigh(symmetrize(L))


def _kept(evals: np.ndarray, rank_tol: float) -> np.ndarray:
    lmax = evals.max(initial=0.0)
    if lmax <= 0:
        return np.zeros(evals.shape, dtype=bool)
    return evals > rank_tol * lmax


def log_pseudo_determinant(L, rank_tol: float = RANK_TOL) -> float:
    """Sum of the logs of the eigenvalues above ``rank_tol * lambda_max``."""
    evals, _ = _spectrum(L)
    keep = _kept(evals, rank_tol)
    if not keep.any():
        raise PseudoDeterminantError("pseudo-determinant undefined: no eigenvalue above cutoff")
    return float(np.sum(np.log(evals[keep])))


def pseudo_determinant(L, rank_tol: float = RANK_TOL) -> float:
    """Product of the eigenvalues above ``rank_tol * lambda_max``."""
    return float(np.exp(log_pseudo_determinant(L, rank_tol)))


def pseudo_inverse(L, rank_tol: float = RANK_TOL) -> np.ndarray:
    """Moore-Penrose pseudo-inverse by eigendecomposition."""
    evals, U = _spectrum(L)
    keep = _kept(evals, rank_tol)
    Uk = U[:, keep]
    return symmetrize((Uk / evals[keep]) @ Uk.T)


def read_matrix_csv(path) -> np.ndarray:
    """Read a dense matrix from a header-less comma-separated file."""
    M = np.loadtxt(Path(path), delimiter=",", ndmin=2, dtype=float)
    return M


def write_matrix_csv(path, M) -> None:
    """Write a dense matrix with 17 significant digits (round-trip exact)."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    lines = [",".join(format(float(x), ".17g") for x in row) for row in M]
    Path(path).write_text("\n".join(lines) + "\n")


def laplacian_from_stack(stack: np.ndarray) -> LaplacianSet:
    return LaplacianSet.from_arrays(list(stack))


def permute(M: np.ndarray, perm: Sequence[int]) -> np.ndarray:
    """Relabel nodes: simultaneous row/column permutation (stack-aware)."""
    perm = np.asarray(perm)
    return M[..., perm, :][..., :, perm]
