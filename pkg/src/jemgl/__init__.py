"""Joint estimation of multiple graph Laplacians with structured fusion penalties."""

from .evaluation import MetricsReport, evaluate, f_score, relative_error, theorem1_bound
from .graphcore import (
    GraphLaplacian,
    LaplacianSet,
    complement_basis,
    log_pseudo_determinant,
    pseudo_inverse,
    validate_laplacian,
)
from .penalty import GramKind, GramMatrix, GramSpec, build_gram, eval_penalty
from .solver import ProblemData, SolverConfig, SolverReport, solve
from .synthdata import Pattern, PatternSpec, generate_pattern, sample_covariance, sample_signals

__version__ = "0.1.0"

__all__ = [
    "GraphLaplacian", "LaplacianSet", "complement_basis", "log_pseudo_determinant",
    "pseudo_inverse", "validate_laplacian",
    "GramKind", "GramMatrix", "GramSpec", "build_gram", "eval_penalty",
    "ProblemData", "SolverConfig", "SolverReport", "solve",
    "Pattern", "PatternSpec", "generate_pattern", "sample_covariance", "sample_signals",
    "MetricsReport", "evaluate", "f_score", "relative_error", "theorem1_bound",
]
