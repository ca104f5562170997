import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from jemgl.graphcore import LaplacianSet
from jemgl.penalty import GramKind, GramSpec, build_gram
from jemgl.solver import ProblemData
from jemgl.synthdata import rng

settings.register_profile("default", max_examples=50, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=200, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def random_laplacian(gen: np.random.Generator, p: int, prob: float = 0.6,
                     low: float = 0.2, high: float = 2.0) -> np.ndarray:
    """Random connected Laplacian: a spanning path plus Erdos-Renyi extras."""
    W = np.zeros((p, p))
    iu = np.triu_indices(p, 1)
    W[iu] = np.where(gen.random(iu[0].size) < prob, gen.uniform(low, high, iu[0].size), 0.0)
    order = gen.permutation(p)
    for a, b in zip(order[:-1], order[1:]):
        i, j = min(a, b), max(a, b)
        W[i, j] = max(W[i, j], gen.uniform(low, high))
    W = W + W.T
    return np.diag(W.sum(1)) - W


def random_problem(seed: int, p: int, K: int, kind="ggl", n_range=(20, 80),
                   weights=None) -> tuple[ProblemData, LaplacianSet]:
    """Sample covariances drawn from random connected truths."""
    gen = rng(seed, 77)
    truth = LaplacianSet.from_arrays([random_laplacian(gen, p) for _ in range(K)])
    counts = gen.integers(*n_range, size=K)
    covs = []
    for g, n in zip(truth, counts):
        evals, U = np.linalg.eigh(g.entries)
        A = U[:, 1:] / np.sqrt(evals[1:])
        X = gen.standard_normal((n, p - 1)) @ A.T
        covs.append(X.T @ X / n)
    kind = GramKind.parse(kind)
    if kind is GramKind.TIME_VARYING and K < 2:
        kind = GramKind.GROUP_GRAPH_LASSO
    gram = build_gram(GramSpec(kind, K, weights))
    return ProblemData.build(np.stack(covs), counts, gram), truth


@pytest.fixture
def gen():
    return rng(12345)


def pytest_terminal_summary(terminalreporter):
    """Print the acceptance lines collected by tests/test_acceptance.py."""
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
