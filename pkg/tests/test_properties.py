"""Property tests for the invariants of every module."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from jemgl.evaluation import f_score, relative_error, theorem1_bound
from jemgl.graphcore import (
    LaplacianSet,
    complement_basis,
    log_pseudo_determinant,
    permute,
    pseudo_determinant,
    pseudo_inverse,
    read_matrix_csv,
    validate_laplacian,
    write_matrix_csv,
)
from jemgl.penalty import GramKind, GramSpec, build_gram, eval_penalty
from jemgl.solver import SolverConfig, solve
from jemgl.synthdata import (
    PatternSpec,
    SignalDataset,
    generate_pattern,
    rng,
    sample_covariance,
)

from conftest import random_laplacian, random_problem

seeds = st.integers(0, 2**31 - 1)
dims = st.integers(2, 9)
kinds = st.sampled_from(["ggl", "tvgl", "lsp", "zero"])


def laplacian(seed, p, **kw):
    return random_laplacian(rng(seed), p, **kw)


def gram_for(kind, K, seed, ridge=0.0):
    kind = GramKind.parse(kind)
    gen = rng(seed, 3)
    if kind is GramKind.TIME_VARYING:
        if K < 2:
            kind, weights = GramKind.GROUP_GRAPH_LASSO, None
        else:
            weights = tuple(gen.uniform(0.1, 2, K - 1))
    elif kind is GramKind.LAPLACIAN_SHRINKAGE:
        W = np.triu(gen.uniform(0, 2, (K, K)), 1)
        weights = W + W.T
    else:
        weights = None
    return build_gram(GramSpec(kind, K, weights, ridge))


# -- graphcore ---------------------------------------------------------------

@given(seeds, dims)
def test_log_pdet_through_basis(seed, p):
    L = laplacian(seed, p)
    P = complement_basis(p).matrix
    R = P.T @ L @ P
    assert np.allclose(R, R.T, atol=1e-12)
    assert np.linalg.eigvalsh(R).min() > 0
    M = np.full((p, p), 1.0 / p)
    ref = np.linalg.slogdet(P.T @ (L + M) @ P)[1]
    assert abs(log_pseudo_determinant(L) - ref) <= 1e-8 * max(1.0, abs(ref))


@given(seeds, dims)
def test_pinv_symmetric_psd(seed, p):
    res = validate_laplacian(pseudo_inverse(laplacian(seed, p)))
    assert not any("symmetric" in v or "semi" in v for v in res.violations), res.violations


@given(seeds, dims, st.randoms(use_true_random=False))
def test_spectral_permutation_invariance(seed, p, rnd):
    L = laplacian(seed, p)
    perm = list(range(p))
    rnd.shuffle(perm)
    Lp = permute(L, perm)
    assert abs(pseudo_determinant(Lp) - pseudo_determinant(L)) <= 1e-9 * pseudo_determinant(L)
    np.testing.assert_allclose(pseudo_inverse(Lp), permute(pseudo_inverse(L), perm), atol=1e-9)


@given(st.lists(st.floats(-1e300, 1e300, allow_nan=False), min_size=1, max_size=12))
def test_csv_round_trip_exact(tmp_path_factory, values):
    path = tmp_path_factory.mktemp("csv") / "m.csv"
    M = np.asarray(values)[None, :]
    write_matrix_csv(path, M)
    assert np.array_equal(read_matrix_csv(path), M)


# -- penalty -----------------------------------------------------------------

def lap_set(seed, K, p):
    return LaplacianSet.from_arrays([laplacian(seed + k, p) for k in range(K)])


@given(seeds, st.integers(1, 4), dims, st.floats(0, 10))
def test_zero_kind_is_l1(seed, K, p, rho):
    L = lap_set(seed, K, p)
    off = ~np.eye(p, dtype=bool)
    assert eval_penalty(L, build_gram(GramSpec(GramKind.ZERO, K)), rho) == np.abs(L.stack[:, off]).sum()


@given(seeds, st.integers(1, 4), dims, kinds, st.floats(0, 1), st.floats(0, 5))
def test_penalty_convex(seed, K, p, kind, t, rho):
    g = gram_for(kind, K, seed)
    A, B = lap_set(seed, K, p), lap_set(seed + 100, K, p)
    mix = LaplacianSet.from_arrays(list(t * A.stack + (1 - t) * B.stack))
    lhs = eval_penalty(mix, g, rho)
    rhs = t * eval_penalty(A, g, rho) + (1 - t) * eval_penalty(B, g, rho)
    assert lhs <= rhs + 1e-10 * max(1.0, rhs)


@given(seeds, st.integers(1, 4), dims, kinds, st.randoms(use_true_random=False))
def test_penalty_permutation_invariant(seed, K, p, kind, rnd):
    g = gram_for(kind, K, seed)
    L = lap_set(seed, K, p)
    perm = list(range(p))
    rnd.shuffle(perm)
    Lp = LaplacianSet.from_arrays(list(permute(L.stack, perm)))
    assert abs(eval_penalty(Lp, g, 1.3) - eval_penalty(L, g, 1.3)) <= 1e-10 * max(1.0, eval_penalty(L, g, 1.3))


@given(seeds, st.integers(2, 4), dims, st.booleans())
def test_lsp_zero_iff_identical(seed, K, p, identical):
    ones = np.ones((K, K)) - np.eye(K)
    g = build_gram(GramSpec(GramKind.LAPLACIAN_SHRINKAGE, K, ones, 0.0))
    base = laplacian(seed, p)
    graphs = [base] * K if identical else [base] + [laplacian(seed + k + 1, p) for k in range(K - 1)]
    L = LaplacianSet.from_arrays(graphs)
    group = eval_penalty(L, g, 1.0) - eval_penalty(L, g, 0.0)
    if identical:
        assert abs(group) <= 1e-10
    else:
        assert group > 1e-8


# -- solver ------------------------------------------------------------------

@settings(max_examples=25)
@given(seeds, st.integers(3, 8), st.integers(1, 3), kinds, st.sampled_from([0.0, 0.01, 0.1, 1.0]))
def test_converged_estimates_feasible(seed, p, K, kind, rho_n):
    data, _ = random_problem(seed, p, K, kind)
    rep = solve(data, SolverConfig(rho_n=rho_n))
    for g in rep.estimate:
        assert validate_laplacian(g.entries, 1e-6).ok


# -- synthdata ---------------------------------------------------------------

@settings(max_examples=20)
@given(seeds, st.sampled_from([1, 2, 3]), st.integers(6, 16), st.integers(1, 4))
def test_generated_truths_valid(seed, pattern, p, K):
    truth = generate_pattern(PatternSpec(pattern, p, K, seed))
    for g in truth:
        assert validate_laplacian(g.entries, 1e-12).ok
        assert g.algebraic_connectivity() > 1e-9
    if pattern == 1:
        W = -truth.stack[:, ~np.eye(p, dtype=bool)]
        assert W.min() >= 0 and W.max() <= 2


@given(seeds, st.integers(1, 30), st.integers(2, 6))
def test_centered_covariance_shift_invariant(seed, n, p):
    gen = rng(seed)
    X = gen.standard_normal((n, p))
    c = gen.standard_normal(p) * 10
    a = sample_covariance(SignalDataset((X,)), center=True)
    b = sample_covariance(SignalDataset((X + c,)), center=True)
    np.testing.assert_allclose(a, b, atol=1e-10)


# -- evaluation --------------------------------------------------------------

@given(seeds, st.integers(1, 3), dims, st.randoms(use_true_random=False))
def test_relative_error_permutation_invariant(seed, K, p, rnd):
    A, B = lap_set(seed, K, p).stack, lap_set(seed + 50, K, p).stack
    perm = list(range(p))
    rnd.shuffle(perm)
    assert abs(relative_error(permute(A, perm), permute(B, perm)) - relative_error(A, B)) <= 1e-12


@given(seeds, dims, st.floats(1.0001, 1e3))
def test_fscore_scale_invariant(seed, p, factor):
    est = laplacian(seed, p, prob=0.4, low=0.5, high=1.0)
    truth = laplacian(seed + 1, p, prob=0.4)
    thr = 0.01
    min_edge = np.abs(est[~np.eye(p, dtype=bool)])
    min_edge = min_edge[min_edge > 0].min()
    c = factor * thr / min_edge
    assert f_score(c * est[None], truth[None], thr) == f_score(est[None], truth[None], thr)


@given(st.floats(1e-3, 0.05), st.integers(10, 1000))
def test_bound_quartering_n_halves_dominant_term(weight, n):
    L = LaplacianSet.from_arrays([np.array([[weight, -weight], [-weight, weight]])])
    g = build_gram(GramSpec(GramKind.GROUP_GRAPH_LASSO, 1))
    a = theorem1_bound(L, g, 1.0, n, 0.5)
    b = theorem1_bound(L, g, 1.0, 4 * n, 0.5)
    # ratio of the sqrt term to sqrt(s)/p at 4n
    dominance = 40 * np.sqrt(2) * a.nu * 2 * np.sqrt(np.log(2) / (4 * n))
    if dominance >= 100:
        assert abs(b.bound_value / a.bound_value - 0.5) <= 0.05 * 0.5
    assert b.bound_value < a.bound_value
