import numpy as np
import pytest

from jemgl.graphcore import DimensionError, LaplacianSet, pseudo_inverse, validate_laplacian
from jemgl.synthdata import (
    DatasetError,
    GenerationError,
    Pattern,
    PatternSpec,
    SignalDataset,
    generate_pattern,
    load_dataset,
    module_labels,
    rng,
    sample_covariance,
    sample_signals,
    save_dataset,
)


@pytest.mark.parametrize("pattern", [1, 2, 3])
def test_truth_valid_and_connected(pattern):
    truth = generate_pattern(PatternSpec(pattern, 15, 3, seed=4))
    for g in truth:
        assert validate_laplacian(g.entries, 1e-12).ok
        assert g.algebraic_connectivity() > 1e-9


@pytest.mark.parametrize("pattern", [1, 2, 3])
def test_deterministic(pattern):
    a = generate_pattern(PatternSpec(pattern, 12, 3, seed=9))
    b = generate_pattern(PatternSpec(pattern, 12, 3, seed=9))
    assert np.array_equal(a.stack, b.stack)
    c = generate_pattern(PatternSpec(pattern, 12, 3, seed=10))
    assert not np.array_equal(a.stack, c.stack)


def test_pattern1_no_unique_edges_identical():
    truth = generate_pattern(PatternSpec(1, 10, 3, seed=2, unique_fraction=0.0))
    assert np.array_equal(truth.stack[0], truth.stack[1])
    assert np.array_equal(truth.stack[1], truth.stack[2])


def test_pattern1_weights_clipped():
    for seed in range(10):
        truth = generate_pattern(PatternSpec(1, 15, 3, seed=seed))
        W = np.stack([g.adjacency() for g in truth])
        assert W.min() >= 0.0 and W.max() <= 2.0


def test_pattern1_differs_across_graphs():
    truth = generate_pattern(PatternSpec(1, 15, 3, seed=1))
    assert not np.array_equal(truth.stack[0], truth.stack[1])


def test_pattern2_downsampling():
    for seed in range(5):
        truth = generate_pattern(PatternSpec(2, 15, 3, seed=seed))
        e = [g.edge_count() for g in truth]
        assert e[2] <= e[1] <= e[0]
        # later graphs are edge subsets of earlier ones
        assert np.all((truth.stack[1] != 0) <= (truth.stack[0] != 0))


def test_pattern3_modules():
    labels = module_labels(15, 3)
    assert np.bincount(labels).tolist() == [5, 5, 5]
    truth = generate_pattern(PatternSpec(3, 15, 3, seed=0))
    same = labels[:, None] == labels[None, :]
    # the middle graph keeps every module; the outer graphs each lose one module's edges
    lost = []
    for k in (0, 2):
        missing = (truth.stack[1] != 0) & (truth.stack[k] == 0)
        assert np.all(same[missing])
        lost.append(set(labels[np.nonzero(missing)[0]]))
    assert len(lost[0]) == 1 and len(lost[1]) == 1 and lost[0] != lost[1]


def test_generation_failure():
    with pytest.raises(GenerationError):
        generate_pattern(PatternSpec(1, 10, 2, seed=0, edge_prob=0.0, max_retries=3))


def test_spec_validation():
    with pytest.raises(DimensionError):
        PatternSpec(1, 2)
    with pytest.raises(ValueError):
        PatternSpec(1, 10, edge_prob=1.5)
    assert PatternSpec("TimeVaryingDownsample", 10).edge_prob == 0.3
    assert Pattern.parse(3).index == 3


def test_samples_orthogonal_to_ones():
    truth = generate_pattern(PatternSpec(1, 8, 2, seed=3))
    data = sample_signals(truth, [200, 50], seed=1)
    assert data.counts == (200, 50)
    for X in data.blocks:
        assert np.abs(X.sum(axis=1)).max() <= 1e-10


def test_law_of_large_numbers():
    gen = rng(0)
    W = np.triu(gen.uniform(0.5, 1.5, (5, 5)), 1)
    W = W + W.T
    truth = LaplacianSet.from_arrays([np.diag(W.sum(1)) - W])
    data = sample_signals(truth, [100_000], seed=5)
    S = sample_covariance(data)[0]
    assert np.abs(S - pseudo_inverse(truth.stack[0])).max() <= 0.05


def test_sampling_deterministic():
    truth = generate_pattern(PatternSpec(2, 6, 3, seed=1))
    a = sample_signals(truth, [5, 6, 7], seed=2)
    b = sample_signals(truth, [5, 6, 7], seed=2)
    assert all(np.array_equal(x, y) for x, y in zip(a.blocks, b.blocks))


class TestCovariance:
    def test_single_sample(self):
        x = np.array([1.0, -2.0, 1.0])
        S = sample_covariance(SignalDataset((x[None],)))
        np.testing.assert_allclose(S[0], np.outer(x, x))

    def test_duplicated(self):
        X = rng(1).standard_normal((7, 4))
        a = sample_covariance(SignalDataset((X,)))
        b = sample_covariance(SignalDataset((np.vstack([X, X]),)))
        np.testing.assert_allclose(a, b, atol=1e-15)

    def test_naive_loops(self):
        X = rng(2).standard_normal((9, 4))
        for center in (False, True):
            m = X.mean(0) if center else np.zeros(4)
            ref = np.zeros((4, 4))
            for row in X:
                for i in range(4):
                    for j in range(4):
                        ref[i, j] += (row[i] - m[i]) * (row[j] - m[j])
            S = sample_covariance(SignalDataset((X,)), center=center)[0]
            np.testing.assert_allclose(S, ref / 9, atol=1e-10)

    def test_center_shift_invariant(self):
        X = rng(3).standard_normal((20, 5))
        shift = rng(4).standard_normal(5)
        a = sample_covariance(SignalDataset((X,)), center=True)
        b = sample_covariance(SignalDataset((X + shift,)), center=True)
        np.testing.assert_allclose(a, b, atol=1e-10)

    def test_rejects_ragged(self):
        with pytest.raises(DatasetError):
            SignalDataset((np.zeros((3, 4)), np.zeros((3, 5))))


def test_dataset_round_trip(tmp_path):
    truth = generate_pattern(PatternSpec(3, 9, 3, seed=1))
    data = sample_signals(truth, [10, 11, 12], seed=1)
    save_dataset(tmp_path, data, truth, seed=1, pattern=3)
    back = load_dataset(tmp_path)
    assert back.data.counts == (10, 11, 12)
    assert all(np.array_equal(a, b) for a, b in zip(back.data.blocks, data.blocks))
    assert np.array_equal(back.truth.stack, truth.stack)
    assert back.manifest["pattern"] == 3


def test_load_errors(tmp_path):
    with pytest.raises(DatasetError):
        load_dataset(tmp_path)
    data = SignalDataset((np.zeros((2, 3)),))
    save_dataset(tmp_path, data)
    (tmp_path / "block_0.csv").write_text("1,2\n")
    with pytest.raises(DatasetError):
        load_dataset(tmp_path)
