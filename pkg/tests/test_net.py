import numpy as np
import pytest
from hypothesis import given, strategies as st

from cnar.errors import ValidationError
from cnar.net import (
    SbmSpec,
    generate_sbm,
    membership_basis,
    planted_partition_spec,
    row_normalize,
    scree,
    spectral_embed,
    subspace_distance,
)

from conftest import random_orthonormal


def test_spec_rejects_non_one_hot_rows():
    with pytest.raises(ValidationError):
        SbmSpec(np.array([[1.0, 1.0], [0.0, 1.0]]), np.eye(2) * 0.5)


def test_spec_rejects_out_of_range_q():
    with pytest.raises(ValidationError):
        SbmSpec.from_labels([0, 1], np.array([[1.2, 0.1], [0.1, 0.5]]))


def test_spec_rejects_asymmetric_q():
    with pytest.raises(ValidationError):
        SbmSpec.from_labels([0, 1], np.array([[0.5, 0.1], [0.2, 0.5]]))


def test_all_ones_q_gives_complete_graph(rng):
    spec = SbmSpec.from_labels([0, 0, 1, 1, 1], np.ones((2, 2)))
    a = generate_sbm(spec, rng)
    np.testing.assert_array_equal(a, np.ones((5, 5)) - np.eye(5))


def test_zero_q_gives_empty_graph(rng):
    spec = SbmSpec.from_labels([0, 1, 1, 0], np.zeros((2, 2)))
    assert not generate_sbm(spec, rng).any()


def test_empty_block_rejected_for_generation(rng):
    spec = SbmSpec.from_labels([0, 0, 0], np.eye(2) * 0.5)
    with pytest.raises(ValidationError):
        generate_sbm(spec, rng)


def test_generation_is_deterministic_given_seed():
    spec = planted_partition_spec([30, 30], 0.5, 0.5)
    np.testing.assert_array_equal(generate_sbm(spec, 7), generate_sbm(spec, 7))


def test_planted_partition_densities_within_binomial_band():
    # 3-sigma binomial band around 0.9 and 0.1 for N=200 averaged over 10 seeds
    spec = planted_partition_spec([100, 100], 0.9, 8 / 9)
    within, between = [], []
    for seed in range(10):
        a = generate_sbm(spec, seed)
        blk = a[:100, :100]
        within.append(blk[np.triu_indices(100, 1)].mean())
        between.append(a[:100, 100:].mean())
    assert 0.88 <= np.mean(within) <= 0.92
    assert 0.08 <= np.mean(between) <= 0.12


def test_planted_partition_probabilities():
    spec = planted_partition_spec([3, 4], 0.9, 8 / 9)
    np.testing.assert_allclose(spec.q, [[0.9, 0.1], [0.1, 0.9]])
    np.testing.assert_array_equal(spec.sizes, [3, 4])
    np.testing.assert_array_equal(spec.labels, [0, 0, 0, 1, 1, 1, 1])


def test_planted_partition_limits():
    np.testing.assert_allclose(planted_partition_spec([2, 2, 2], 0.6, 0.0).q, np.full((3, 3), 0.6))
    np.testing.assert_allclose(planted_partition_spec([2, 2], 0.6, 1.0).q, 0.6 * np.eye(2))


def test_planted_partition_rejects_empty_sizes():
    with pytest.raises(ValidationError):
        planted_partition_spec([], 0.5, 0.5)
    with pytest.raises(ValidationError):
        planted_partition_spec([3, 0], 0.5, 0.5)


@given(st.integers(0, 2**32 - 1), st.integers(2, 40))
def test_sbm_output_symmetric_zero_diagonal(seed, n):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, size=n)
    labels[:2] = [0, 1]
    q = rng.random((2, 2))
    q = (q + q.T) / 2
    a = generate_sbm(SbmSpec.from_labels(labels, q), rng)
    np.testing.assert_array_equal(a, a.T)
    assert not np.diag(a).any()
    assert set(np.unique(a)) <= {0.0, 1.0}


def test_embedding_of_expected_matrix_spans_membership():
    spec = planted_partition_spec([7, 5, 8], 0.8, 0.6)
    emb = spectral_embed(spec.edge_probabilities(), 3)
    assert subspace_distance(emb.u_hat, membership_basis(spec.theta)) <= 1e-8


def test_two_disjoint_edges():
    a = np.zeros((4, 4))
    a[0, 1] = a[1, 0] = a[2, 3] = a[3, 2] = 1.0
    emb = spectral_embed(a, 2)
    np.testing.assert_allclose(np.sort(emb.full_spectrum), [-1, -1, 1, 1], atol=1e-12)
    # ties in |lambda| go to the larger signed value
    np.testing.assert_allclose(emb.eigvals, [1, 1], atol=1e-12)
    indicators = np.array([[1, 0], [1, 0], [0, 1], [0, 1]]) / np.sqrt(2)
    assert subspace_distance(emb.u_hat, indicators) <= 1e-10


def test_full_embedding_is_orthogonal(rng):
    a = generate_sbm(planted_partition_spec([6, 6], 0.7, 0.5), rng)
    u = spectral_embed(a, 12).u_hat
    np.testing.assert_allclose(u @ u.T, np.eye(12), atol=1e-10)


def test_embedding_sign_convention(rng):
    a = generate_sbm(planted_partition_spec([10, 10], 0.8, 0.7), rng)
    u = spectral_embed(a, 3).u_hat
    idx = np.argmax(np.abs(u), axis=0)
    assert np.all(u[idx, np.arange(3)] > 0)


def test_embedding_order_by_absolute_value():
    a = np.diag([1.0, -3.0, 2.0])
    emb = spectral_embed(a, 3)
    np.testing.assert_allclose(emb.eigvals, [-3, 2, 1])
    np.testing.assert_allclose(np.abs(emb.u_hat), np.eye(3)[:, [1, 2, 0]])


def test_embedding_errors():
    with pytest.raises(ValidationError):
        spectral_embed(np.eye(3), 4)
    with pytest.raises(ValidationError):
        spectral_embed(np.array([[0.0, 1.0], [0.0, 0.0]]), 1)


@given(st.integers(0, 2**32 - 1), st.integers(3, 30), st.integers(1, 3))
def test_embedding_orthonormal(seed, n, k):
    rng = np.random.default_rng(seed)
    m = rng.standard_normal((n, n))
    u = spectral_embed(m + m.T, k).u_hat
    assert np.max(np.abs(u.T @ u - np.eye(k))) <= 1e-10


def test_subspace_distance_examples():
    e = np.eye(6)
    assert subspace_distance(e[:, :1], e[:, :1]) == 0
    assert subspace_distance(e[:, :1], e[:, 1:2]) == pytest.approx(np.sqrt(2))
    with pytest.raises(ValidationError):
        subspace_distance(e[:, :2], e[:, :1])


def test_subspace_distance_rotation_invariance_50_instances(rng):
    for _ in range(50):
        u = random_orthonormal(rng, 20, 3)
        r = random_orthonormal(rng, 3, 3)
        assert subspace_distance(u, u @ r) <= 1e-10


@given(st.integers(0, 2**32 - 1), st.integers(4, 20), st.integers(1, 3))
def test_subspace_distance_bounds_and_symmetry(seed, n, k):
    rng = np.random.default_rng(seed)
    u1 = random_orthonormal(rng, n, k)
    u2 = random_orthonormal(rng, n, k)
    d = subspace_distance(u1, u2)
    assert 0 <= d <= np.sqrt(2 * k) + 1e-12
    assert d == pytest.approx(subspace_distance(u2, u1), abs=1e-10)


def test_row_normalize_examples():
    k3 = np.ones((3, 3)) - np.eye(3)
    np.testing.assert_allclose(row_normalize(k3), k3 / 2)
    assert not row_normalize(np.zeros((3, 3))).any()
    path = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=float)
    np.testing.assert_allclose(row_normalize(path)[1], [0.5, 0, 0.5])


def test_row_normalize_isolated_node_row_stays_zero():
    a = np.array([[0, 1, 0], [1, 0, 0], [0, 0, 0]], dtype=float)
    out = row_normalize(a)
    assert not out[2].any()
    np.testing.assert_allclose(out[:2].sum(axis=1), 1)


def test_scree_largest_ratio():
    mags, k = scree(np.array([10.0, -9.0, 1.0, 0.5, 0.4]), 3)
    np.testing.assert_allclose(mags, [10, 9, 1, 0.5, 0.4])
    assert k == 2


def test_scree_from_embedding(rng):
    a = generate_sbm(planted_partition_spec([40, 40, 40], 0.9, 8 / 9), rng)
    assert scree(spectral_embed(a, 3), 6)[1] == 3


def test_membership_basis_orthonormal():
    theta = SbmSpec.from_labels([0, 1, 1, 2, 2, 2], np.eye(3)).theta
    u = membership_basis(theta)
    np.testing.assert_allclose(u.T @ u, np.eye(3), atol=1e-15)
