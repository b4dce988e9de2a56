import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from congrad.errors import InvalidInputError, InvalidRankError
from congrad.lowrank import (LowRankFactors, cosine_and_flag, cosine_flat, flatten_concat, power_iterate,
                             reconstruct, unflatten)


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


def test_rank_one_exact():
    rng = np.random.default_rng(1)
    M = np.outer(rng.standard_normal(20), rng.standard_normal(15))
    assert rel_err(reconstruct(power_iterate(M, 1, 3, seed=0)), M) < 1e-8


def test_zero_matrix():
    F = power_iterate(np.zeros((6, 5)), 2)
    assert np.array_equal(reconstruct(F), np.zeros((6, 5)))
    assert F.Q.shape == (5, 2)
    np.testing.assert_allclose(F.Q.T @ F.Q, np.eye(2), atol=1e-12)


def test_gaussian_matches_truncated_svd_cosine():
    rng = np.random.default_rng(2)
    M = rng.standard_normal((128, 128))
    # oracle: truncated reconstruction from the eigendecomposition of M^T M
    w, V = np.linalg.eigh(M.T @ M)
    V = V[:, np.argsort(w)[::-1][:64]]
    oracle = M @ V @ V.T
    ours = reconstruct(power_iterate(M, 64, 3, seed=0))
    assert abs(cosine_flat(M, ours) - cosine_flat(M, oracle)) < 0.05


def test_rank_two_exact():
    rng = np.random.default_rng(3)
    M = rng.standard_normal((30, 2)) @ rng.standard_normal((2, 25))
    assert np.linalg.norm(reconstruct(power_iterate(M, 2)) - M) < 1e-6


def test_full_rank_is_exact():
    M = np.arange(12.0).reshape(3, 4) + np.eye(3, 4)
    F = power_iterate(M, 3)
    assert F.rank == 3
    assert rel_err(reconstruct(F), M) < 1e-10
    with pytest.raises(InvalidRankError):
        power_iterate(M, 4)


def test_rank_deficient_input_keeps_orthonormal_q():
    rng = np.random.default_rng(4)
    M = np.outer(rng.standard_normal(10), rng.standard_normal(8))
    F = power_iterate(M, 5)
    np.testing.assert_allclose(F.Q.T @ F.Q, np.eye(5), atol=1e-10)
    assert rel_err(reconstruct(F), M) < 1e-10


def test_power_iterate_deterministic():
    M = np.random.default_rng(5).standard_normal((12, 9))
    a, b = power_iterate(M, 4, seed=7), power_iterate(M, 4, seed=7)
    assert np.array_equal(a.P, b.P) and np.array_equal(a.Q, b.Q)


@pytest.mark.parametrize("bad", [0, -1])
def test_invalid_rank(bad):
    with pytest.raises(InvalidRankError):
        power_iterate(np.ones((3, 3)), bad)


def test_rejects_non_finite_and_non_matrix():
    with pytest.raises(InvalidInputError):
        power_iterate(np.array([[1.0, np.nan]]), 1)
    with pytest.raises(InvalidInputError):
        power_iterate(np.ones(3), 1)


def test_reconstruct_unit_outer_product():
    P = np.zeros((3, 1)); P[0, 0] = 1
    Q = np.zeros((4, 1)); Q[1, 0] = 1
    R = reconstruct(LowRankFactors(P, Q))
    expected = np.zeros((3, 4)); expected[0, 1] = 1
    assert np.array_equal(R, expected)
    assert np.array_equal(reconstruct(LowRankFactors(np.zeros((3, 1)), Q)), np.zeros((3, 4)))


def test_factor_rank_mismatch():
    with pytest.raises(InvalidInputError):
        LowRankFactors(np.zeros((3, 2)), np.zeros((4, 1)))


def test_cosine_examples():
    assert cosine_flat([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0, abs=1e-15)
    assert cosine_flat([1, 0], [0, 1]) == 0.0
    assert cosine_flat([1, 0], [-1, 1]) == pytest.approx(-1 / np.sqrt(2), abs=1e-15)


def test_cosine_degenerate_flag():
    c, degenerate = cosine_and_flag([0.0, 0.0], [1.0, 2.0])
    assert c == 0.0 and degenerate
    assert cosine_and_flag([1.0, 0.0], [2.0, 0.0]) == (1.0, False)
    with pytest.raises(InvalidInputError):
        cosine_flat([1.0, 2.0], [1.0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=20), st.data())
def test_cosine_bounded(a, data):
    b = data.draw(st.lists(st.floats(-1e6, 1e6), min_size=len(a), max_size=len(a)))
    assert -1.0 <= cosine_flat(a, b) <= 1.0


def test_flatten_concat_examples():
    assert flatten_concat([np.array([[1, 2], [3, 4]])]).tolist() == [1, 2, 3, 4]
    assert flatten_concat([np.array([[5]]), np.array([[7]])]).tolist() == [5, 7]
    with pytest.raises(InvalidInputError):
        flatten_concat([])


def test_unflatten_round_trip():
    rng = np.random.default_rng(6)
    ms = [rng.standard_normal((3, 4)), rng.standard_normal((2, 2)), rng.standard_normal(5)]
    back = unflatten(flatten_concat(ms), [m.shape for m in ms])
    assert all(np.array_equal(a, b) for a, b in zip(ms, back))
    with pytest.raises(InvalidInputError):
        unflatten(np.zeros(5), [(2, 2)])
