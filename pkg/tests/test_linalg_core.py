import numpy as np
import pytest

from foura_api.utils.exceptions import InvalidInput, InvalidRank, ShapeError
from foura_api.utils.linalg_core import (frobenius_norm, low_rank_approx, reconstruction_error, spectral_norm,
                                         svd, top_subspaces)


def _power_iteration_norm(m, iters=500):
    x = np.ones(m.shape[1]) / np.sqrt(m.shape[1])
    for _ in range(iters):
        y = m.T @ (m @ x)
        norm = np.linalg.norm(y)
        if norm == 0:
            return 0.0
        x = y / norm
    return float(np.linalg.norm(m @ x))


def _check_svd_invariants(m, dec):
    k1, k2 = m.shape
    assert dec.u.shape == (k1, k1)
    assert dec.v.shape == (k2, k2)
    assert np.max(np.abs(dec.u.T @ dec.u - np.eye(k1))) < 1e-9
    assert np.max(np.abs(dec.v.T @ dec.v - np.eye(k2))) < 1e-9
    assert np.all(np.diff(dec.sigma) <= 0)
    assert np.all(dec.sigma >= 0)
    assert np.max(np.abs(dec.reconstruct() - m)) < 1e-9


def test_svd_diagonal():
    dec = svd(np.diag([3.0, 2.0, 1.0]))
    np.testing.assert_allclose(dec.sigma, [3, 2, 1], atol=1e-12)
    np.testing.assert_allclose(np.abs(dec.u), np.eye(3), atol=1e-12)
    np.testing.assert_allclose(np.abs(dec.v), np.eye(3), atol=1e-12)


def test_svd_identity():
    np.testing.assert_allclose(svd(np.eye(4)).sigma, np.ones(4), atol=1e-12)


def test_svd_matches_gram_eigenvalues(np_rng):
    m = np_rng.standard_normal((8, 6))
    sigma = svd(m).sigma
    eig = np.sort(np.linalg.eigvalsh(m.T @ m))[::-1]
    np.testing.assert_allclose(sigma, np.sqrt(np.clip(eig, 0, None)), rtol=1e-8)


@pytest.mark.parametrize('shape', [(1, 1), (1, 5), (5, 1), (7, 3), (3, 7), (12, 12), (32, 20)])
def test_svd_invariants(np_rng, shape):
    m = np_rng.standard_normal(shape)
    _check_svd_invariants(m, svd(m))


def test_svd_rank_deficient_and_zero(np_rng):
    low = np_rng.standard_normal((6, 2)) @ np_rng.standard_normal((2, 5))
    dec = svd(low)
    _check_svd_invariants(low, dec)
    assert np.all(dec.sigma[2:] < 1e-10)

    zero = np.zeros((4, 3))
    dec = svd(zero)
    _check_svd_invariants(zero, dec)
    np.testing.assert_array_equal(dec.sigma, np.zeros(3))


def test_svd_sign_convention(np_rng):
    dec = svd(np_rng.standard_normal((5, 4)))
    for j in range(dec.u.shape[1]):
        column = dec.u[:, j]
        assert column[np.argmax(np.abs(column))] >= 0


def test_svd_deterministic(np_rng):
    m = np_rng.standard_normal((9, 7))
    first, second = svd(m), svd(m)
    np.testing.assert_array_equal(first.u, second.u)
    np.testing.assert_array_equal(first.sigma, second.sigma)


def test_svd_rejects_non_finite():
    with pytest.raises(InvalidInput):
        svd(np.array([[1.0, np.nan]]))
    with pytest.raises(InvalidInput):
        svd(np.array([[np.inf]]))
    with pytest.raises(ShapeError):
        svd(np.zeros((2, 2, 2)))


def test_low_rank_approx_diagonal():
    m = np.diag([3.0, 2.0, 1.0])
    np.testing.assert_allclose(low_rank_approx(m, 3), m, atol=1e-12)
    np.testing.assert_allclose(low_rank_approx(m, 2), np.diag([3.0, 2.0, 0.0]), atol=1e-12)


def test_low_rank_approx_frobenius_error(np_rng):
    m = np_rng.standard_normal((10, 10))
    sigma = svd(m).sigma
    err = np.linalg.norm(m - low_rank_approx(m, 4))
    assert abs(err - np.sqrt(np.sum(sigma[4:] ** 2))) < 1e-9


def test_low_rank_approx_rank_range():
    with pytest.raises(InvalidRank):
        low_rank_approx(np.eye(3), 0)
    with pytest.raises(InvalidRank):
        low_rank_approx(np.eye(3), 4)


def test_reconstruction_error_examples():
    m = np.diag([3.0, 2.0, 1.0])
    assert reconstruction_error(m, 2, 'spectral') == pytest.approx(1.0, abs=1e-12)
    assert reconstruction_error(m, 1, 'frobenius') == pytest.approx(np.sqrt(5.0), abs=1e-12)
    with pytest.raises(InvalidRank):
        reconstruction_error(m, 3)


def test_reconstruction_error_against_power_iteration(np_rng):
    m = np_rng.standard_normal((12, 8))
    residual = m - low_rank_approx(m, 3)
    oracle = _power_iteration_norm(residual)
    assert abs(reconstruction_error(m, 3) - oracle) / oracle < 1e-7


def test_eckart_young_property():
    rng = np.random.default_rng(7)
    for _ in range(100):
        rows, cols = rng.integers(2, 33, size=2)
        m = rng.standard_normal((rows, cols))
        sigma = np.linalg.svd(m, compute_uv=False)
        # every valid r at once through the spectrum, then the public entry point at a few of them
        assert np.max(np.abs(svd(m).sigma[1:] - sigma[1:])) < 1e-8
        ranks = rng.choice(np.arange(1, min(rows, cols)), size=min(3, min(rows, cols) - 1), replace=False)
        for r in ranks:
            r = int(r)
            assert abs(reconstruction_error(m, r) - sigma[r]) < 1e-8


def test_lower_tail_gives_lower_error(np_rng):
    for _ in range(100):
        q1, _ = np.linalg.qr(np_rng.standard_normal((6, 6)))
        q2, _ = np.linalg.qr(np_rng.standard_normal((6, 6)))
        head = np.sort(np_rng.uniform(2.0, 4.0, size=2))[::-1]
        tail_small = np.sort(np_rng.uniform(0.1, 0.5, size=4))[::-1]
        tail_large = tail_small + np_rng.uniform(0.1, 0.5, size=4)
        dw1 = (q1 * np.concatenate([head, tail_small])) @ q2.T
        dw2 = (q1 * np.concatenate([head, np.sort(tail_large)[::-1]])) @ q2.T
        assert reconstruction_error(dw1, 2) < reconstruction_error(dw2, 2)


def test_norms(np_rng):
    assert frobenius_norm(np.array([[3.0, 4.0]])) == pytest.approx(5.0)
    assert spectral_norm(np.eye(5)) == pytest.approx(1.0)
    m = np_rng.standard_normal((7, 4))
    assert abs(spectral_norm(m) - np.linalg.svd(m, compute_uv=False)[0]) / spectral_norm(m) < 1e-9
    with pytest.raises(InvalidInput):
        frobenius_norm(np.array([[np.nan]]))


@pytest.mark.parametrize('scale', [1e160, 1e-170, 1e300])
def test_svd_and_norms_at_extreme_scales(np_rng, scale):
    m = np_rng.normal(size=(5, 3))
    reference = np.linalg.svd(m, compute_uv=False)
    dec = svd(scale * m)
    np.testing.assert_allclose(dec.sigma / scale, reference, rtol=1e-10)
    np.testing.assert_allclose(np.abs(dec.u[:, :3].T @ svd(m).u[:, :3]), np.eye(3), atol=1e-9)
    assert frobenius_norm(scale * m) / scale == pytest.approx(np.linalg.norm(m), rel=1e-12)
    assert spectral_norm(scale * m) / scale == pytest.approx(reference[0], rel=1e-10)
    assert reconstruction_error(scale * m, 1, 'frobenius') / scale == pytest.approx(
        np.sqrt(np.sum(reference[1:] ** 2)), rel=1e-10)


def test_top_subspaces_shapes(np_rng):
    u, v = top_subspaces(np_rng.standard_normal((6, 4)), 2)
    assert u.shape == (6, 2)
    assert v.shape == (4, 2)
