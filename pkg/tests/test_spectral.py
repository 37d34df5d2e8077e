import numpy as np
import pytest

from foura_api.utils import spectral
from foura_api.utils.exceptions import InvalidInput
from foura_api.utils.foura_schema import Axis, TransformKind


def naive_dft(rows):
    k = rows.shape[1]
    out = np.zeros(rows.shape, dtype=complex)
    for f in range(k):
        for n in range(k):
            out[:, f] += rows[:, n] * np.exp(-2j * np.pi * f * n / k)
    return out / np.sqrt(k)


def direct_dct(rows):
    k = rows.shape[1]
    out = np.zeros(rows.shape)
    n = np.arange(k)
    for f in range(k):
        weight = np.sqrt(1.0 / k) if f == 0 else np.sqrt(2.0 / k)
        out[:, f] = weight * rows @ np.cos(np.pi * (2 * n + 1) * f / (2 * k))
    return out


def test_impulse_has_flat_dft():
    s = spectral.forward(np.array([[1.0, 0.0, 0.0, 0.0]]), 'dft')
    np.testing.assert_allclose(s.re, [[0.5, 0.5, 0.5, 0.5]], atol=1e-15)
    np.testing.assert_allclose(s.im, np.zeros((1, 4)), atol=1e-15)


def test_constant_signal_dct_is_dc_only():
    s = spectral.forward(np.full((1, 6), 2.5), 'dct')
    assert abs(s.re[0, 0]) > 1
    np.testing.assert_allclose(s.re[0, 1:], 0.0, atol=1e-12)
    np.testing.assert_array_equal(s.im, 0.0)


def test_dft_matches_direct_summation(np_rng):
    z = np_rng.standard_normal((5, 8))
    s = spectral.forward(z, 'dft', 'embedding')
    oracle = naive_dft(z)
    assert np.max(np.abs(s.re - oracle.real)) < 1e-10
    assert np.max(np.abs(s.im - oracle.imag)) < 1e-10


def test_dft_matches_numpy_fft(np_rng):
    z = np_rng.standard_normal((3, 11))
    s = spectral.forward(z, 'dft')
    oracle = np.fft.fft(z, axis=1, norm='ortho')
    np.testing.assert_allclose(s.re + 1j * s.im, oracle, atol=1e-10)


def test_dct_matches_direct_formula(np_rng):
    for k in (1, 2, 5, 8, 17):
        z = np_rng.standard_normal((4, k))
        assert np.max(np.abs(spectral.forward(z, 'dct').re - direct_dct(z))) < 1e-10


def test_dft_conjugate_symmetry(np_rng):
    z = np_rng.standard_normal((3, 9))
    s = spectral.forward(z, 'dft')
    x = s.re + 1j * s.im
    k = z.shape[1]
    for f in range(k):
        np.testing.assert_allclose(x[:, f], np.conj(x[:, (k - f) % k]), atol=1e-10)


@pytest.mark.parametrize('kind', ['dft', 'dct', 'identity'])
@pytest.mark.parametrize('axis', ['embedding', 'token'])
def test_round_trip_and_parseval(kind, axis):
    rng = np.random.default_rng(99)
    for _ in range(200):
        rows, cols = rng.integers(1, 10, size=2)
        z = rng.standard_normal((rows, cols))
        s = spectral.forward(z, kind, axis)
        assert s.re.shape == z.shape
        assert np.max(np.abs(spectral.inverse(s) - z)) < 1e-10
        assert abs(s.energy() - np.sum(z * z)) < 1e-10 * max(1.0, np.sum(z * z))


def test_linearity(np_rng):
    x, y = np_rng.standard_normal((4, 6)), np_rng.standard_normal((4, 6))
    for kind in ('dft', 'dct'):
        lhs = spectral.forward(2.0 * x - 3.0 * y, kind)
        sx, sy = spectral.forward(x, kind), spectral.forward(y, kind)
        np.testing.assert_allclose(lhs.re, 2.0 * sx.re - 3.0 * sy.re, atol=1e-10)
        np.testing.assert_allclose(lhs.im, 2.0 * sx.im - 3.0 * sy.im, atol=1e-10)


def test_axis_semantics(np_rng):
    z = np_rng.standard_normal((5, 7))
    for kind in ('dft', 'dct'):
        emb = spectral.forward(z, kind, 'embedding')
        tok = spectral.forward(z.T, kind, 'token')
        np.testing.assert_allclose(emb.re.T, tok.re, atol=1e-12)
        np.testing.assert_allclose(emb.im.T, tok.im, atol=1e-12)


def test_inverse_examples():
    zero = spectral.Spectrum(kind=TransformKind.dft, axis=Axis.embedding, re=np.zeros((2, 4)), im=np.zeros((2, 4)))
    np.testing.assert_array_equal(spectral.inverse(zero), np.zeros((2, 4)))

    dc = np.zeros((1, 4))
    dc[0, 0] = np.sqrt(4) * 2.0
    s = spectral.Spectrum(kind=TransformKind.dft, axis=Axis.embedding, re=dc, im=np.zeros((1, 4)))
    np.testing.assert_allclose(spectral.inverse(s), [[2.0, 2.0, 2.0, 2.0]], atol=1e-12)


def test_operator_agrees_with_forward(np_rng):
    z = np_rng.standard_normal((3, 6))
    for kind in ('dft', 'dct'):
        f_re, f_im = spectral.operator(kind, 6)
        s = spectral.forward(z, kind)
        np.testing.assert_allclose(z @ f_re.T, s.re, atol=1e-12)
        np.testing.assert_allclose(z @ f_im.T, s.im, atol=1e-12)
        # real part of the unitary inverse recovers the input
        np.testing.assert_allclose(s.re @ f_re + s.im @ f_im, z, atol=1e-10)


def test_errors():
    with pytest.raises(InvalidInput):
        spectral.forward(np.zeros((2, 0)), 'dft')
    with pytest.raises(InvalidInput):
        spectral.forward(np.ones((2, 2)), 'none')
    with pytest.raises(InvalidInput):
        spectral.Spectrum(kind=TransformKind.dft, axis=Axis.embedding, re=np.zeros((2, 3)), im=np.zeros((3, 2)))
    with pytest.raises(InvalidInput):
        spectral.Spectrum(kind=TransformKind.dct, axis=Axis.embedding, re=np.zeros((1, 2)), im=np.ones((1, 2)))
