"""
Unitary DFT and orthonormal DCT-II along one axis of a tokens x embedding matrix.

The DFT uses the kernel exp(-j 2 pi f k / K) / sqrt(K) on both directions.
The DCT-II is computed from the DFT of the double-length even extension
[z, reversed(z)], then orthonormalized. Both are applied as direct O(K^2)
kernel products.
"""
from dataclasses import dataclass
from functools import lru_cache
from typing import Tuple, Union

import numpy as np

from .exceptions import InvalidInput, ShapeError
from .foura_schema import Axis, TransformKind
from .linalg_core import Matrix


@dataclass(frozen=True)
class Spectrum:
    kind: TransformKind
    axis: Axis
    re: Matrix
    im: Matrix

    def __post_init__(self):
        if self.re.shape != self.im.shape:
            raise InvalidInput(f"spectrum parts differ in shape: {self.re.shape} vs {self.im.shape}")
        if self.kind == TransformKind.dct and np.any(self.im != 0.0):
            raise InvalidInput("a DCT spectrum has no imaginary part")

    def energy(self) -> float:
        return float(np.sum(self.re ** 2) + np.sum(self.im ** 2))


@lru_cache(maxsize=64)
def _dft_kernel(size: int) -> Tuple[Matrix, Matrix]:
    # reduce f*k modulo K before scaling so large products keep full precision
    f = np.arange(size)
    phase = np.outer(f, f) % size
    angle = -2.0 * np.pi * phase / size
    scale = 1.0 / np.sqrt(size)
    re, im = np.cos(angle) * scale, np.sin(angle) * scale
    re.setflags(write=False)
    im.setflags(write=False)
    return re, im


def _rows_dft(z: Matrix) -> Tuple[Matrix, Matrix]:
    re, im = _dft_kernel(z.shape[1])
    # kernel is symmetric
    return z @ re, z @ im


def _rows_dct(z: Matrix) -> Matrix:
    size = z.shape[1]
    extended = np.hstack([z, z[:, ::-1]])
    ext_re, ext_im = _rows_dft(extended)
    # undo the 1/sqrt(2K) normalization of the 2K-point transform
    ext_re, ext_im = ext_re[:, :size] * np.sqrt(2 * size), ext_im[:, :size] * np.sqrt(2 * size)

    f = np.arange(size)
    shift = -np.pi * f / (2.0 * size)
    coeff = (ext_re * np.cos(shift) - ext_im * np.sin(shift)) / 2.0

    weights = np.full(size, np.sqrt(2.0 / size))
    weights[0] = np.sqrt(1.0 / size)
    return coeff * weights


@lru_cache(maxsize=64)
def _dct_basis(size: int) -> Matrix:
    """Rows are the orthonormal DCT-II basis vectors, built through the even extension."""
    basis = _rows_dct(np.eye(size)).T
    basis.setflags(write=False)
    return basis


def _check_kind(kind) -> TransformKind:
    kind = TransformKind(kind)
    if kind == TransformKind.none:
        raise InvalidInput("transform kind 'none' has no spectrum")
    return kind


def _oriented(z: Matrix, axis: Axis) -> Matrix:
    return z if axis == Axis.embedding else z.T


def forward(z: Matrix, kind: Union[TransformKind, str] = TransformKind.dct,
            axis: Union[Axis, str] = Axis.embedding) -> Spectrum:
    """
    Transform every row (axis=embedding) or every column (axis=token) of z.

    Parameters:
        -z: Matrix
            -tokens x embedding activations
        -kind: TransformKind
            -dft, dct or identity
        -axis: Axis
            -embedding (default) or token
    """
    kind, axis = _check_kind(kind), Axis(axis)
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got {z.ndim} dimensions")
    if 0 in z.shape:
        raise InvalidInput(f"cannot transform an empty axis, shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise InvalidInput("input holds NaN or Inf entries")

    rows = _oriented(z, axis)
    if kind == TransformKind.dft:
        re, im = _rows_dft(rows)
    elif kind == TransformKind.dct:
        re, im = _rows_dct(rows), np.zeros_like(rows)
    else:
        re, im = rows.copy(), np.zeros_like(rows)

    return Spectrum(kind=kind, axis=axis, re=_oriented(re, axis), im=_oriented(im, axis))


def inverse(s: Spectrum) -> Matrix:
    """
    Inverse transform; on the DFT path the real part of the complex result is returned.
    """
    if s.re.shape != s.im.shape:
        raise InvalidInput(f"spectrum parts differ in shape: {s.re.shape} vs {s.im.shape}")
    kind = _check_kind(s.kind)
    re, im = _oriented(s.re, s.axis), _oriented(s.im, s.axis)

    if kind == TransformKind.dft:
        k_re, k_im = _dft_kernel(re.shape[1])
        # Re((X_re + j X_im) conj(T)) with T symmetric
        out = re @ k_re + im @ k_im
    elif kind == TransformKind.dct:
        out = re @ _dct_basis(re.shape[1])
    else:
        out = re.copy()
    return _oriented(out, s.axis)


def operator(kind: Union[TransformKind, str], size: int) -> Tuple[Matrix, Matrix]:
    """
    The size x size forward operator F = F_re + j F_im with X = F z for a column signal z.
    The unitary inverse's real part is x = F_re^T X_re + F_im^T X_im.
    """
    kind = _check_kind(kind)
    if size < 1:
        raise InvalidInput("transform length must be >= 1")
    if kind == TransformKind.dft:
        return _dft_kernel(size)
    if kind == TransformKind.dct:
        return _dct_basis(size), np.zeros((size, size))
    return np.eye(size), np.zeros((size, size))
