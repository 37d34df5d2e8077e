"""
Dense 64-bit matrix helpers: one-sided Jacobi SVD, norms and low-rank approximation.

Matrices are plain 2-D ``numpy.ndarray`` values of dtype float64 with tokens as
rows. Nothing here mutates its arguments.
"""
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

from .exceptions import InvalidInput, InvalidRank, ShapeError
from .foura_schema import NormKind

Matrix = np.ndarray

JACOBI_TOL = 1e-12
MAX_SWEEPS = 80


@dataclass(frozen=True)
class SvdResult:
    """
    u: k1 x k1 orthonormal, sigma: descending non-negative (length min(k1, k2)),
    v: k2 x k2 orthonormal, with m = u[:, :n] @ diag(sigma) @ v[:, :n].T
    """
    u: Matrix
    sigma: np.ndarray
    v: Matrix

    def reconstruct(self) -> Matrix:
        n = self.sigma.shape[0]
        return (self.u[:, :n] * self.sigma) @ self.v[:, :n].T


def as_matrix(m, name: str = 'matrix') -> Matrix:
    """
    Validate and convert to a finite, non-empty float64 2-D array.
    """
    arr = np.array(m, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got {arr.ndim} dimensions")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InvalidInput(f"{name} must have at least one row and one column, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInput(f"{name} holds NaN or Inf entries")
    return arr


def _jacobi_columns(a: Matrix) -> Tuple[Matrix, Matrix]:
    # Hestenes one-sided Jacobi on a tall matrix (rows >= cols). Returns the
    # rotated columns (mutually orthogonal) and the accumulated rotations.
    work = a.copy()
    n = work.shape[1]
    v = np.eye(n)
    # columns below this squared norm are numerically zero and never rotated
    floor = (np.finfo(np.float64).eps * np.sqrt(np.sum(a * a))) ** 2

    for _ in range(MAX_SWEEPS):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                ap, aq = work[:, p], work[:, q]
                alpha = ap @ ap
                beta = aq @ aq
                gamma = ap @ aq
                if min(alpha, beta) <= floor or gamma == 0.0 or abs(gamma) <= JACOBI_TOL * np.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = np.copysign(1.0, zeta) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                new_p = c * ap - s * aq
                new_q = s * ap + c * aq
                work[:, p], work[:, q] = new_p, new_q
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
        if not rotated:
            break
    return work, v


def _complete_basis(u_part: Matrix, size: int) -> Matrix:
    """Extend orthonormal columns to a full size x size orthonormal basis."""
    k = u_part.shape[1]
    if k == size:
        return u_part
    q, _ = np.linalg.qr(np.hstack([u_part, np.eye(size)]))
    return np.hstack([u_part, q[:, k:size]])


def _tall_svd(a: Matrix) -> Tuple[Matrix, np.ndarray, Matrix]:
    m, n = a.shape
    cols, v = _jacobi_columns(a)
    sigma = np.sqrt(np.sum(cols * cols, axis=0))

    order = np.argsort(-sigma, kind='stable')
    sigma, cols, v = sigma[order], cols[:, order], v[:, order]

    # columns with negligible norm carry no direction; rebuild them from the complement
    cutoff = max(m, n) * np.finfo(np.float64).eps * (sigma[0] if sigma.size else 0.0)
    nonzero = int(np.sum(sigma > cutoff)) if sigma[0] > 0 else 0
    u_part = cols[:, :nonzero] / sigma[:nonzero]
    u = _complete_basis(u_part, m)
    sigma = np.where(np.arange(n) < nonzero, sigma, 0.0)
    return u, sigma, v


def _fix_signs(u: Matrix, v: Matrix, n: int) -> Tuple[Matrix, Matrix]:
    # largest-magnitude entry of every left singular vector is non-negative
    u, v = u.copy(), v.copy()
    for j in range(u.shape[1]):
        if u[np.argmax(np.abs(u[:, j])), j] < 0:
            u[:, j] = -u[:, j]
            if j < n:
                v[:, j] = -v[:, j]
    return u, v


def svd(m: Matrix) -> SvdResult:
    """
    Full singular value decomposition by one-sided Jacobi rotations.

    Parameters:
        -m: Matrix
            -finite k1 x k2 matrix
    Returns:
        SvdResult with u (k1 x k1), sigma (min(k1, k2), descending), v (k2 x k2)
    """
    a = as_matrix(m)
    # rotate a copy scaled to unit max-abs entry so column norms neither overflow nor underflow
    scale = float(np.max(np.abs(a)))
    if scale > 0:
        a = a / scale
    rows, cols = a.shape
    if rows >= cols:
        u, sigma, v = _tall_svd(a)
    else:
        ut, sigma, vt = _tall_svd(a.T)
        u, v = vt, ut
    if scale > 0:
        sigma = sigma * scale
    u, v = _fix_signs(u, v, sigma.shape[0])
    return SvdResult(u=u, sigma=sigma, v=v)


def _check_rank(a: Matrix, r: int, strict: bool):
    limit = min(a.shape)
    upper_ok = r < limit if strict else r <= limit
    if not isinstance(r, (int, np.integer)) or r < 1 or not upper_ok:
        bound = f"< {limit}" if strict else f"<= {limit}"
        raise InvalidRank(f"rank {r} out of range: need 1 <= r {bound} for a {a.shape[0]}x{a.shape[1]} matrix")


def low_rank_approx(m: Matrix, r: int) -> Matrix:
    """Best rank-r approximation U diag(sigma_1..sigma_r, 0, ...) V^T."""
    a = as_matrix(m)
    _check_rank(a, r, strict=False)
    dec = svd(a)
    return (dec.u[:, :r] * dec.sigma[:r]) @ dec.v[:, :r].T


def reconstruction_error(m: Matrix, r: int, norm: Union[NormKind, str] = NormKind.spectral) -> float:
    """
    Eckart-Young error of the best rank-r approximation: sigma_{r+1} in the spectral
    norm, sqrt(sum_{i>r} sigma_i^2) in the Frobenius norm.
    """
    a = as_matrix(m)
    _check_rank(a, r, strict=True)
    norm = NormKind(norm)
    sigma = svd(a).sigma
    if norm == NormKind.spectral:
        return float(sigma[r])
    return _scaled_norm(sigma[r:])


def _scaled_norm(values: np.ndarray) -> float:
    # sqrt(sum x^2) computed on x / max|x|
    scale = float(np.max(np.abs(values))) if values.size else 0.0
    if scale == 0.0:
        return 0.0
    scaled = values / scale
    return scale * float(np.sqrt(np.sum(scaled * scaled)))


def frobenius_norm(m: Matrix) -> float:
    return _scaled_norm(as_matrix(m))


def spectral_norm(m: Matrix) -> float:
    a = as_matrix(m)
    return float(svd(a).sigma[0])


def top_subspaces(m: Matrix, r: int) -> Tuple[Matrix, Matrix]:
    """Top-r left and right singular vectors (k1 x r, k2 x r)."""
    a = as_matrix(m)
    _check_rank(a, r, strict=False)
    dec = svd(a)
    return dec.u[:, :r], dec.v[:, :r]
