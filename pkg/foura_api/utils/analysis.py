"""
Analytical measures on materialized adapter weights: singular value spread, the
stability-based generalization bound, amplification of base-weight subspaces, subspace
overlap between adapters and the output autocorrelation split.
"""
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
import pandas as pd

from .adapter import AdapterLayer, adapter_branch, inference_mask, materialize_delta_w
from .exceptions import (DegenerateBound, DegenerateProjection, DegenerateSubspace, InvalidInput,
                         ShapeError)
from .foura_schema import NormKind, Task
from .linalg_core import Matrix, as_matrix, frobenius_norm, reconstruction_error, svd, top_subspaces
from .trainer import ToyDenoiser, base_noise, refine

PROJECTION_FLOOR = 1e-12

DEFAULT_ALPHAS = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)


def tail_energy_ratio(sigmas: Sequence[float], r: int) -> float:
    """sum_{i>r} sigma_i^2 / sum sigma_i^2, 0 for an all-zero spectrum."""
    s = np.asarray(sigmas, dtype=np.float64)
    if not 0 <= r <= s.shape[0]:
        raise InvalidInput(f"r = {r} outside 0..{s.shape[0]}")
    peak = float(np.max(np.abs(s))) if s.size else 0.0
    if peak == 0.0:
        return 0.0
    s = s / peak
    return float(np.sum(s[r:] ** 2)) / float(np.sum(s * s))


@dataclass(frozen=True)
class SpreadReport:
    delta_w: Matrix
    sigmas: np.ndarray

    def tail_energy_ratio(self, r: int) -> float:
        return tail_energy_ratio(self.sigmas, r)

    def top_r_error(self, r: int, norm=NormKind.spectral) -> float:
        return reconstruction_error(self.delta_w, r, norm)


def spread_report(delta_w: Matrix) -> SpreadReport:
    m = as_matrix(delta_w, 'delta_w')
    return SpreadReport(delta_w=m, sigmas=svd(m).sigma)


@dataclass(frozen=True)
class BoundParams:
    """
    Inputs of the pointwise hypothesis stability bound.

    Parameters:
        -c: float
            -loss bound constant C > 0
        -rho: float
            -Lipschitz-type constant rho >= 0
        -lambda_min: float
            -smallest Hessian eigenvalue floor, >= 0
        -p: float
            -effective-rank ratio in (0, 1]
        -n: int
            -training set size
        -delta: float
            -confidence in (0, 1)
        -r_hat: float
            -empirical error >= 0
    """
    c: float = 1.0
    rho: float = 1.0
    lambda_min: float = 0.0
    p: float = 0.5
    n: int = 100
    delta: float = 0.1
    r_hat: float = 0.0


def generalization_bound(bp: BoundParams) -> float:
    """R_hat + sqrt((C^2 + 24 C rho^2 / (lambda_min + 2 (1 - p))) / (2 n delta))"""
    if not bp.c > 0:
        raise InvalidInput("C must be > 0")
    if bp.rho < 0 or bp.lambda_min < 0 or bp.r_hat < 0:
        raise InvalidInput("rho, lambda_min and r_hat must be >= 0")
    if not 0.0 < bp.p <= 1.0:
        raise InvalidInput(f"p must lie in (0, 1], got {bp.p}")
    if bp.n < 1:
        raise InvalidInput("n must be >= 1")
    if not 0.0 < bp.delta < 1.0:
        raise InvalidInput(f"delta must lie in (0, 1), got {bp.delta}")
    denominator = bp.lambda_min + 2.0 * (1.0 - bp.p)
    if denominator <= 0:
        raise DegenerateBound(f"lambda_min + 2 (1 - p) = {denominator} is not positive")
    inner = bp.c ** 2 + 24.0 * bp.c * bp.rho ** 2 / denominator
    return bp.r_hat + math.sqrt(inner / (2.0 * bp.n * bp.delta))


@dataclass(frozen=True)
class Amplification:
    dw_norm: float
    proj_norm: float
    factor: float


def _same_shape(a: Matrix, b: Matrix, what: str):
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shapes {a.shape} and {b.shape} differ")


def amplification_factor(w0: Matrix, delta_w: Matrix, r: int) -> Amplification:
    """
    ||dW||_F / ||U^T W0 V||_F with U, V the top-r singular vectors of dW.
    """
    base, delta = as_matrix(w0, 'w0'), as_matrix(delta_w, 'delta_w')
    _same_shape(base, delta, 'amplification_factor')
    u, v = top_subspaces(delta, r)
    proj = frobenius_norm(u.T @ base @ v)
    if proj < PROJECTION_FLOOR:
        raise DegenerateProjection(f"base weights project to {proj:.3g} on the adapter's top-{r} subspace")
    dw = frobenius_norm(delta)
    return Amplification(dw_norm=dw, proj_norm=proj, factor=dw / proj)


def projection_norm(delta_w1: Matrix, delta_w2: Matrix, r: int, normalized: bool = False) -> float:
    """
    ||U2^T dW1 V2||_F with U2, V2 the top-r singular vectors of dW2. The normalized
    variant divides by ||dW1||_F (0 when dW1 is zero).
    """
    first, second = as_matrix(delta_w1, 'delta_w1'), as_matrix(delta_w2, 'delta_w2')
    _same_shape(first, second, 'projection_norm')
    if frobenius_norm(second) < PROJECTION_FLOOR:
        raise DegenerateSubspace("cannot project onto the subspace of a zero matrix")
    u, v = top_subspaces(second, r)
    value = frobenius_norm(u.T @ first @ v)
    if not normalized:
        return value
    scale = frobenius_norm(first)
    return value / scale if scale > 0 else 0.0


@dataclass(frozen=True)
class Autocorrelation:
    base_term: Matrix
    adapter_term: Matrix
    cross_term: Matrix
    off_diag_ratio: float

    @property
    def total(self) -> Matrix:
        return self.base_term + self.adapter_term + self.cross_term


def autocorrelation_decomposition(w0: Matrix, delta_w: Matrix, z_in: Matrix) -> Autocorrelation:
    """
    Split R = z (W0 + dW)(W0 + dW)^T z^T into z W0 W0^T z^T, z dW dW^T z^T and the two
    mixed terms.
    """
    base, delta, z = as_matrix(w0, 'w0'), as_matrix(delta_w, 'delta_w'), as_matrix(z_in, 'z_in')
    _same_shape(base, delta, 'autocorrelation_decomposition')
    if z.shape[1] != base.shape[0]:
        raise ShapeError(f"z_in has {z.shape[1]} columns, weights have {base.shape[0]} rows")
    zb, zd = z @ base, z @ delta
    adapter = zd @ zd.T
    total = frobenius_norm(adapter)
    off = adapter - np.diag(np.diag(adapter))
    ratio = frobenius_norm(off) / total if total > 0 else 0.0
    return Autocorrelation(base_term=zb @ zb.T, adapter_term=adapter, cross_term=zb @ zd.T + zd @ zb.T,
                           off_diag_ratio=ratio)


def effective_rank_trace(trace) -> pd.DataFrame:
    """
    Gate records of a TrainTrace as rows of (step or timestep, layer, effective_rank,
    soft_mask_mean). toy_denoise traces report the evaluation refinement (t = T .. 1),
    matrix_fit traces report training steps.
    """
    if Task(trace.config.task) == Task.toy_denoise:
        key, ranks, means = 'timestep', trace.timestep_ranks, trace.timestep_soft_means
        labels = list(range(len(ranks), 0, -1))
    else:
        key, ranks, means = 'step', trace.effective_ranks, trace.soft_means
        labels = list(range(len(ranks)))
    if not ranks:
        raise InvalidInput("trace holds no gate records")

    rows = []
    for label, step_ranks, step_means in zip(labels, ranks, means):
        for layer, rank, mean in zip(trace.layer_names, step_ranks, step_means):
            rows.append({key: label, 'layer': layer, 'effective_rank': rank, 'soft_mask_mean': mean})
    return pd.DataFrame(rows, columns=[key, 'layer', 'effective_rank', 'soft_mask_mean'])


def materialized_delta(layer: AdapterLayer, calibration: Iterable[Matrix]) -> Matrix:
    """dW of the layer under the channel mask it applies at inference."""
    return materialize_delta_w(layer, inference_mask(layer, calibration))


def alpha_sweep(layer: AdapterLayer, probes: Sequence[Matrix], alphas: Sequence[float] = DEFAULT_ALPHAS,
                target_delta: Optional[Matrix] = None) -> pd.DataFrame:
    """
    Mean adapter-branch norm over probe batches at each strength, plus the fit loss against
    target_delta when one is given.
    """
    if not probes:
        raise InvalidInput("alpha sweep needs at least one probe batch")
    rows = []
    for alpha in alphas:
        if not np.isfinite(alpha):
            raise InvalidInput("alphas must be finite")
        branches = [adapter_branch(layer, z, alpha=alpha) for z in probes]
        row = {'alpha': float(alpha),
               'branch_norm': float(np.mean([frobenius_norm(b) for b in branches]))}
        if target_delta is not None:
            row['fit_loss'] = float(np.mean([np.mean((b - z @ target_delta) ** 2)
                                             for b, z in zip(branches, probes)]))
        rows.append(row)
    return pd.DataFrame(rows)


def denoise_sweep(model: ToyDenoiser, clean: Matrix, x_start: Matrix,
                  alphas: Sequence[float] = DEFAULT_ALPHAS) -> pd.DataFrame:
    """
    Denoising error of the adapted refinement at each strength next to the base model's
    error, with the mean effective rank of every layer over the refinement steps.
    """
    base_x, _, _ = refine(model, x_start, noise_fn=lambda x, t: base_noise(model, x, t))
    base_mse = float(np.mean((base_x - clean) ** 2))
    rows = []
    for alpha in alphas:
        if not np.isfinite(alpha):
            raise InvalidInput("alphas must be finite")
        x0, _, reports = refine(model, x_start, alpha=alpha)
        row = {'alpha': float(alpha), 'denoise_mse': float(np.mean((x0 - clean) ** 2)), 'base_mse': base_mse}
        for ix in range(len(model.layers)):
            row[f"mean_effective_rank_layer{ix}"] = float(np.mean([step[ix].effective_rank for step in reports]))
        rows.append(row)
    return pd.DataFrame(rows)
