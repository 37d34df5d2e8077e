"""
Training-free combination of adapters: summing adapter branches in output space and
composing noise estimates of a denoiser.
"""
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .adapter import AdapterLayer, adapter_branch, calibrate_frozen_mask, materialize_delta_w
from .analysis import projection_norm
from .exceptions import IncompatibleAdapters, InvalidGateState, InvalidInput, ShapeError
from .foura_schema import Axis, GateMode, MergeMode
from .linalg_core import Matrix, as_matrix
from .trainer import ToyDenoiser, base_noise, estimate_noise


@dataclass(frozen=True)
class MergeSpec:
    """
    Adapters with their strengths alpha_n. Epsilon composition also needs one weight w_n
    per adapter.
    """
    adapters: Sequence[Tuple[AdapterLayer, float]]
    mode: MergeMode = MergeMode.output_sum
    weights: Optional[Sequence[float]] = field(default=None)

    def __post_init__(self):
        if not self.adapters:
            raise InvalidInput("a merge needs at least one adapter")
        strengths = [alpha for _, alpha in self.adapters]
        if not np.all(np.isfinite(strengths)):
            raise InvalidInput("merge strengths must be finite")
        mode = MergeMode(self.mode)
        if mode == MergeMode.epsilon_compose and self.weights is None:
            raise InvalidInput("epsilon composition needs one weight per adapter")
        if mode == MergeMode.output_sum and self.weights is not None:
            raise InvalidInput("weights apply to epsilon composition only")
        if self.weights is not None:
            if len(self.weights) != len(self.adapters):
                raise InvalidInput("one weight per adapter is required")
            if not np.all(np.isfinite(self.weights)):
                raise InvalidInput("merge weights must be finite")


def _fixed_mask(layer: AdapterLayer) -> Optional[np.ndarray]:
    if layer.gate is None:
        return None
    if GateMode(layer.gate.mode) != GateMode.frozen:
        raise InvalidGateState("merged evaluation needs frozen masks; calibrate the adapter first")
    return layer.gate.frozen_mask


def check_compatible(layers: Sequence[AdapterLayer]):
    """Merged adapters must share w0 and the axis their branch runs along."""
    first = layers[0]
    for other in layers[1:]:
        if other.w0.shape != first.w0.shape:
            raise IncompatibleAdapters(f"w0 shape differs: {other.w0.shape} vs {first.w0.shape}")
        if Axis(other.axis) != Axis(first.axis):
            raise IncompatibleAdapters(f"axis differs: '{Axis(other.axis).value}' vs '{Axis(first.axis).value}'")
        if not np.array_equal(other.w0, first.w0):
            raise IncompatibleAdapters("w0 differs: adapters do not share base weights")


def merge_outputs(spec: MergeSpec, z_in: Matrix) -> Matrix:
    """
    Merged layer output, every branch at unit strength under its frozen mask.

    output_sum: base(z) + sum_n alpha_n * branch_n(z)
    epsilon_compose: compose_epsilon of base(z) with (base(z) + alpha_n * branch_n(z), base(z), w_n)
    """
    layers = [layer for layer, _ in spec.adapters]
    check_compatible(layers)
    z = as_matrix(z_in, 'z_in')
    base = z @ layers[0].w0
    branches = [strength * adapter_branch(layer, z, alpha=1.0, mask=_fixed_mask(layer))
                for layer, strength in spec.adapters]
    if MergeMode(spec.mode) == MergeMode.epsilon_compose:
        return compose_epsilon(base, [(base + branch, base, w) for branch, w in zip(branches, spec.weights)])
    out = base
    for branch in branches:
        out = out + branch
    return out


def compose_epsilon(base_eps: Matrix, concept_deltas: Iterable[Tuple[Matrix, Matrix, float]]) -> Matrix:
    """base_eps + sum_n w_n (eps_pos_n - eps_neg_n)"""
    base = np.asarray(base_eps, dtype=np.float64)
    out = base.copy()
    for eps_pos, eps_neg, weight in concept_deltas:
        pos, neg = np.asarray(eps_pos, dtype=np.float64), np.asarray(eps_neg, dtype=np.float64)
        if pos.shape != base.shape or neg.shape != base.shape:
            raise ShapeError(f"noise estimates {pos.shape} / {neg.shape} differ from base {base.shape}")
        out = out + weight * (pos - neg)
    return out


def frozen(layer: AdapterLayer, calibration: Iterable[Matrix] = None) -> AdapterLayer:
    """The layer with an input-independent mask, calibrating an adaptive gate if needed."""
    if layer.gate is None or GateMode(layer.gate.mode) == GateMode.frozen:
        return layer
    if calibration is None:
        raise InvalidGateState("an adaptive gate needs calibration batches to be frozen")
    return calibrate_frozen_mask(layer, calibration)


def merge_compatibility(a1: AdapterLayer, a2: AdapterLayer, r: int, calibration: Iterable[Matrix] = None) -> float:
    """
    Normalized projection of dW_1 onto the top-r subspace of dW_2, both materialized under
    frozen masks. Lower values mean less interference when merged.
    """
    if a1.w0.shape != a2.w0.shape:
        raise IncompatibleAdapters(f"adapter shapes {a1.w0.shape} and {a2.w0.shape} differ")
    calibration = list(calibration) if calibration is not None else None
    deltas = []
    for layer in (a1, a2):
        layer = frozen(layer, calibration)
        mask = _fixed_mask(layer)
        deltas.append(materialize_delta_w(layer, np.ones(layer.rank) if mask is None else mask))
    return projection_norm(deltas[0], deltas[1], r, normalized=True)


def composite_denoise(model: ToyDenoiser, adapters: Sequence[Tuple[AdapterLayer, AdapterLayer]],
                      weights: Sequence[float], x_start: Matrix) -> Tuple[Matrix, List[Matrix]]:
    """
    Refine x_start with the base denoiser, adding w_n (eps_n - eps_base) for every adapter
    set n at each step.

    Returns:
        (final x, per-step composed noise estimates)
    """
    if len(adapters) != len(weights):
        raise InvalidInput("one weight per adapter set is required")
    x = as_matrix(x_start, 'x_start')
    estimates = []
    for t in range(model.timesteps, 0, -1):
        base_eps = base_noise(model, x, t)
        deltas = [(estimate_noise(model, x, t, layers=tuple(layers))[0], base_eps, w)
                  for layers, w in zip(adapters, weights)]
        eps = compose_epsilon(base_eps, deltas)
        estimates.append(eps)
        x = x - model.step_size * eps
    return x, estimates
