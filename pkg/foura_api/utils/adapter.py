"""
LoRA and frequency-domain adapter layers with an adaptive rank gate.

Tokens are rows: a layer maps z_in (d x k1) to z_in @ W0 + branch(z_in) (d x k2).
The gated branch is

    F^-1( (A F(z)) * (alpha * mask) @ B^T ),     mask = gate(A F(z))

with alpha folded into the rank channels. Forward passes are recorded on a
:class:`~foura_api.utils.tape.Tape` so the same code path serves inference
and training.
"""
import dataclasses
from dataclasses import dataclass
from typing import Dict, Iterable, Optional, Sequence, Tuple

import numpy as np

from . import spectral
from .exceptions import InvalidGateState, InvalidInput, ShapeError
from .foura_schema import Axis, GateMode, GATED_TRANSFORMS, TransformKind
from .linalg_core import Matrix, as_matrix
from .prng import Xoshiro256StarStar
from .tape import Tape

GATE_INIT_STD = 0.02


@dataclass(frozen=True)
class GateState:
    """
    Two-layer gate MLP over mean-pooled rank channels:
    u = g2 tanh(g1 v + b1) + b2, soft mask = sigmoid(u), hard mask = soft > threshold.
    """
    g1: Matrix
    g2: Matrix
    b1: np.ndarray
    b2: np.ndarray
    threshold: float = 0.5
    mode: GateMode = GateMode.soft
    frozen_mask: Optional[np.ndarray] = None
    entropy_weight: float = 1e-3

    def __post_init__(self):
        r = self.g1.shape[0]
        for name, arr, shape in (('g1', self.g1, (r, r)), ('g2', self.g2, (r, r)),
                                 ('b1', self.b1, (r,)), ('b2', self.b2, (r,))):
            if arr.shape != shape:
                raise ShapeError(f"gate {name} has shape {arr.shape}, expected {shape}")
        if not 0.0 < self.threshold < 1.0:
            raise InvalidGateState(f"threshold must lie in (0, 1), got {self.threshold}")
        if self.entropy_weight < 0:
            raise InvalidGateState("entropy weight must be >= 0")
        mode = GateMode(self.mode)
        if mode == GateMode.absent:
            raise InvalidGateState("a gate state cannot be in mode 'absent'")
        if mode == GateMode.frozen:
            if self.frozen_mask is None:
                raise InvalidGateState("frozen mode requires a frozen mask")
            if self.frozen_mask.shape != (r,):
                raise ShapeError(f"frozen mask has shape {self.frozen_mask.shape}, expected ({r},)")
            if not np.all((self.frozen_mask == 0.0) | (self.frozen_mask == 1.0)):
                raise InvalidGateState("frozen mask entries must be 0 or 1")

    @property
    def rank(self) -> int:
        return self.g1.shape[0]

    @classmethod
    def initial(cls, rank: int, rng: Xoshiro256StarStar, std: float = GATE_INIT_STD, **kwargs) -> 'GateState':
        return cls(g1=rng.normal((rank, rank), std), g2=rng.normal((rank, rank), std),
                   b1=np.zeros(rank), b2=np.zeros(rank), **kwargs)

    def with_mode(self, mode, frozen_mask: Sequence[float] = None) -> 'GateState':
        mask = None if frozen_mask is None else np.asarray(frozen_mask, dtype=np.float64)
        return dataclasses.replace(self, mode=GateMode(mode), frozen_mask=mask)


@dataclass(frozen=True)
class MaskReport:
    soft_mask: np.ndarray
    hard_mask: np.ndarray
    effective_rank: int

    @classmethod
    def from_soft(cls, soft: np.ndarray, threshold: float) -> 'MaskReport':
        soft = np.asarray(soft, dtype=np.float64).reshape(-1)
        hard = (soft > threshold).astype(np.float64)
        return cls(soft_mask=soft, hard_mask=hard, effective_rank=int(hard.sum()))


@dataclass(frozen=True)
class AdapterLayer:
    """
    Frozen base weights w0 (k1 x k2) plus trainable factors a (r x k1) and b (k2 x r).
    """
    w0: Matrix
    a: Matrix
    b: Matrix
    alpha: float = 1.0
    transform: TransformKind = TransformKind.none
    axis: Axis = Axis.embedding
    gate: Optional[GateState] = None

    def __post_init__(self):
        k1, k2 = self.w0.shape
        r = self.a.shape[0]
        if self.a.shape != (r, k1):
            raise ShapeError(f"a has shape {self.a.shape}, expected ({r}, {k1})")
        if self.b.shape != (k2, r):
            raise ShapeError(f"b has shape {self.b.shape}, expected ({k2}, {r})")
        if not np.isfinite(self.alpha):
            raise InvalidInput("alpha must be finite")
        transform = TransformKind(self.transform)
        if transform == TransformKind.none and self.gate is not None:
            raise InvalidGateState("plain LoRA (transform 'none') carries no gate")
        if self.gate is not None and self.gate.rank != r:
            raise ShapeError(f"gate rank {self.gate.rank} differs from adapter rank {r}")

    @property
    def rank(self) -> int:
        return self.a.shape[0]

    @property
    def k1(self) -> int:
        return self.w0.shape[0]

    @property
    def k2(self) -> int:
        return self.w0.shape[1]

    @property
    def is_gated(self) -> bool:
        return self.transform in GATED_TRANSFORMS

    def replace(self, **changes) -> 'AdapterLayer':
        return dataclasses.replace(self, **changes)

    def params(self) -> Dict[str, np.ndarray]:
        """Trainable arrays by name."""
        params = {'a': self.a, 'b': self.b}
        if self.gate is not None:
            params.update({'g1': self.gate.g1, 'b1': self.gate.b1, 'g2': self.gate.g2, 'b2': self.gate.b2})
        return params

    def with_params(self, params: Dict[str, np.ndarray]) -> 'AdapterLayer':
        layer = self.replace(a=params.get('a', self.a), b=params.get('b', self.b))
        if self.gate is not None:
            gate = dataclasses.replace(self.gate, **{key: params[key] for key in ('g1', 'b1', 'g2', 'b2')
                                                     if key in params})
            layer = layer.replace(gate=gate)
        return layer


def init_layer(w0: Matrix, rank: int, rng: Xoshiro256StarStar,
               transform=TransformKind.none, axis=Axis.embedding, gate_mode=GateMode.absent,
               alpha: float = 1.0, threshold: float = 0.5, entropy_weight: float = 1e-3,
               frozen_mask: Sequence[float] = None) -> AdapterLayer:
    """
    Fresh adapter: a ~ N(0, 1/k1), b = 0, gate weights ~ N(0, 0.02^2), gate biases 0.
    """
    transform, axis, gate_mode = TransformKind(transform), Axis(axis), GateMode(gate_mode)
    k1, k2 = w0.shape
    a = rng.normal((rank, k1), 1.0 / np.sqrt(k1))
    b = np.zeros((k2, rank))
    gate = None
    if transform != TransformKind.none and gate_mode != GateMode.absent:
        mask = None if frozen_mask is None else np.asarray(frozen_mask, dtype=np.float64)
        gate = GateState.initial(rank, rng, threshold=threshold, mode=gate_mode,
                                 frozen_mask=mask, entropy_weight=entropy_weight)
    return AdapterLayer(w0=w0, a=a, b=b, alpha=alpha, transform=transform, axis=axis, gate=gate)


# Tracing ---------------------------------------------------------------------------------------

@dataclass
class BoundLayer:
    """Tape leaves of one layer's parameters."""
    layer: AdapterLayer
    nodes: Dict[str, int]


def bind(tape: Tape, layer: AdapterLayer, prefix: str = '') -> BoundLayer:
    nodes = {key: tape.leaf(value, name=prefix + key) for key, value in layer.params().items()}
    nodes['w0'] = tape.leaf(layer.w0, name=prefix + 'w0')
    return BoundLayer(layer=layer, nodes=nodes)


def trace_gate(tape: Tape, gate: Optional[GateState], nodes: Dict[str, int], z_lr: int,
               rank: int) -> Tuple[int, Optional[int]]:
    """
    Returns (mask node, soft mask node). The soft node is None when no gate is trained.
    """
    if gate is None:
        return tape.leaf(np.ones((1, rank))), None
    mode = GateMode(gate.mode)
    if mode == GateMode.frozen:
        if gate.frozen_mask is None:
            raise InvalidGateState("frozen mode requires a frozen mask")
        return tape.leaf(gate.frozen_mask.reshape(1, -1)), None

    pooled = tape.mean_pool(z_lr)
    hidden = tape.tanh(tape.add(tape.matmul(pooled, tape.transpose(nodes['g1'])), nodes['b1']))
    logits = tape.add(tape.matmul(hidden, tape.transpose(nodes['g2'])), nodes['b2'])
    soft = tape.sigmoid(logits)
    if mode == GateMode.hard_adaptive:
        return tape.threshold(soft, gate.threshold), soft
    return soft, soft


@dataclass
class BranchTrace:
    branch: int
    mask: int
    soft: Optional[int]


def trace_branch(tape: Tape, bound: BoundLayer, z: int, alpha: float = None,
                 mask_override: np.ndarray = None) -> BranchTrace:
    """
    Record the adapter branch for input node z. ``mask_override`` replaces the gate with a
    fixed channel mask.
    """
    layer, nodes = bound.layer, bound.nodes
    alpha = layer.alpha if alpha is None else alpha
    transform = TransformKind(layer.transform)
    axis = Axis(layer.axis)

    if transform == TransformKind.none:
        z_lr = tape.matmul(z, tape.transpose(nodes['a']))
        if mask_override is not None:
            mask = tape.leaf(np.asarray(mask_override, dtype=np.float64).reshape(1, -1))
        else:
            mask = tape.leaf(np.ones((1, layer.rank)))
        scaled = tape.mul(z_lr, tape.scale(mask, alpha))
        return BranchTrace(branch=tape.matmul(scaled, tape.transpose(nodes['b'])), mask=mask, soft=None)

    z_value = tape.value(z)
    in_size = z_value.shape[1] if axis == Axis.embedding else z_value.shape[0]
    out_size = layer.k2 if axis == Axis.embedding else z_value.shape[0]
    fwd_re, fwd_im = spectral.operator(transform, in_size)
    inv_re, inv_im = spectral.operator(transform, out_size)
    complex_path = transform == TransformKind.dft

    a_t, b_t = tape.transpose(nodes['a']), tape.transpose(nodes['b'])
    lr_re = tape.matmul(tape.transform_forward(z, fwd_re, axis), a_t)
    lr_im = tape.matmul(tape.transform_forward(z, fwd_im, axis), a_t) if complex_path else None

    if mask_override is not None:
        mask, soft = tape.leaf(np.asarray(mask_override, dtype=np.float64).reshape(1, -1)), None
    else:
        mask, soft = trace_gate(tape, layer.gate, nodes, lr_re, layer.rank)
    channel_scale = tape.scale(mask, alpha)

    y_re = tape.matmul(tape.mul(lr_re, channel_scale), b_t)
    y_im = tape.matmul(tape.mul(lr_im, channel_scale), b_t) if complex_path else None
    branch = tape.transform_inverse(y_re, y_im, inv_re, inv_im, axis)
    return BranchTrace(branch=branch, mask=mask, soft=soft)


def trace_layer(tape: Tape, bound: BoundLayer, z: int, alpha: float = None,
                mask_override: np.ndarray = None) -> Tuple[int, BranchTrace]:
    base = tape.matmul(z, bound.nodes['w0'])
    trace = trace_branch(tape, bound, z, alpha=alpha, mask_override=mask_override)
    return tape.add(base, trace.branch), trace


def report_from_trace(tape: Tape, layer: AdapterLayer, trace: BranchTrace) -> MaskReport:
    gate = layer.gate
    threshold = gate.threshold if gate is not None else 0.5
    # frozen and ungated layers report their fixed 0/1 mask as the soft mask
    source = trace.soft if trace.soft is not None else trace.mask
    return MaskReport.from_soft(tape.value(source), threshold)


# Operations ------------------------------------------------------------------------------------

def _check_input(layer: AdapterLayer, z_in) -> Matrix:
    z = as_matrix(z_in, 'z_in')
    if z.shape[1] != layer.k1:
        raise ShapeError(f"z_in has {z.shape[1]} columns, layer expects k1 = {layer.k1}")
    return z


def lora_forward(layer: AdapterLayer, z_in: Matrix) -> Matrix:
    """z_in W0 + alpha (z_in A^T) B^T."""
    if TransformKind(layer.transform) != TransformKind.none:
        raise InvalidInput(f"lora_forward needs transform 'none', layer has '{layer.transform.value}'")
    z = _check_input(layer, z_in)
    tape = Tape()
    out, _ = trace_layer(tape, bind(tape, layer), tape.leaf(z))
    return tape.value(out)


def foura_forward(layer: AdapterLayer, z_in: Matrix) -> Tuple[Matrix, MaskReport]:
    """
    Gated frequency-domain forward pass.

    Returns:
        (output d x k2, MaskReport of the gate for this input)
    """
    if not layer.is_gated:
        raise InvalidInput(f"foura_forward needs a frequency transform, layer has '{layer.transform.value}'")
    if layer.gate is not None and GateMode(layer.gate.mode) == GateMode.frozen and layer.gate.frozen_mask is None:
        raise InvalidGateState("frozen mode requires a frozen mask")
    z = _check_input(layer, z_in)
    tape = Tape()
    out, trace = trace_layer(tape, bind(tape, layer), tape.leaf(z))
    return tape.value(out), report_from_trace(tape, layer, trace)


def forward(layer: AdapterLayer, z_in: Matrix) -> Tuple[Matrix, Optional[MaskReport]]:
    if layer.is_gated:
        return foura_forward(layer, z_in)
    return lora_forward(layer, z_in), None


def adapter_branch(layer: AdapterLayer, z_in: Matrix, alpha: float = None,
                   mask: Sequence[float] = None) -> Matrix:
    """The adapter branch alone (output minus base), optionally at another strength or fixed mask."""
    z = _check_input(layer, z_in)
    tape = Tape()
    trace = trace_branch(tape, bind(tape, layer), tape.leaf(z), alpha=alpha,
                         mask_override=None if mask is None else np.asarray(mask, dtype=np.float64))
    return tape.value(trace.branch)


def gate(gs: GateState, z_lr: Matrix) -> MaskReport:
    """
    Evaluate the gate on low-rank activations z_lr (d x r).
    """
    z = as_matrix(z_lr, 'z_lr')
    if z.shape[1] != gs.rank:
        raise ShapeError(f"z_lr has {z.shape[1]} columns, gate rank is {gs.rank}")
    if GateMode(gs.mode) == GateMode.frozen:
        return MaskReport.from_soft(gs.frozen_mask, gs.threshold)
    tape = Tape()
    nodes = {key: tape.leaf(getattr(gs, key)) for key in ('g1', 'b1', 'g2', 'b2')}
    _, soft = trace_gate(tape, gs, nodes, tape.leaf(z), gs.rank)
    return MaskReport.from_soft(tape.value(soft), gs.threshold)


def materialize_delta_w(layer: AdapterLayer, mask: Sequence[float]) -> Matrix:
    """
    The k1 x k2 matrix of z -> F^-1(B diag(alpha mask) A F(z)), built by pushing the
    identity basis through the branch (row i is the image of basis vector e_i).
    """
    mask = np.asarray(mask, dtype=np.float64).reshape(-1)
    if mask.shape[0] != layer.rank:
        raise ShapeError(f"mask has length {mask.shape[0]}, adapter rank is {layer.rank}")
    return adapter_branch(layer, np.eye(layer.k1), mask=mask)


def _check_mask_values(soft_mask) -> np.ndarray:
    m = np.asarray(soft_mask, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(m)) or np.any(m < 0.0) or np.any(m > 1.0):
        raise InvalidInput("mask entries must lie in [0, 1]")
    return m


def gate_entropy_penalty(soft_mask: Sequence[float]) -> float:
    """Sum of binary entropies -m ln m - (1-m) ln(1-m), with 0 ln 0 = 0."""
    m = _check_mask_values(soft_mask)
    tape = Tape()
    return float(tape.value(tape.entropy_penalty(tape.leaf(m))))


def gate_sparsity_penalty(soft_mask: Sequence[float]) -> float:
    """Mask mass: the sum of mask entries."""
    return float(np.sum(_check_mask_values(soft_mask)))


def calibrate_frozen_mask(layer: AdapterLayer, batches: Iterable[Matrix]) -> AdapterLayer:
    """
    Freeze the gate to the elementwise majority of hard masks over a calibration batch.
    """
    if layer.gate is None:
        raise InvalidGateState("only gated layers can be calibrated")
    if GateMode(layer.gate.mode) == GateMode.frozen:
        return layer
    hard = [foura_forward(layer, z)[1].hard_mask for z in batches]
    if not hard:
        raise InvalidInput("calibration needs at least one batch")
    votes = np.mean(hard, axis=0)
    frozen = (votes > 0.5).astype(np.float64)
    return layer.replace(gate=layer.gate.with_mode(GateMode.frozen, frozen))


def inference_mask(layer: AdapterLayer, batches: Iterable[Matrix]) -> np.ndarray:
    """
    Channel mask an adapter applies at inference, averaged over a calibration batch:
    the mean soft mask in soft mode, the majority hard mask in hard_adaptive mode, the
    frozen mask in frozen mode, all ones for ungated layers.
    """
    if layer.gate is None:
        return np.ones(layer.rank)
    mode = GateMode(layer.gate.mode)
    if mode == GateMode.frozen:
        return layer.gate.frozen_mask.copy()
    reports = [foura_forward(layer, z)[1] for z in batches]
    if not reports:
        raise InvalidInput("calibration needs at least one batch")
    if mode == GateMode.soft:
        return np.mean([rep.soft_mask for rep in reports], axis=0)
    return (np.mean([rep.hard_mask for rep in reports], axis=0) > 0.5).astype(np.float64)


def parameter_count(layer: AdapterLayer, inference: bool = False) -> int:
    """
    Trainable scalars. At inference a frozen gate folds into the factors and its pruned
    channels drop out.
    """
    k1, k2, r = layer.k1, layer.k2, layer.rank
    if inference and layer.gate is not None and GateMode(layer.gate.mode) == GateMode.frozen:
        kept = int(layer.gate.frozen_mask.sum())
        return kept * (k1 + k2)
    count = r * (k1 + k2)
    if layer.gate is not None and not (inference and GateMode(layer.gate.mode) == GateMode.frozen):
        count += 2 * r * r + 2 * r
    return count
