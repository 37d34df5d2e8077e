"""
Toy training tasks for adapters: a planted matrix fit and a small iterative denoiser.

Every random draw comes from :mod:`foura_api.utils.prng` sub-streams derived from the
configured seed, so a TrainConfig fully determines its TrainTrace.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .adapter import (AdapterLayer, BranchTrace, MaskReport, bind, calibrate_frozen_mask, foura_forward,
                      init_layer, report_from_trace, trace_layer)
from .exceptions import InvalidInput, NonDifferentiable, TrainingDiverged
from .foura_schema import GateMode, Task, TrainConfig
from .linalg_core import svd
from .optim import optimizer_step
from .prng import Xoshiro256StarStar, derive_seed
from .tape import Tape

logger = logging.getLogger(__name__)

LOG_EVERY = 100
GRAD_CHECK_FLOOR = 1e-4
NOISE_SCALE = 1.0
PROTOTYPES = 4

# sub-stream salts
_BASE, _TARGET, _DATA, _ADAPTER, _EVAL, _PROBE = 1, 2, 3, 4, 5, 6


@dataclass
class TrainTrace:
    """
    Per-step losses and gate statistics of one run.

    effective_ranks / soft_means: one row per step, one column per layer.
    timestep_ranks / timestep_soft_means: toy_denoise evaluation, one row per refinement
    step (t = T .. 1), one column per layer.
    """
    config: TrainConfig
    layer_names: List[str]
    losses: List[float] = field(default_factory=list)
    penalties: List[float] = field(default_factory=list)
    effective_ranks: List[List[int]] = field(default_factory=list)
    soft_means: List[List[float]] = field(default_factory=list)
    timestep_ranks: List[List[int]] = field(default_factory=list)
    timestep_soft_means: List[List[float]] = field(default_factory=list)
    final_layers: Dict[str, AdapterLayer] = field(default_factory=dict)
    target_delta: Optional[np.ndarray] = None

    @property
    def final_loss(self) -> float:
        return self.losses[-1]


def _stream(cfg: TrainConfig, *salt: int) -> Xoshiro256StarStar:
    return Xoshiro256StarStar(derive_seed(cfg.seed, *salt))


def _frozen_mask(cfg: TrainConfig) -> Optional[List[float]]:
    if cfg.frozen_mask is None:
        return None
    return [float(bit) for bit in cfg.frozen_mask]


def _new_layer(cfg: TrainConfig, w0: np.ndarray, rng: Xoshiro256StarStar) -> AdapterLayer:
    mask = _frozen_mask(cfg)
    if GateMode(cfg.gate_mode) == GateMode.frozen and mask is None:
        mask = [1.0] * cfg.rank
    return init_layer(w0, cfg.rank, rng, transform=cfg.transform, axis=cfg.axis, gate_mode=cfg.gate_mode,
                      alpha=cfg.alpha, threshold=cfg.threshold, entropy_weight=cfg.lambda_entropy,
                      frozen_mask=mask)


def _trainable_keys(layer: AdapterLayer) -> List[str]:
    keys = ['a', 'b']
    if layer.gate is not None and GateMode(layer.gate.mode) != GateMode.frozen:
        keys += ['g1', 'b1', 'g2', 'b2']
    return keys


def _gate_penalty(tape: Tape, trace: BranchTrace, cfg: TrainConfig) -> Optional[int]:
    if trace.soft is None:
        return None
    terms = []
    if cfg.lambda_entropy > 0:
        terms.append(tape.scale(tape.entropy_penalty(trace.soft), cfg.lambda_entropy))
    if cfg.lambda_sparsity > 0:
        terms.append(tape.scale(tape.mask_mass(trace.soft), cfg.lambda_sparsity))
    if not terms:
        return None
    total = terms[0]
    for term in terms[1:]:
        total = tape.add(total, term)
    return total


class _Stepper:
    """Owns the parameters and optimizer state of one run."""

    def __init__(self, cfg: TrainConfig, layers: Dict[str, AdapterLayer]):
        self.cfg = cfg
        self.layers = dict(layers)
        self.state = {}

    def replace_layer(self, name: str, layer: AdapterLayer):
        # the trainable set may change (a frozen gate drops its weights): restart the optimizer
        self.layers[name] = layer
        self.state = {}

    def _params(self) -> Dict[str, np.ndarray]:
        params = {}
        for name, layer in self.layers.items():
            layer_params = layer.params()
            for key in _trainable_keys(layer):
                params[f"{name}.{key}"] = layer_params[key]
        return params

    def bind_all(self, tape: Tape):
        return {name: bind(tape, layer, prefix=f"{name}.") for name, layer in self.layers.items()}

    def apply(self, tape: Tape, loss: int, bound, step: int):
        value = float(tape.value(loss))
        if not np.isfinite(value):
            raise TrainingDiverged(f"loss became {value} at step {step}")
        wanted = {f"{name}.{key}": bound[name].nodes[key]
                  for name, layer in self.layers.items() for key in _trainable_keys(layer)}
        adjoints = tape.backward(loss, wrt=list(wanted.values()))
        grads = {key: adjoints[ix] for key, ix in wanted.items()}
        params, self.state = optimizer_step(self._params(), grads, self.state, self.cfg.lr, kind=self.cfg.optimizer)
        for name, layer in self.layers.items():
            prefix = f"{name}."
            self.layers[name] = layer.with_params({key[len(prefix):]: value for key, value in params.items()
                                                   if key.startswith(prefix)})


def _mean_loss(tape: Tape, terms: Sequence[int]) -> int:
    total = terms[0]
    for term in terms[1:]:
        total = tape.add(total, term)
    return tape.scale(total, 1.0 / len(terms))


# Gradient check --------------------------------------------------------------------------------

def _half_sq_output(layer: AdapterLayer, z: np.ndarray, corrupt: bool = False):
    tape = Tape(corrupt=corrupt)
    bound = bind(tape, layer)
    out, _ = trace_layer(tape, bound, tape.leaf(z))
    loss = tape.mse_loss(out, np.zeros_like(tape.value(out)), reduction='half_sum')
    return tape, bound, loss


def grad_check(layer: AdapterLayer, z_in: np.ndarray, eps: float = 1e-5, corrupt: bool = False) -> float:
    """
    Max relative error between tape gradients and central differences of
    0.5 * ||forward(z)||_F^2 over every trainable scalar.

    Relative error is |g_tape - g_fd| / max(|g_tape|, |g_fd|, 1e-4).
    """
    if not 1e-7 <= eps <= 1e-3:
        raise InvalidInput(f"eps must lie in [1e-7, 1e-3], got {eps}")
    if layer.gate is not None and GateMode(layer.gate.mode) == GateMode.hard_adaptive:
        raise NonDifferentiable("gradient check runs on soft gates only")
    z = np.asarray(z_in, dtype=np.float64)

    tape, bound, loss = _half_sq_output(layer, z, corrupt=corrupt)
    keys = _trainable_keys(layer)
    adjoints = tape.backward(loss, wrt=[bound.nodes[key] for key in keys])

    worst = 0.0
    params = layer.params()
    for key in keys:
        analytic = adjoints[bound.nodes[key]]
        base = params[key]
        for ix in np.ndindex(base.shape):
            plus, minus = base.copy(), base.copy()
            plus[ix] += eps
            minus[ix] -= eps
            f_plus = _evaluate_half_sq(layer.with_params({key: plus}), z)
            f_minus = _evaluate_half_sq(layer.with_params({key: minus}), z)
            numeric = (f_plus - f_minus) / (2.0 * eps)
            err = abs(analytic[ix] - numeric) / max(abs(analytic[ix]), abs(numeric), GRAD_CHECK_FLOOR)
            worst = max(worst, err)
    return worst


def _evaluate_half_sq(layer: AdapterLayer, z: np.ndarray) -> float:
    tape, _, loss = _half_sq_output(layer, z)
    return float(tape.value(loss))


# Matrix fit ------------------------------------------------------------------------------------

def planted_spectrum(r_true: int) -> np.ndarray:
    return 1.0 / (1.0 + np.arange(r_true))


def planted_tail(cfg: TrainConfig) -> np.ndarray:
    """
    sum_j tail_scale / (1 + j) u_j v_j^T over the leading min(k1, k2) - r_true singular
    pairs of the base weights: the part of the update that re-weights directions W0
    already carries. Shared by every target_seed_offset of a seed.
    """
    w0 = base_weights(cfg, cfg.k1, cfg.k2)
    count = min(cfg.k1, cfg.k2) - cfg.r_true
    if cfg.tail_scale == 0 or count == 0:
        return np.zeros_like(w0)
    dec = svd(w0)
    sigma = cfg.tail_scale / (1.0 + np.arange(count))
    return (dec.u[:, :count] * sigma) @ dec.v[:, :count].T


def planted_target(cfg: TrainConfig) -> np.ndarray:
    """
    Delta* = U diag(1, 1/2, ..) V^T of rank r_true in seeded random directions, plus the
    planted tail when tail_scale > 0.
    """
    rng = _stream(cfg, _TARGET, cfg.target_seed_offset)
    u = rng.orthonormal(cfg.k1, cfg.r_true)
    v = rng.orthonormal(cfg.k2, cfg.r_true)
    return (u * planted_spectrum(cfg.r_true)) @ v.T + planted_tail(cfg)


def base_weights(cfg: TrainConfig, rows: int, cols: int, salt: int = 0) -> np.ndarray:
    return _stream(cfg, _BASE, salt).normal((rows, cols), 1.0 / np.sqrt(rows))


def freeze_gate(layer: AdapterLayer, batches: Sequence[np.ndarray]) -> AdapterLayer:
    """
    Calibrate an adaptive gate into a frozen mask. When the majority vote switches every
    channel off, the channel with the largest mean soft mask stays on.
    """
    frozen = calibrate_frozen_mask(layer, batches)
    if frozen.gate.frozen_mask.any():
        return frozen
    soft = np.mean([foura_forward(layer, z)[1].soft_mask for z in batches], axis=0)
    keep = np.zeros(layer.rank)
    keep[int(np.argmax(soft))] = 1.0
    return layer.replace(gate=layer.gate.with_mode(GateMode.frozen, keep))


def run_matrix_fit(cfg: TrainConfig) -> TrainTrace:
    """
    Fit one adapter so that z W0 + branch(z) matches z (W0 + Delta*) on Gaussian tokens.

    With freeze_after > 0 the adaptive gate is calibrated on the seed's probe batches at
    that step and the remaining steps refit the factors under the frozen mask.
    """
    if Task(cfg.task) != Task.matrix_fit:
        raise InvalidInput(f"run_matrix_fit needs task 'matrix_fit', got '{cfg.task.value}'")
    w0 = base_weights(cfg, cfg.k1, cfg.k2)
    delta = planted_target(cfg)
    w_star = w0 + delta
    layer = _new_layer(cfg, w0, _stream(cfg, _ADAPTER))

    data = _stream(cfg, _DATA, cfg.target_seed_offset)
    stepper = _Stepper(cfg, {'layer0': layer})
    trace = TrainTrace(config=cfg, layer_names=['layer0'], target_delta=delta)

    for step in range(cfg.steps):
        if cfg.freeze_after and step == cfg.freeze_after:
            batches = probe_batches(cfg.seed, cfg.calibration_batches, cfg.tokens, cfg.k1)
            frozen = freeze_gate(stepper.layers['layer0'], batches)
            stepper.replace_layer('layer0', frozen)
            logger.info(f"seed {cfg.seed}: gate frozen after {step} steps, "
                        f"{int(frozen.gate.frozen_mask.sum())} of {cfg.rank} channels kept")

        tape = Tape()
        bound = stepper.bind_all(tape)
        fit_terms, penalty_terms, reports = [], [], []
        for _ in range(cfg.batch):
            z = data.normal((cfg.tokens, cfg.k1))
            out, branch = trace_layer(tape, bound['layer0'], tape.leaf(z))
            fit_terms.append(tape.mse_loss(out, z @ w_star))
            penalty = _gate_penalty(tape, branch, cfg)
            if penalty is not None:
                penalty_terms.append(penalty)
            reports.append(report_from_trace(tape, stepper.layers['layer0'], branch))

        fit = _mean_loss(tape, fit_terms)
        loss = fit
        penalty_value = 0.0
        if penalty_terms:
            penalty = _mean_loss(tape, penalty_terms)
            penalty_value = float(tape.value(penalty))
            loss = tape.add(fit, penalty)

        trace.losses.append(float(tape.value(fit)))
        trace.penalties.append(penalty_value)
        trace.effective_ranks.append([reports[0].effective_rank])
        trace.soft_means.append([float(np.mean(reports[0].soft_mask))])

        stepper.apply(tape, loss, bound, step)
        if step % LOG_EVERY == 0:
            logger.debug(f"seed {cfg.seed} step {step}: loss {trace.losses[-1]:.6g} "
                         f"effective rank {reports[0].effective_rank}")

    trace.final_layers = dict(stepper.layers)
    return trace


def probe_batches(seed: int, count: int, tokens: int, width: int) -> List[np.ndarray]:
    rng = Xoshiro256StarStar(derive_seed(seed, _PROBE))
    return [rng.normal((tokens, width)) for _ in range(count)]


# Toy denoiser ----------------------------------------------------------------------------------

@dataclass(frozen=True)
class ToyDenoiser:
    """
    Two linear layers: [x_t, emb(t)] (k1) -> hidden (k2) -> noise estimate (k1 / 2).
    """
    layers: Tuple[AdapterLayer, AdapterLayer]
    prototypes: np.ndarray
    timesteps: int

    @property
    def signal_dim(self) -> int:
        return self.prototypes.shape[1]

    @property
    def step_size(self) -> float:
        return 1.0 / self.timesteps


def timestep_embedding(t: int, timesteps: int, width: int) -> np.ndarray:
    half = width // 2
    freqs = (np.arange(half) + 1.0) * np.pi / (2.0 * timesteps)
    return np.concatenate([np.sin(t * freqs), np.cos(t * freqs)])


def clean_prototypes(cfg: TrainConfig) -> np.ndarray:
    rng = _stream(cfg, _TARGET, cfg.target_seed_offset)
    width = cfg.k1 // 2
    n = np.arange(width)
    rows = []
    for _ in range(PROTOTYPES):
        freq = 1 + rng.randint(width // 4)
        phase = 2.0 * np.pi * rng.uniform()
        rows.append(np.sin(2.0 * np.pi * freq * n / width + phase))
    return np.array(rows)


def build_denoiser(cfg: TrainConfig) -> ToyDenoiser:
    width = cfg.k1 // 2
    w1 = base_weights(cfg, cfg.k1, cfg.k2, salt=0)
    w2 = base_weights(cfg, cfg.k2, width, salt=1)
    rng = _stream(cfg, _ADAPTER)
    layers = (_new_layer(cfg, w1, rng), _new_layer(cfg, w2, rng))
    return ToyDenoiser(layers=layers, prototypes=clean_prototypes(cfg), timesteps=cfg.timesteps)


def _denoiser_input(x: np.ndarray, t: int, timesteps: int) -> np.ndarray:
    emb = timestep_embedding(t, timesteps, x.shape[1])
    return np.hstack([x, np.tile(emb, (x.shape[0], 1))])


def trace_denoiser(tape: Tape, bound, model: ToyDenoiser, x: np.ndarray, t: int, alpha: float = None):
    z = tape.leaf(_denoiser_input(x, t, model.timesteps))
    hidden, first = trace_layer(tape, bound['layer0'], z, alpha=alpha)
    eps_hat, second = trace_layer(tape, bound['layer1'], hidden, alpha=alpha)
    return eps_hat, (first, second)


def estimate_noise(model: ToyDenoiser, x: np.ndarray, t: int, alpha: float = None,
                   layers: Tuple[AdapterLayer, AdapterLayer] = None) -> Tuple[np.ndarray, List[MaskReport]]:
    """Noise estimate for x at timestep t, with the gate report of each layer."""
    layers = model.layers if layers is None else layers
    tape = Tape()
    bound = {f"layer{i}": bind(tape, layer) for i, layer in enumerate(layers)}
    eps_hat, branches = trace_denoiser(tape, bound, model, x, t, alpha=alpha)
    reports = [report_from_trace(tape, layer, branch) for layer, branch in zip(layers, branches)]
    return tape.value(eps_hat), reports


def base_noise(model: ToyDenoiser, x: np.ndarray, t: int) -> np.ndarray:
    """The frozen denoiser without adapters."""
    z = _denoiser_input(x, t, model.timesteps)
    return (z @ model.layers[0].w0) @ model.layers[1].w0


def refine(model: ToyDenoiser, x_start: np.ndarray, alpha: float = None, noise_fn=None):
    """
    x_{t-1} = x_t - eta * eps_hat(x_t, t) for t = T .. 1.

    Returns:
        (final x, per-step noise estimates, per-step reports (lists of MaskReport or None))
    """
    x = x_start
    estimates, reports = [], []
    for t in range(model.timesteps, 0, -1):
        if noise_fn is None:
            eps_hat, step_reports = estimate_noise(model, x, t, alpha=alpha)
        else:
            eps_hat, step_reports = noise_fn(x, t), None
        estimates.append(eps_hat)
        reports.append(step_reports)
        x = x - model.step_size * eps_hat
    return x, estimates, reports


def sample_clean(model: ToyDenoiser, rng: Xoshiro256StarStar, count: int) -> np.ndarray:
    picks = [rng.randint(model.prototypes.shape[0]) for _ in range(count)]
    return model.prototypes[picks]


def noisy_start(model: ToyDenoiser, rng: Xoshiro256StarStar, count: int) -> Tuple[np.ndarray, np.ndarray]:
    clean = sample_clean(model, rng, count)
    return clean, clean + NOISE_SCALE * rng.normal(clean.shape)


def run_toy_denoise(cfg: TrainConfig) -> TrainTrace:
    """
    Train adapters on both denoiser layers to predict the injected noise, then record the
    gate of every layer at every refinement step of a held-out batch.
    """
    if Task(cfg.task) != Task.toy_denoise:
        raise InvalidInput(f"run_toy_denoise needs task 'toy_denoise', got '{cfg.task.value}'")
    model = build_denoiser(cfg)
    names = ['layer0', 'layer1']
    stepper = _Stepper(cfg, dict(zip(names, model.layers)))
    data = _stream(cfg, _DATA, cfg.target_seed_offset)
    trace = TrainTrace(config=cfg, layer_names=names)

    for step in range(cfg.steps):
        tape = Tape()
        bound = stepper.bind_all(tape)
        current = ToyDenoiser(layers=(stepper.layers['layer0'], stepper.layers['layer1']),
                              prototypes=model.prototypes, timesteps=model.timesteps)
        fit_terms, penalty_terms, first_reports = [], [], None
        for _ in range(cfg.batch):
            t = 1 + data.randint(cfg.timesteps)
            clean = sample_clean(current, data, cfg.tokens)
            noise = data.normal(clean.shape)
            # residual after T - t refinement steps of the ideal schedule is (t / T) of the start
            x_t = clean + (t / cfg.timesteps) * NOISE_SCALE * noise
            target = (x_t - clean) / (current.step_size * t)
            eps_hat, branches = trace_denoiser(tape, bound, current, x_t, t)
            fit_terms.append(tape.mse_loss(eps_hat, target))
            for branch in branches:
                penalty = _gate_penalty(tape, branch, cfg)
                if penalty is not None:
                    penalty_terms.append(penalty)
            if first_reports is None:
                first_reports = [report_from_trace(tape, stepper.layers[name], branch)
                                 for name, branch in zip(names, branches)]

        fit = _mean_loss(tape, fit_terms)
        loss = fit
        penalty_value = 0.0
        if penalty_terms:
            penalty = _mean_loss(tape, penalty_terms)
            penalty_value = float(tape.value(penalty))
            loss = tape.add(fit, penalty)

        trace.losses.append(float(tape.value(fit)))
        trace.penalties.append(penalty_value)
        trace.effective_ranks.append([rep.effective_rank for rep in first_reports])
        trace.soft_means.append([float(np.mean(rep.soft_mask)) for rep in first_reports])

        stepper.apply(tape, loss, bound, step)
        if step % LOG_EVERY == 0:
            logger.debug(f"seed {cfg.seed} step {step}: loss {trace.losses[-1]:.6g}")

    trained = ToyDenoiser(layers=(stepper.layers['layer0'], stepper.layers['layer1']),
                          prototypes=model.prototypes, timesteps=model.timesteps)
    trace.final_layers = dict(stepper.layers)
    record_timestep_ranks(trace, trained, cfg)
    return trace


def eval_batch(model: ToyDenoiser, cfg: TrainConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Held-out (clean, noisy start) pair used by every evaluation of a run."""
    return noisy_start(model, _stream(cfg, _EVAL), cfg.tokens)


def record_timestep_ranks(trace: TrainTrace, model: ToyDenoiser, cfg: TrainConfig, alpha: float = None):
    """Fill the trace's per-timestep gate records from one evaluation refinement."""
    _, x_start = eval_batch(model, cfg)
    _, _, reports = refine(model, x_start, alpha=alpha)
    trace.timestep_ranks = [[rep.effective_rank for rep in step] for step in reports]
    trace.timestep_soft_means = [[float(np.mean(rep.soft_mask)) for rep in step] for step in reports]


def denoiser_from_trace(trace: TrainTrace) -> ToyDenoiser:
    cfg = trace.config
    return ToyDenoiser(layers=(trace.final_layers['layer0'], trace.final_layers['layer1']),
                       prototypes=clean_prototypes(cfg), timesteps=cfg.timesteps)


def run(cfg: TrainConfig) -> TrainTrace:
    if Task(cfg.task) == Task.matrix_fit:
        return run_matrix_fit(cfg)
    return run_toy_denoise(cfg)
