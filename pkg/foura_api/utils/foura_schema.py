from enum import Enum
from typing import Optional

from pydantic import BaseModel, validator, root_validator


class Task(Enum):
    matrix_fit = "matrix_fit"
    toy_denoise = "toy_denoise"


class TransformKind(Enum):
    none = "none"
    identity = "identity"
    dft = "dft"
    dct = "dct"


class Axis(Enum):
    embedding = "embedding"
    token = "token"


class GateMode(Enum):
    soft = "soft"
    hard_adaptive = "hard_adaptive"
    frozen = "frozen"
    absent = "absent"


class NormKind(Enum):
    spectral = "spectral"
    frobenius = "frobenius"


class MergeMode(Enum):
    output_sum = "output_sum"
    epsilon_compose = "epsilon_compose"


class OptimizerKind(Enum):
    adam = "adam"
    sgd = "sgd"


# transforms that carry a rank gate
GATED_TRANSFORMS = (TransformKind.identity, TransformKind.dft, TransformKind.dct)


class TrainConfig(BaseModel):
    task: Task = Task.matrix_fit
    rank: int = 8
    transform: TransformKind = TransformKind.dct
    axis: Axis = Axis.embedding
    gate_mode: GateMode = GateMode.soft
    steps: int = 2000
    lr: float = 1e-3
    batch: int = 16
    seed: int = 0
    lambda_entropy: float = 1e-3
    lambda_sparsity: float = 0.0
    alpha: float = 1.0
    threshold: float = 0.5
    optimizer: OptimizerKind = OptimizerKind.adam

    # toy problem sizes
    k1: int = 32
    k2: int = 32
    tokens: int = 16
    timesteps: int = 20

    # planted target
    r_true: int = 2
    tail_scale: float = 0.0
    target_seed_offset: int = 0

    calibration_batches: int = 8
    frozen_mask: Optional[str] = None
    # matrix_fit: calibrate an adaptive gate into a frozen mask after this many steps (0 = never)
    freeze_after: int = 0

    @validator('steps')
    def steps_positive(cls, v):
        if v < 1:
            raise ValueError("steps must be >= 1")
        return v

    @validator('lr')
    def lr_positive(cls, v):
        if not v > 0:
            raise ValueError("lr must be > 0")
        return v

    @validator('freeze_after')
    def freeze_after_non_negative(cls, v):
        if v < 0:
            raise ValueError("freeze_after must be >= 0")
        return v

    @validator('rank', 'batch', 'k1', 'k2', 'tokens', 'timesteps', 'r_true', 'calibration_batches')
    def count_positive(cls, v, field):
        if v < 1:
            raise ValueError(f"{field.name} must be >= 1")
        return v

    @validator('threshold')
    def threshold_open_unit(cls, v):
        if not 0.0 < v < 1.0:
            raise ValueError("threshold must lie in (0, 1)")
        return v

    @validator('alpha')
    def alpha_range(cls, v):
        if not 0.0 <= v <= 2.0:
            raise ValueError("alpha must lie in [0, 2]")
        return v

    @validator('lambda_entropy', 'lambda_sparsity', 'tail_scale')
    def non_negative(cls, v, field):
        if v < 0:
            raise ValueError(f"{field.name} must be >= 0")
        return v

    @validator('seed')
    def seed_u64(cls, v):
        if not 0 <= v < 2 ** 64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")
        return v

    @validator('frozen_mask')
    def frozen_mask_bits(cls, v):
        if v is not None and (not v or set(v) - {'0', '1'}):
            raise ValueError("frozen_mask must be a string of 0/1 characters")
        return v

    @root_validator(skip_on_failure=True)
    def consistent_adapter(cls, values):
        transform, gate_mode = values['transform'], values['gate_mode']
        rank = values['rank']
        if transform == TransformKind.none and gate_mode != GateMode.absent:
            raise ValueError("transform 'none' (plain LoRA) requires gate_mode 'absent'")
        if transform != TransformKind.none and gate_mode == GateMode.absent:
            raise ValueError(f"transform '{transform.value}' requires a gate mode")
        if rank > min(values['k1'], values['k2']):
            raise ValueError("rank must not exceed min(k1, k2)")
        if values['task'] == Task.matrix_fit and values['r_true'] > min(values['k1'], values['k2']):
            raise ValueError("r_true must not exceed min(k1, k2)")
        # the denoiser's output layer maps k2 -> k1 // 2 (signal width)
        if values['task'] == Task.toy_denoise and (values['k1'] % 2 or rank > values['k1'] // 2):
            raise ValueError("toy_denoise needs an even k1 and rank <= k1 / 2")
        mask = values.get('frozen_mask')
        if mask is not None and len(mask) != rank:
            raise ValueError("frozen_mask length must equal rank")
        freeze_after = values.get('freeze_after', 0)
        if freeze_after:
            if not 0 < freeze_after < values['steps']:
                raise ValueError("freeze_after must lie in [0, steps)")
            if values['task'] != Task.matrix_fit or gate_mode not in (GateMode.soft, GateMode.hard_adaptive):
                raise ValueError("freeze_after needs task 'matrix_fit' and an adaptive gate mode")
        return values

    class Config:
        extra = "forbid"
        use_enum_values = False
