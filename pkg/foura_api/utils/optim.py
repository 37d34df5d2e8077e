from typing import Dict, Tuple, Union

import numpy as np

from .exceptions import ShapeError, TrainingDiverged
from .foura_schema import OptimizerKind

Params = Dict[str, np.ndarray]


def _check(params: Params, grads: Params):
    for key, value in params.items():
        if key not in grads:
            continue
        if grads[key].shape != value.shape:
            raise ShapeError(f"gradient for {key} has shape {grads[key].shape}, parameter has {value.shape}")
        if not np.all(np.isfinite(grads[key])):
            raise TrainingDiverged(f"non-finite gradient for {key}")


class SGD:
    """Plain gradient descent"""

    def __init__(self, lr: float):
        self.lr = lr

    def init_state(self, params: Params) -> dict:
        return {}

    def step(self, params: Params, grads: Params, state: dict, lr: float = None) -> Tuple[Params, dict]:
        _check(params, grads)
        lr = self.lr if lr is None else lr
        updated = {key: value - lr * grads[key] if key in grads else value
                   for key, value in params.items()}
        return updated, state


class Adam:
    """Adam with bias correction"""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    def init_state(self, params: Params) -> dict:
        return {
            't': 0,
            'm': {key: np.zeros_like(value) for key, value in params.items()},
            'v': {key: np.zeros_like(value) for key, value in params.items()},
        }

    def step(self, params: Params, grads: Params, state: dict, lr: float = None) -> Tuple[Params, dict]:
        _check(params, grads)
        lr = self.lr if lr is None else lr
        t = state['t'] + 1
        m, v = dict(state['m']), dict(state['v'])
        updated = {}
        for key, value in params.items():
            if key not in grads:
                updated[key] = value
                continue
            g = grads[key]
            m[key] = self.beta1 * m[key] + (1.0 - self.beta1) * g
            v[key] = self.beta2 * v[key] + (1.0 - self.beta2) * g * g
            m_hat = m[key] / (1.0 - self.beta1 ** t)
            v_hat = v[key] / (1.0 - self.beta2 ** t)
            updated[key] = value - lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return updated, {'t': t, 'm': m, 'v': v}


def make_optimizer(kind: Union[OptimizerKind, str], lr: float):
    kind = OptimizerKind(kind)
    if kind == OptimizerKind.sgd:
        return SGD(lr)
    return Adam(lr)


def optimizer_step(params: Params, grads: Params, state: dict, lr: float,
                   kind: Union[OptimizerKind, str] = OptimizerKind.adam) -> Tuple[Params, dict]:
    """
    One update of every parameter that has a gradient.

    Parameters:
        -params: dict
            -name -> array
        -grads: dict
            -name -> array of the same shape
        -state: dict
            -optimizer state from init_state (or {} to start fresh)
        -lr: float
            -learning rate
    """
    optimizer = make_optimizer(kind, lr)
    if not state:
        state = optimizer.init_state(params)
    return optimizer.step(params, grads, state, lr)
