import numpy as np
import pytest
import yaml

from foura_api.utils.adapter import AdapterLayer, GateState
from foura_api.utils.config_schema import FouraConfig
from foura_api.utils.foura_schema import Axis, GateMode, TrainConfig, TransformKind
from foura_api.utils.prng import Xoshiro256StarStar


@pytest.fixture
def rng():
    return Xoshiro256StarStar(1234)


@pytest.fixture
def np_rng():
    return np.random.default_rng(20240607)


def random_layer(rng, k1=6, k2=5, rank=3, transform=TransformKind.dct, axis=Axis.embedding,
                 mode=GateMode.soft, alpha=1.0, frozen_mask=None, bias=0.0):
    gate = None
    if transform != TransformKind.none:
        gate = GateState(g1=rng.normal((rank, rank), 0.5), g2=rng.normal((rank, rank), 0.5),
                         b1=np.zeros(rank), b2=np.full(rank, bias), mode=mode,
                         frozen_mask=None if frozen_mask is None else np.asarray(frozen_mask, dtype=np.float64))
    return AdapterLayer(w0=rng.normal((k1, k2)), a=rng.normal((rank, k1)), b=rng.normal((k2, rank)),
                        alpha=alpha, transform=transform, axis=axis, gate=gate)


@pytest.fixture
def make_layer(rng):
    def factory(**kwargs):
        return random_layer(rng, **kwargs)
    return factory


def quick_train(**overrides) -> TrainConfig:
    """Small, fast training configuration."""
    values = dict(task='matrix_fit', rank=4, transform='dct', gate_mode='soft', steps=20, lr=1e-2, batch=1,
                  k1=8, k2=8, tokens=6, r_true=2, seed=3, lambda_sparsity=1e-3)
    values.update(overrides)
    return TrainConfig(**values)


@pytest.fixture
def write_config(tmp_path):
    def writer(train: dict, name='config.yaml', output_dir=None):
        path = tmp_path / name
        data = {'local': {'output_dir': str(output_dir or tmp_path / 'runs')}, 'train': train}
        with open(path, 'w') as f:
            yaml.safe_dump(data, f)
        return str(path)
    return writer


@pytest.fixture
def quick_config():
    def factory(**overrides):
        return FouraConfig(train=quick_train(**overrides))
    return factory
