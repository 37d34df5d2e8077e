import os

import pytest

from foura_api.utils.config_schema import FouraConfig, worker_threads
from foura_api.utils.exceptions import ConfigError
from foura_api.utils.foura_schema import GateMode, Task, TrainConfig, TransformKind

CONFIG_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'configs')


def test_defaults():
    cfg = TrainConfig()
    assert cfg.task == Task.matrix_fit
    assert cfg.transform == TransformKind.dct
    assert cfg.gate_mode == GateMode.soft
    assert (cfg.steps, cfg.rank, cfg.batch, cfg.timesteps) == (2000, 8, 16, 20)
    assert cfg.lr == pytest.approx(1e-3)
    assert FouraConfig().local.output_dir == './runs'


@pytest.mark.parametrize('name', ['template_config.yaml', 'matrix_fit.yaml', 'toy_denoise.yaml'])
def test_shipped_configs_load(name):
    config = FouraConfig.from_file(os.path.join(CONFIG_DIR, name))
    assert config.train.rank == 8


def test_from_file(write_config):
    path = write_config({'task': 'toy_denoise', 'rank': 4, 'gate_mode': 'hard_adaptive', 'steps': 10})
    config = FouraConfig.from_file(path)
    assert config.train.task == Task.toy_denoise
    assert config.train.gate_mode == GateMode.hard_adaptive
    assert config.train.steps == 10


def test_zero_steps_names_the_field(write_config):
    with pytest.raises(ConfigError) as info:
        FouraConfig.from_file(write_config({'steps': 0}))
    assert info.value.field == 'train.steps'
    assert 'train.steps' in str(info.value)


@pytest.mark.parametrize('train', [
    {'lr': 0.0},
    {'rank': 0},
    {'rank': 64},
    {'threshold': 1.0},
    {'alpha': 3.0},
    {'lambda_entropy': -1.0},
    {'transform': 'none', 'gate_mode': 'soft'},
    {'transform': 'dft', 'gate_mode': 'absent'},
    {'transform': 'wavelet'},
    {'frozen_mask': '1012', 'rank': 4},
    {'frozen_mask': '101', 'rank': 4},
    {'task': 'toy_denoise', 'k1': 7},
    {'unknown_key': 1},
    {'freeze_after': -1},
    {'freeze_after': 2000},
    {'freeze_after': 10, 'transform': 'none', 'gate_mode': 'absent'},
    {'freeze_after': 10, 'task': 'toy_denoise', 'rank': 4},
])
def test_invalid_values(write_config, train):
    with pytest.raises(ConfigError):
        FouraConfig.from_file(write_config(train))


def test_yaml_syntax_error_reports_line(tmp_path):
    path = tmp_path / 'broken.yaml'
    path.write_text("train:\n  rank: 4\n  steps: [1, 2\n  lr: 0.1\n")
    with pytest.raises(ConfigError) as info:
        FouraConfig.from_file(str(path))
    assert info.value.line is not None
    assert info.value.line >= 3
    assert f"line {info.value.line}" in str(info.value)


def test_missing_and_non_mapping_files(tmp_path):
    with pytest.raises(ConfigError):
        FouraConfig.from_file(str(tmp_path / 'missing.yaml'))
    path = tmp_path / 'list.yaml'
    path.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        FouraConfig.from_file(str(path))
    empty = tmp_path / 'empty.yaml'
    empty.write_text("")
    assert FouraConfig.from_file(str(empty)).train == TrainConfig()


def test_overrides_revalidate(quick_config):
    config = quick_config()
    assert config.with_overrides(seed=9).train.seed == 9
    assert config.with_overrides(seed=None).train.seed == config.train.seed
    with pytest.raises(ConfigError):
        config.with_overrides(steps=0)


def test_echo_holds_plain_values(quick_config):
    echo = quick_config().echo()
    assert echo['train']['transform'] == 'dct'
    assert echo['train']['task'] == 'matrix_fit'
    assert FouraConfig.from_dict(echo) == quick_config()


def test_worker_threads(monkeypatch):
    monkeypatch.delenv('FOURA_THREADS', raising=False)
    assert worker_threads() == 1
    monkeypatch.setenv('FOURA_THREADS', '4')
    assert worker_threads() == 4
    monkeypatch.setenv('FOURA_THREADS', '0')
    assert worker_threads() == 1
    monkeypatch.setenv('FOURA_THREADS', 'many')
    with pytest.raises(ConfigError):
        worker_threads()
