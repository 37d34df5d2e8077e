import glob
import os

import numpy as np
import pandas as pd
import pytest
import yaml

import foura
from foura_api import FouraAPI
from foura_api.utils import checkpoint
from foura_api.utils.adapter import init_layer
from foura_api.utils.foura_schema import GateMode, TransformKind
from foura_api.utils.prng import Xoshiro256StarStar

from conftest import quick_train

QUICK = dict(task='matrix_fit', rank=4, transform='dct', gate_mode='soft', steps=20, lr=1e-2, batch=1, k1=8, k2=8,
             tokens=6, r_true=2, seed=3, lambda_sparsity=1e-3, calibration_batches=2)
TOY = dict(task='toy_denoise', rank=2, transform='dct', gate_mode='hard_adaptive', steps=5, lr=1e-2, batch=1, k1=8,
           k2=8, tokens=4, timesteps=5, seed=1, calibration_batches=2)


def run_dirs(out, ident):
    return sorted(glob.glob(os.path.join(str(out), ident, '*')))


def only_run(out, ident):
    dirs = run_dirs(out, ident)
    assert len(dirs) == 1
    return dirs[0]


def read_bytes(path):
    with open(path, 'rb') as f:
        return f.read()


@pytest.fixture
def trained(write_config, tmp_path):
    """Config path and checkpoint of a short matrix-fit run."""
    cfg = write_config(QUICK)
    out = tmp_path / 'trained'
    assert foura.main(['-cf', cfg, '-o', str(out), 'train']) == 0
    return cfg, os.path.join(only_run(out, 'train'), 'adapters.ckpt')


# train ---------------------------------------------------------------------------------------

def test_train_writes_artifacts(trained):
    cfg, ckpt_path = trained
    run = os.path.dirname(ckpt_path)
    for name in ('adapters.ckpt', 'losses.csv', 'ranks.csv', 'manifest.yaml', 'config.yaml', 'params.txt'):
        assert os.path.exists(os.path.join(run, name)), name

    losses = pd.read_csv(os.path.join(run, 'losses.csv'))
    assert list(losses.columns) == ['step', 'seed', 'loss']
    assert len(losses) == QUICK['steps']
    ranks = pd.read_csv(os.path.join(run, 'ranks.csv'))
    assert list(ranks.columns) == ['seed', 'step', 'layer', 'effective_rank', 'soft_mask_mean']

    with open(os.path.join(run, 'manifest.yaml')) as f:
        manifest = yaml.safe_load(f)
    assert manifest['seed'] == QUICK['seed']
    assert manifest['command'] == 'train'
    assert os.path.join(run, 'losses.csv') in manifest['outputs']
    assert manifest['wall_time_seconds'] >= 0

    layers = checkpoint.to_layers(checkpoint.read_checkpoint(ckpt_path))
    assert list(layers) == ['layer0']


def test_train_is_deterministic(write_config, tmp_path):
    cfg = write_config(QUICK)
    for name in ('first', 'second'):
        assert foura.main(['-cf', cfg, '-o', str(tmp_path / name), 'train', '-s', '7']) == 0
    first, second = only_run(tmp_path / 'first', 'train'), only_run(tmp_path / 'second', 'train')
    for name in ('losses.csv', 'ranks.csv', 'adapters.ckpt'):
        assert read_bytes(os.path.join(first, name)) == read_bytes(os.path.join(second, name))
    assert pd.read_csv(os.path.join(first, 'losses.csv'))['seed'].unique().tolist() == [7]


def test_train_several_seeds(write_config, tmp_path, monkeypatch):
    monkeypatch.setenv('FOURA_THREADS', '2')
    cfg = write_config(QUICK)
    assert foura.main(['-cf', cfg, '-o', str(tmp_path), 'train', '-s', '5', '4']) == 0
    run = only_run(tmp_path, 'train')
    assert os.path.exists(os.path.join(run, 'adapters_seed4.ckpt'))
    assert os.path.exists(os.path.join(run, 'adapters_seed5.ckpt'))
    losses = pd.read_csv(os.path.join(run, 'losses.csv'))
    assert losses['seed'].tolist() == [4] * QUICK['steps'] + [5] * QUICK['steps']


def test_train_toy_denoise_ranks(write_config, tmp_path):
    cfg = write_config(TOY)
    assert foura.main(['-cf', cfg, '-o', str(tmp_path), 'train']) == 0
    ranks = pd.read_csv(os.path.join(only_run(tmp_path, 'train'), 'ranks.csv'))
    assert list(ranks.columns) == ['seed', 'timestep', 'layer', 'effective_rank', 'soft_mask_mean']
    for layer in ('layer0', 'layer1'):
        assert len(ranks[ranks['layer'] == layer]) == TOY['timesteps']
    assert (ranks['effective_rank'] <= TOY['rank']).all()


def test_bad_config_exits_1(write_config, tmp_path):
    cfg = write_config(dict(QUICK, steps=0))
    assert foura.main(['-cf', cfg, '-o', str(tmp_path), 'train']) == 1
    assert run_dirs(tmp_path, 'train') == []


def test_divergence_exits_2(write_config, tmp_path):
    cfg = write_config(dict(QUICK, transform='none', gate_mode='absent', optimizer='sgd', lr=1e12, steps=50))
    assert foura.main(['-cf', cfg, '-o', str(tmp_path), 'train']) == 2


def test_usage_errors_exit_1():
    assert foura.main([]) == 1
    with pytest.raises(SystemExit) as info:
        foura.main(['train', '--no-such-flag'])
    assert info.value.code == 1


# gradcheck -----------------------------------------------------------------------------------

def test_gradcheck_passes(tmp_path):
    assert foura.main(['-o', str(tmp_path), 'gradcheck']) == 0
    report = pd.read_csv(os.path.join(only_run(tmp_path, 'gradcheck'), 'gradcheck.csv'))
    assert len(report) >= 6
    assert report['passed'].all()
    assert (report['max_rel_err'] < 1e-5).all()


def test_gradcheck_corrupted_fails(tmp_path):
    assert foura.main(['-o', str(tmp_path), 'gradcheck', '--corrupt-gradients']) == 2
    report = pd.read_csv(os.path.join(only_run(tmp_path, 'gradcheck'), 'gradcheck.csv'))
    assert not report['passed'].any()


# analyze -------------------------------------------------------------------------------------

def test_analyze_is_deterministic(trained, tmp_path):
    cfg, ckpt_path = trained
    for name in ('first', 'second'):
        assert foura.main(['-cf', cfg, '-o', str(tmp_path / name), 'analyze', ckpt_path]) == 0
    first, second = only_run(tmp_path / 'first', 'analyze'), only_run(tmp_path / 'second', 'analyze')
    for name in ('spread.csv', 'amplification.csv', 'bound.csv', 'params.csv', 'autocorrelation.csv',
                 'alpha_sweep.csv'):
        assert read_bytes(os.path.join(first, name)) == read_bytes(os.path.join(second, name))
    assert os.path.exists(os.path.join(first, 'sigma_layer0.svg'))

    spread = pd.read_csv(os.path.join(first, 'spread.csv'))
    assert len(spread) == QUICK['k1']
    assert np.all(np.diff(spread['sigma']) <= 0)


def test_analyze_zero_adapter(tmp_path):
    cfg = quick_train()
    rng = Xoshiro256StarStar(0)
    layer = init_layer(rng.normal((8, 8)), 4, rng, transform=TransformKind.dct, gate_mode=GateMode.soft)
    path = str(tmp_path / 'zero.ckpt')
    checkpoint.write_checkpoint(path, checkpoint.from_layers({'layer0': layer}, cfg))

    assert foura.main(['-o', str(tmp_path), 'analyze', path, '--no-svg']) == 0
    run = only_run(tmp_path, 'analyze')
    spread = pd.read_csv(os.path.join(run, 'spread.csv'))
    assert (spread['sigma'] == 0.0).all()
    assert not glob.glob(os.path.join(run, '*.svg'))


def test_analyze_autocorrelation_and_sweep(trained, tmp_path):
    cfg, ckpt_path = trained
    assert foura.main(['-cf', cfg, '-o', str(tmp_path), 'analyze', ckpt_path, '--no-svg']) == 0
    run = only_run(tmp_path, 'analyze')

    autocorrelation = pd.read_csv(os.path.join(run, 'autocorrelation.csv'))
    assert list(autocorrelation.columns) == ['checkpoint', 'layer', 'base_norm', 'adapter_norm', 'cross_norm',
                                             'off_diag_ratio']
    assert autocorrelation['layer'].tolist() == ['layer0']
    assert ((autocorrelation['off_diag_ratio'] >= 0) & (autocorrelation['off_diag_ratio'] <= 1)).all()

    sweep = pd.read_csv(os.path.join(run, 'alpha_sweep.csv'))
    assert sweep['alpha'].tolist() == [0.0, 0.2, 0.4, 0.6, 0.8, 1.0]
    assert sweep['branch_norm'][0] == 0.0
    # the branch is linear in the strength
    np.testing.assert_allclose(sweep['branch_norm'], sweep['alpha'] * sweep['branch_norm'].iloc[-1], rtol=1e-12)

    with open(os.path.join(run, 'manifest.yaml')) as f:
        outputs = yaml.safe_load(f)['outputs']
    assert os.path.join(run, 'autocorrelation.csv') in outputs
    assert os.path.join(run, 'alpha_sweep.csv') in outputs


def test_analyze_pairwise(write_config, trained, tmp_path):
    cfg, first_ckpt = trained
    other_cfg = write_config(dict(QUICK, target_seed_offset=1), name='other.yaml')
    assert foura.main(['-cf', other_cfg, '-o', str(tmp_path / 'other'), 'train']) == 0
    second_ckpt = os.path.join(only_run(tmp_path / 'other', 'train'), 'adapters.ckpt')

    api = FouraAPI(config_path=cfg)
    response = api.analyze([first_ckpt, second_ckpt], pairwise=True, no_svg=True, rank=2)
    projection = response.tables['projection']
    assert len(projection) == 2
    assert set(zip(projection['source'], projection['target'])) == {(first_ckpt, second_ckpt),
                                                                    (second_ckpt, first_ckpt)}
    assert (projection['normalized'] <= 1.0 + 1e-12).all()


def test_analyze_incompatible_exits_1(write_config, trained, tmp_path):
    cfg, first_ckpt = trained
    wide = write_config(dict(QUICK, k1=6, k2=6), name='wide.yaml')
    assert foura.main(['-cf', wide, '-o', str(tmp_path / 'wide'), 'train']) == 0
    second_ckpt = os.path.join(only_run(tmp_path / 'wide', 'train'), 'adapters.ckpt')
    assert foura.main(['-cf', cfg, '-o', str(tmp_path), 'analyze', first_ckpt, second_ckpt]) == 1
    assert foura.main(['-cf', cfg, '-o', str(tmp_path), 'merge', first_ckpt, second_ckpt]) == 1


# merge ---------------------------------------------------------------------------------------

def test_merge_with_zero_second_strength(trained, tmp_path):
    cfg, ckpt_path = trained
    assert foura.main(['-cf', cfg, '-o', str(tmp_path), 'merge', ckpt_path, ckpt_path, '-a', '1', '0']) == 0
    run = only_run(tmp_path, 'merge')
    merged = pd.read_csv(os.path.join(run, 'merged_eval.csv'))
    assert list(merged.columns) == ['probe', 'layer', 'output_norm', 'single_norm_1', 'single_norm_2']
    np.testing.assert_allclose(merged['output_norm'], merged['single_norm_1'], rtol=1e-12)
    compatibility = pd.read_csv(os.path.join(run, 'compatibility.csv'))
    assert compatibility['score_1_on_2'][0] == pytest.approx(1.0, abs=1e-9)


def test_self_merge_half_half(trained):
    cfg, ckpt_path = trained
    response = FouraAPI(config_path=cfg).merge([ckpt_path, ckpt_path], alphas=(0.5, 0.5), probe=3)
    merged = response.tables['merged_eval']
    assert np.max(np.abs(merged['output_norm'] - merged['single_norm_1'])) < 1e-10


def test_merge_epsilon_compose(trained, tmp_path):
    cfg, ckpt_path = trained
    assert foura.main(['-cf', cfg, '-o', str(tmp_path / 'sum'), 'merge', ckpt_path, ckpt_path, '-a', '0.5', '1']) == 0
    assert foura.main(['-cf', cfg, '-o', str(tmp_path / 'eps'), 'merge', ckpt_path, ckpt_path, '-a', '1', '1',
                       '-m', 'epsilon_compose', '-w', '0.5', '1']) == 0
    summed = pd.read_csv(os.path.join(only_run(tmp_path / 'sum', 'merge'), 'merged_eval.csv'))
    composed = pd.read_csv(os.path.join(only_run(tmp_path / 'eps', 'merge'), 'merged_eval.csv'))
    np.testing.assert_allclose(composed['output_norm'], summed['output_norm'], rtol=1e-10)

    assert foura.main(['-cf', cfg, '-o', str(tmp_path), 'merge', ckpt_path, ckpt_path, '-w', '1', '1']) == 1


# denoise-report ------------------------------------------------------------------------------

def test_denoise_report_from_checkpoint(write_config, tmp_path):
    cfg = write_config(TOY)
    assert foura.main(['-cf', cfg, '-o', str(tmp_path / 'toy'), 'train']) == 0
    ckpt_path = os.path.join(only_run(tmp_path / 'toy', 'train'), 'adapters.ckpt')

    assert foura.main(['-cf', cfg, '-o', str(tmp_path), 'denoise-report', '-c', ckpt_path,
                       '-a', '0', '1']) == 0
    run = only_run(tmp_path, 'denoise_report')
    ranks = pd.read_csv(os.path.join(run, 'timestep_ranks.csv'))
    assert sorted(ranks['timestep'].unique()) == list(range(1, TOY['timesteps'] + 1))
    sweep = pd.read_csv(os.path.join(run, 'alpha_sweep.csv'))
    assert sweep['alpha'].tolist() == [0.0, 1.0]
    # at zero strength the adapted refinement is the base refinement
    assert sweep['denoise_mse'][0] == pytest.approx(sweep['base_mse'][0], abs=1e-12)
    assert os.path.exists(os.path.join(run, 'effective_rank.svg'))
    composite = pd.read_csv(os.path.join(run, 'composite.csv'))
    assert composite['arm'].tolist() == ['base', 'set_1', 'composite']
    assert composite['denoise_mse'][0] == pytest.approx(sweep['base_mse'][0], abs=1e-12)
    assert composite['denoise_mse'][2] == composite['denoise_mse'][1]
    assert composite['denoise_mse'][1] == pytest.approx(sweep['denoise_mse'][1], rel=1e-9)


def test_denoise_report_composes_checkpoints(write_config, tmp_path):
    cfg = write_config(TOY)
    assert foura.main(['-cf', cfg, '-o', str(tmp_path / 'toy'), 'train']) == 0
    ckpt_path = os.path.join(only_run(tmp_path / 'toy', 'train'), 'adapters.ckpt')

    assert foura.main(['-cf', cfg, '-o', str(tmp_path), 'denoise-report', '-c', ckpt_path, '-ns',
                       '-cp', ckpt_path, '-w', '0.5', '0.5']) == 0
    composite = pd.read_csv(os.path.join(only_run(tmp_path, 'denoise_report'), 'composite.csv'))
    assert composite['arm'].tolist() == ['base', 'set_1', 'set_2', 'composite']
    assert composite['weight'].tolist() == [0.0, 0.5, 0.5, 1.0]
    # two halves of the same adapter set compose to the whole set
    full = FouraAPI(config_path=cfg).denoise_report(checkpoint=ckpt_path, no_svg=True).tables['composite']
    assert composite['denoise_mse'].iloc[-1] == pytest.approx(full['denoise_mse'].iloc[-1], rel=1e-9)

    assert foura.main(['-cf', cfg, '-o', str(tmp_path / 'bad'), 'denoise-report', '-c', ckpt_path,
                       '-cp', ckpt_path, '-w', '1']) == 1
    other = write_config(dict(TOY, seed=2), name='other.yaml')
    assert foura.main(['-cf', other, '-o', str(tmp_path / 'other'), 'train']) == 0
    other_ckpt = os.path.join(only_run(tmp_path / 'other', 'train'), 'adapters.ckpt')
    assert foura.main(['-cf', cfg, '-o', str(tmp_path / 'bad'), 'denoise-report', '-c', ckpt_path,
                       '-cp', other_ckpt]) == 1


def test_denoise_report_needs_toy_config(write_config, tmp_path):
    cfg = write_config(QUICK)
    assert foura.main(['-cf', cfg, '-o', str(tmp_path), 'denoise-report']) == 1
