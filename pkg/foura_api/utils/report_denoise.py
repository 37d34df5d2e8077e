"""
Gate behavior of the toy denoiser over the refinement steps, its response to the adapter
strength, and the composition of several adapter sets.
"""
import logging
from typing import Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd

from . import checkpoint
from .adapter import AdapterLayer
from .analysis import DEFAULT_ALPHAS, denoise_sweep, effective_rank_trace
from .config_schema import FouraConfig
from .exceptions import ConfigError, IncompatibleCheckpoints, InvalidInput
from .foura_response import DenoiseReportResponse
from .foura_schema import Task
from .merge import composite_denoise
from .svg_plot import line_plot
from .trainer import (ToyDenoiser, TrainTrace, denoiser_from_trace, eval_batch, record_timestep_ranks,
                      run_toy_denoise)

logger = logging.getLogger(__name__)

LAYERS = ('layer0', 'layer1')


def _denoiser_layers(path: str) -> Dict[str, AdapterLayer]:
    layers = checkpoint.to_layers(checkpoint.read_checkpoint(path))
    if tuple(layers) != LAYERS:
        raise IncompatibleCheckpoints(f"{path} does not hold a toy denoiser ({list(layers)})")
    return layers


def load_trace(config: FouraConfig, checkpoint_path: str = None) -> TrainTrace:
    """A trained toy-denoise trace: from a checkpoint when given, otherwise by training."""
    cfg = config.train
    if Task(cfg.task) != Task.toy_denoise:
        raise ConfigError("denoise-report needs a toy_denoise config", field='train.task')
    if checkpoint_path is None:
        logger.info(f"Training toy denoiser (seed={cfg.seed}, {cfg.steps} steps)")
        return run_toy_denoise(cfg)

    trace = TrainTrace(config=cfg, layer_names=list(LAYERS), final_layers=_denoiser_layers(checkpoint_path))
    record_timestep_ranks(trace, denoiser_from_trace(trace), cfg)
    return trace


def adapter_sets(model: ToyDenoiser, paths: Sequence[str]) -> List[Tuple[AdapterLayer, AdapterLayer]]:
    """The model's own adapters followed by those of every further checkpoint, which must share its w0."""
    sets = [tuple(model.layers)]
    for path in paths or ():
        layers = _denoiser_layers(path)
        for name, own in zip(LAYERS, model.layers):
            if layers[name].w0.shape != own.w0.shape or not np.array_equal(layers[name].w0, own.w0):
                raise IncompatibleCheckpoints(f"{path}: w0 of {name} differs from the denoiser's base weights")
        sets.append((layers['layer0'], layers['layer1']))
    return sets


def composite_table(model: ToyDenoiser, sets, weights: Sequence[float], clean: np.ndarray,
                    x_start: np.ndarray) -> pd.DataFrame:
    """
    Denoising error of the base model, of each adapter set composed alone and of all sets
    composed together.
    """
    if len(weights) != len(sets):
        raise InvalidInput(f"{len(sets)} adapter sets need {len(sets)} weights, got {len(weights)}")
    if not np.all(np.isfinite(weights)):
        raise InvalidInput("composition weights must be finite")

    def mse(adapters, ws):
        x0, _ = composite_denoise(model, adapters, ws, x_start)
        return float(np.mean((x0 - clean) ** 2))

    rows = [{'arm': 'base', 'weight': 0.0, 'denoise_mse': mse(sets, [0.0] * len(sets))}]
    for n, (layers, weight) in enumerate(zip(sets, weights), start=1):
        rows.append({'arm': f"set_{n}", 'weight': float(weight), 'denoise_mse': mse([layers], [weight])})
    rows.append({'arm': 'composite', 'weight': float(np.sum(weights)), 'denoise_mse': mse(sets, list(weights))})
    return pd.DataFrame(rows)


def report_denoise(config: FouraConfig,
                   checkpoint_path: str = None,
                   alphas: Sequence[float] = DEFAULT_ALPHAS,
                   svg: bool = True,
                   compose: Sequence[str] = None,
                   weights: Sequence[float] = None,
                   api_response: DenoiseReportResponse = None) -> DenoiseReportResponse:
    response = api_response if api_response is not None else DenoiseReportResponse(config=config)
    trace = load_trace(config, checkpoint_path)
    model = denoiser_from_trace(trace)
    clean, x_start = eval_batch(model, config.train)

    sweep = denoise_sweep(model, clean, x_start, alphas)
    for row in sweep.itertuples():
        logger.info(f"alpha {row.alpha:g}: denoise mse {row.denoise_mse:.6g} (base {row.base_mse:.6g})")

    sets = adapter_sets(model, compose)
    weights = [1.0] * len(sets) if weights is None else list(weights)
    composite = composite_table(model, sets, weights, clean, x_start)
    logger.info(f"composite of {len(sets)} adapter set(s): denoise mse {composite['denoise_mse'].iloc[-1]:.6g}")

    timestep_ranks = effective_rank_trace(trace)
    svgs = {}
    if svg:
        series = {name: timestep_ranks.loc[timestep_ranks['layer'] == name, 'effective_rank'].to_numpy()
                  for name in trace.layer_names}
        steps = timestep_ranks.loc[timestep_ranks['layer'] == trace.layer_names[0], 'timestep'].to_numpy()
        svgs['effective_rank'] = line_plot(series, title='Effective rank over refinement steps',
                                           xlabel='timestep', ylabel='effective rank', x=steps)

    response.update_data(timestep_ranks=timestep_ranks, alpha_sweep=sweep, composite=composite, svgs=svgs)
    if response.auto_save:
        response.save()
    return response
