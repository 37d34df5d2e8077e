import logging
import math
from typing import Dict, List, Sequence

import numpy as np
import pandas as pd

from . import checkpoint
from .adapter import AdapterLayer, inference_mask, materialize_delta_w, parameter_count
from .analysis import (BoundParams, alpha_sweep, amplification_factor, autocorrelation_decomposition,
                       generalization_bound, projection_norm, spread_report)
from .config_schema import FouraConfig
from .exceptions import FouraError, IncompatibleCheckpoints, NumericalFailure
from .foura_response import AnalyzeResponse
from .linalg_core import frobenius_norm
from .svg_plot import line_plot
from .trainer import probe_batches

logger = logging.getLogger(__name__)


def load_layers(paths: Sequence[str], base_path: str = None) -> List[Dict[str, AdapterLayer]]:
    """Read checkpoints and, with a base checkpoint, swap in its w0 for every layer."""
    loaded = [checkpoint.to_layers(checkpoint.read_checkpoint(path)) for path in paths]
    for other, path in zip(loaded[1:], paths[1:]):
        checkpoint.check_same_layout(loaded[0], other, what=f"{paths[0]} and {path}")
    if base_path is None:
        return loaded
    base = checkpoint.to_layers(checkpoint.read_checkpoint(base_path))
    rebased = []
    for layers in loaded:
        swapped = {}
        for name, layer in layers.items():
            if name not in base or base[name].w0.shape != layer.w0.shape:
                raise IncompatibleCheckpoints(f"base checkpoint {base_path} has no matching w0 for {name}")
            swapped[name] = layer.replace(w0=base[name].w0)
        rebased.append(swapped)
    return rebased


def _calibration(config: FouraConfig, layer: AdapterLayer):
    return probe_batches(config.train.seed, config.train.calibration_batches, config.train.tokens, layer.k1)


def _deltas(config: FouraConfig, layers: Dict[str, AdapterLayer]) -> Dict[str, tuple]:
    out = {}
    for name, layer in layers.items():
        mask = inference_mask(layer, _calibration(config, layer))
        out[name] = (materialize_delta_w(layer, mask), mask)
    return out


def analyze_adapters(config: FouraConfig,
                     checkpoints: Sequence[str],
                     base: str = None,
                     rank: int = None,
                     pairwise: bool = False,
                     svg: bool = True,
                     api_response: AnalyzeResponse = None) -> AnalyzeResponse:
    """
    Spread, amplification, bound, parameter, autocorrelation and strength-sweep tables for
    every layer of every checkpoint.

    Parameters:
        -checkpoints: list
            -checkpoint paths; all must hold the same layers
        -base: str
            -optional checkpoint whose w0 replaces each layer's stored base weights
        -rank: int
            -subspace rank r (defaults to each layer's adapter rank)
        -pairwise: bool
            -also emit projection norms between every ordered pair of checkpoints
    """
    if not checkpoints:
        raise IncompatibleCheckpoints("analyze needs at least one checkpoint")
    response = api_response if api_response is not None else AnalyzeResponse(config=config)
    all_layers = load_layers(checkpoints, base)
    deltas = [_deltas(config, layers) for layers in all_layers]
    train = config.train

    spread_rows, amp_rows, bound_rows, param_rows, autocorr_rows, sweeps = [], [], [], [], [], []
    sigma_series: Dict[str, Dict[str, np.ndarray]] = {}
    for ix, (path, layers) in enumerate(zip(checkpoints, all_layers)):
        logger.info(f"Analyzing checkpoint {ix + 1}/{len(checkpoints)}: {path}")
        for name, layer in layers.items():
            delta, mask = deltas[ix][name]
            r = min(rank or layer.rank, *delta.shape)

            report = spread_report(delta)
            sigma_series.setdefault(name, {})[path] = report.sigmas
            for i, sigma in enumerate(report.sigmas, start=1):
                spread_rows.append({'checkpoint': path, 'layer': name, 'index': i, 'sigma': sigma,
                                    'tail_energy_ratio': report.tail_energy_ratio(i)})

            try:
                amp = amplification_factor(layer.w0, delta, r)
                amp_row = {'dw_norm': amp.dw_norm, 'proj_norm': amp.proj_norm, 'factor': amp.factor,
                           'status': 'ok'}
            except NumericalFailure as e:
                logger.warning(f"{path} {name}: {e}")
                amp_row = {'dw_norm': frobenius_norm(delta), 'proj_norm': math.nan, 'factor': math.nan,
                           'status': type(e).__name__}
            amp_rows.append(dict({'checkpoint': path, 'layer': name, 'rank': r}, **amp_row))

            p = float(np.sum(mask)) / layer.rank
            try:
                bp = BoundParams(p=p, n=train.steps * train.batch)
                bound, status = generalization_bound(bp), 'ok'
            except NumericalFailure as e:
                bound, status = math.nan, type(e).__name__
            except FouraError as e:
                bound, status = math.nan, f"invalid: {e}"
            bound_rows.append({'checkpoint': path, 'layer': name, 'p': p, 'bound': bound, 'status': status})

            param_rows.append({'checkpoint': path, 'layer': name, 'rank': layer.rank,
                               'params': parameter_count(layer),
                               'inference_params': parameter_count(layer, inference=True)})

            probes = _calibration(config, layer)
            split = autocorrelation_decomposition(layer.w0, delta, np.vstack(probes))
            autocorr_rows.append({'checkpoint': path, 'layer': name,
                                  'base_norm': frobenius_norm(split.base_term),
                                  'adapter_norm': frobenius_norm(split.adapter_term),
                                  'cross_norm': frobenius_norm(split.cross_term),
                                  'off_diag_ratio': split.off_diag_ratio})

            sweep = alpha_sweep(layer, probes)
            sweep.insert(0, 'layer', name)
            sweep.insert(0, 'checkpoint', path)
            sweeps.append(sweep)

    projection = None
    if pairwise:
        projection = _projection_table(checkpoints, all_layers, deltas, rank)

    svgs = {}
    if svg:
        for name, series in sigma_series.items():
            svgs[f"sigma_{name}"] = line_plot(series, title=f"Singular values of dW ({name})",
                                              xlabel='index', ylabel='sigma')

    response.update_data(spread=pd.DataFrame(spread_rows), amplification=pd.DataFrame(amp_rows),
                         bound=pd.DataFrame(bound_rows), projection=projection,
                         params=pd.DataFrame(param_rows), autocorrelation=pd.DataFrame(autocorr_rows),
                         alpha_sweep=pd.concat(sweeps, ignore_index=True), svgs=svgs)
    if response.auto_save:
        response.save()
    return response


def _projection_table(paths, all_layers, deltas, rank) -> pd.DataFrame:
    """Both orientations of every pair: projection of source's dW onto target's top-r subspace."""
    rows = []
    for i, source in enumerate(paths):
        for j, target in enumerate(paths):
            if i == j:
                continue
            for name, layer in all_layers[i].items():
                d_source, d_target = deltas[i][name][0], deltas[j][name][0]
                r = min(rank or layer.rank, *d_source.shape)
                try:
                    raw = projection_norm(d_source, d_target, r)
                    normalized = projection_norm(d_source, d_target, r, normalized=True)
                except NumericalFailure as e:
                    logger.warning(f"{source} -> {target} {name}: {e}")
                    raw = normalized = math.nan
                rows.append({'source': source, 'target': target, 'layer': name, 'rank': r,
                             'projection_norm': raw, 'normalized': normalized})
    return pd.DataFrame(rows, columns=['source', 'target', 'layer', 'rank', 'projection_norm', 'normalized'])
