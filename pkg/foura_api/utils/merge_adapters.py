import logging
import math
from typing import Sequence

import pandas as pd

from .analyze_adapters import load_layers
from .config_schema import FouraConfig
from .exceptions import IncompatibleAdapters, IncompatibleCheckpoints, InvalidInput, NumericalFailure
from .foura_response import MergeResponse
from .foura_schema import MergeMode
from .linalg_core import frobenius_norm
from .merge import MergeSpec, frozen, merge_compatibility, merge_outputs
from .trainer import probe_batches

logger = logging.getLogger(__name__)

PROBES = 8


def merge_adapters(config: FouraConfig,
                   checkpoint1: str,
                   checkpoint2: str,
                   alphas: Sequence[float] = (1.0, 1.0),
                   probe: int = 0,
                   rank: int = None,
                   mode: MergeMode = MergeMode.output_sum,
                   weights: Sequence[float] = None,
                   api_response: MergeResponse = None) -> MergeResponse:
    """
    Evaluate the merge of two checkpoints on seeded probe batches.

    Parameters:
        -alphas: list
            -strengths (alpha_1, alpha_2) of the two adapters
        -probe: int
            -seed of the probe batches
        -rank: int
            -subspace rank for the compatibility score (defaults to the adapter rank)
        -mode: MergeMode
            -output_sum, or epsilon_compose weighting each adapted output against the base
        -weights: list
            -epsilon_compose weights (w_1, w_2), default (1, 1)
    """
    if len(alphas) != 2:
        raise InvalidInput(f"merge needs exactly two strengths, got {len(alphas)}")
    mode = MergeMode(mode)
    if mode == MergeMode.epsilon_compose and weights is None:
        weights = (1.0, 1.0)
    if weights is not None and mode != MergeMode.epsilon_compose:
        raise InvalidInput("--weights needs --mode epsilon_compose")
    response = api_response if api_response is not None else MergeResponse(config=config)
    first, second = load_layers([checkpoint1, checkpoint2])
    train = config.train

    eval_rows, compat_rows = [], []
    for name in first:
        calibration = probe_batches(train.seed, train.calibration_batches, train.tokens, first[name].k1)
        layer1, layer2 = frozen(first[name], calibration), frozen(second[name], calibration)
        try:
            merged = MergeSpec(adapters=[(layer1, alphas[0]), (layer2, alphas[1])], mode=mode,
                               weights=None if weights is None else list(weights))
            single1 = MergeSpec(adapters=[(layer1, 1.0)])
            single2 = MergeSpec(adapters=[(layer2, 1.0)])
            for ix, z in enumerate(probe_batches(probe, PROBES, train.tokens, layer1.k1)):
                eval_rows.append({'probe': ix, 'layer': name,
                                  'output_norm': frobenius_norm(merge_outputs(merged, z)),
                                  'single_norm_1': frobenius_norm(merge_outputs(single1, z)),
                                  'single_norm_2': frobenius_norm(merge_outputs(single2, z))})
        except IncompatibleAdapters as e:
            raise IncompatibleCheckpoints(f"{checkpoint1} and {checkpoint2}: {e}")

        r = min(rank or layer1.rank, layer1.k1, layer1.k2)
        scores = []
        for a, b in ((layer1, layer2), (layer2, layer1)):
            try:
                scores.append(merge_compatibility(a, b, r))
            except NumericalFailure as e:
                logger.warning(f"{name}: {e}")
                scores.append(math.nan)
        compat_rows.append({'layer': name, 'rank': r, 'score_1_on_2': scores[0], 'score_2_on_1': scores[1]})
        logger.info(f"{name}: compatibility {scores[0]:.4g} / {scores[1]:.4g}")

    response.update_data(merged_eval=pd.DataFrame(eval_rows), compatibility=pd.DataFrame(compat_rows))
    if response.auto_save:
        response.save()
    return response
