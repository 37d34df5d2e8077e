"""
Drives training runs: one TrainTrace, checkpoint and table set per seed.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Sequence

import pandas as pd

from . import checkpoint
from .analysis import effective_rank_trace
from .config_schema import FouraConfig
from .foura_response import TrainResponse
from .trainer import TrainTrace, run

logger = logging.getLogger(__name__)


def losses_table(trace: TrainTrace) -> pd.DataFrame:
    seed = trace.config.seed
    return pd.DataFrame({'step': range(len(trace.losses)), 'seed': seed, 'loss': trace.losses},
                        columns=['step', 'seed', 'loss'])


def ranks_table(trace: TrainTrace) -> pd.DataFrame:
    df = effective_rank_trace(trace)
    df.insert(0, 'seed', trace.config.seed)
    return df


def train_seed(config: FouraConfig, seed: int):
    cfg = config.with_overrides(seed=seed).train
    trace = run(cfg)
    return trace, checkpoint.from_layers(trace.final_layers, cfg)


def train_adapters(config: FouraConfig,
                   seeds: Sequence[int] = None,
                   api_response: TrainResponse = None,
                   threads: int = 1) -> TrainResponse:
    """
    Train adapters for every seed, in parallel worker threads when threads > 1.

    Parameters:
        -config: FouraConfig
            -validated configuration; its train.seed is used when seeds is empty
        -seeds: list
            -seeds to run
        -api_response: TrainResponse
            -response to fill (created if None)
        -threads: int
            -maximum number of concurrent seeds
    """
    seeds = list(seeds) if seeds else [config.train.seed]
    response = api_response if api_response is not None else TrainResponse(config=config)

    def job(ix_seed):
        ix, seed = ix_seed
        logger.info(f"Training seed {ix + 1}/{len(seeds)} (seed={seed})")
        return seed, train_seed(config, seed)

    workers = max(1, min(threads, len(seeds)))
    if workers == 1:
        results = [job(item) for item in enumerate(seeds)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, enumerate(seeds)))

    # tables are assembled in seed order regardless of completion order
    for seed, (trace, ckpt) in sorted(results, key=lambda item: item[0]):
        logger.info(f"Seed {seed}: final loss {trace.final_loss:.6g}")
        response.update_data(seed=seed, trace=trace, checkpoint=ckpt,
                             df_losses=losses_table(trace), df_ranks=ranks_table(trace))

    if response.auto_save:
        response.save()
    return response
