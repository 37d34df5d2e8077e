import logging
from typing import Sequence

from .utils.analysis import DEFAULT_ALPHAS
from .utils.analyze_adapters import analyze_adapters
from .utils.check_gradients import check_gradients
from .utils.config_schema import FouraConfig, worker_threads
from .utils.foura_response import (AnalyzeResponse, DenoiseReportResponse, GradcheckResponse, MergeResponse,
                                   TrainResponse)
from .utils.foura_schema import MergeMode
from .utils.merge_adapters import merge_adapters
from .utils.report_denoise import report_denoise
from .utils.train_adapters import train_adapters
from .version import __version__

logger = logging.getLogger(__name__)


class FouraAPI():
    '''
    Python interface class for tool usage within python scripts and notebooks
    '''

    def __init__(self,
                 config: FouraConfig = None,
                 config_path: str = None,
                 output_dir: str = None):
        """
        Constructor for FouraAPI

        Parameters:
            -config: FouraConfig
                -Initialized configuration object
            -config_path: str
                -Path to a yaml config file. Should not be set if config parameter is passed
            -output_dir: str
                -Overrides local.output_dir of the config
        """

        # Configuration initialization
        self.config = None
        if config:
            self.config = config
        elif config_path:
            self.load_config(config_path=config_path)
        else:
            self.config = FouraConfig()

        self.output_dir = str(output_dir or self.config.local.output_dir)
        self.threads = worker_threads()

    # Configuration

    def load_config(self,
                    config: FouraConfig = None,
                    config_path: str = None) -> None:
        """
        Load or change the api configuration

        Parameters:
            -config: FouraConfig
                An instantiated configuration object
            -config_path: str
                Filepath to a configuration yaml file
        """

        if config:
            self.config = config
        elif config_path:
            self.config = FouraConfig.from_file(config_path)
        else:
            raise ValueError("One of config or config_path must be set.")

    def _response(self, cls, auto_save, command_dict, config=None):
        return cls(auto_save=auto_save,
                   output_dir=self.output_dir,
                   config=config or self.config,
                   command_dict=command_dict,
                   version=__version__)

    # Subcommands

    def train(self, seed: Sequence[int] = None, auto_save=False, **kwargs) -> TrainResponse:
        """
        Train adapters as configured, once per seed

        Parameters:
            -seed: list
                -Seeds overriding train.seed; several seeds run in parallel up to FOURA_THREADS workers
        """
        seeds = [seed] if isinstance(seed, int) else list(seed or [])
        config = self.config.with_overrides(seed=seeds[0]) if seeds else self.config
        response = self._response(TrainResponse, auto_save, dict({'seed': seeds}, **kwargs), config=config)
        return train_adapters(config, seeds=seeds, api_response=response, threads=self.threads)

    def analyze(self, checkpoints: Sequence[str], auto_save=False, base: str = None, rank: int = None,
                pairwise: bool = False, no_svg: bool = False, **kwargs) -> AnalyzeResponse:
        """
        Spectral, amplification, bound and projection tables of trained checkpoints

        Parameters:
            -checkpoints: list
                -Checkpoint paths written by train
            -base: str
                -Checkpoint whose base weights replace the stored w0
        """
        c_kwargs = dict({'checkpoints': checkpoints, 'base': base, 'rank': rank, 'pairwise': pairwise}, **kwargs)
        response = self._response(AnalyzeResponse, auto_save, c_kwargs)
        return analyze_adapters(self.config, checkpoints, base=base, rank=rank, pairwise=pairwise,
                                svg=not no_svg, api_response=response)

    def merge(self, checkpoints: Sequence[str], auto_save=False, alphas: Sequence[float] = (1.0, 1.0),
              probe: int = 0, rank: int = None, mode: str = "output_sum", weights: Sequence[float] = None,
              **kwargs) -> MergeResponse:
        """
        Merge of two checkpoints and their compatibility score

        Parameters:
            -checkpoints: list
                -Exactly two checkpoint paths
            -alphas: list
                -Strength of each adapter in the merge
            -probe: int
                -Seed of the probe batches
            -mode: str
                -output_sum or epsilon_compose
            -weights: list
                -Composition weight of each adapter (epsilon_compose only)
        """
        if len(checkpoints) != 2:
            raise ValueError("merge takes exactly two checkpoints")
        c_kwargs = dict({'checkpoints': checkpoints, 'alphas': alphas, 'probe': probe, 'rank': rank, 'mode': mode,
                         'weights': weights}, **kwargs)
        response = self._response(MergeResponse, auto_save, c_kwargs)
        return merge_adapters(self.config, checkpoints[0], checkpoints[1], alphas=alphas, probe=probe, rank=rank,
                              mode=MergeMode(mode), weights=weights, api_response=response)

    def gradcheck(self, auto_save=False, seed: int = None, corrupt_gradients: bool = False,
                  **kwargs) -> GradcheckResponse:
        """
        Finite-difference check of the tape gradients for every adapter combination
        """
        c_kwargs = dict({'seed': seed, 'corrupt_gradients': corrupt_gradients}, **kwargs)
        response = self._response(GradcheckResponse, auto_save, c_kwargs)
        return check_gradients(self.config, seed=seed, corrupt=corrupt_gradients, api_response=response)

    def denoise_report(self, auto_save=False, checkpoint: str = None, alphas: Sequence[float] = None,
                       no_svg: bool = False, compose: Sequence[str] = None, weights: Sequence[float] = None,
                       **kwargs) -> DenoiseReportResponse:
        """
        Effective rank of a toy denoiser over refinement steps, and an adapter-strength sweep

        Parameters:
            -checkpoint: str
                -Trained toy_denoise checkpoint; the config is trained from scratch when omitted
            -compose: list
                -Further toy_denoise checkpoints whose noise estimates are composed with this one
            -weights: list
                -Composition weight of every adapter set (defaults to all 1)
        """
        alphas = list(alphas) if alphas else list(DEFAULT_ALPHAS)
        c_kwargs = dict({'checkpoint': checkpoint, 'alphas': alphas, 'compose': compose, 'weights': weights}, **kwargs)
        response = self._response(DenoiseReportResponse, auto_save, c_kwargs)
        return report_denoise(self.config, checkpoint_path=checkpoint, alphas=alphas, svg=not no_svg,
                              compose=compose, weights=weights, api_response=response)
