import abc
import logging
import os
import time
from datetime import datetime
from typing import Dict, List

import pandas as pd
import yaml

from .checkpoint import Checkpoint, write_checkpoint
from .svg_plot import save_svg

logger = logging.getLogger(__name__)

FLOAT_FORMAT = '%.17g'
DT_FMT = '%Y-%m-%d %H.%M.%S.%f'


class FouraResponse(object):
    """
    Results of one subcommand. On the first save it creates <output_dir>/<IDENT>/<timestamp>/,
    stores the config echo and the command parameters, then its tables; a manifest listing
    every artifact is written last.
    """
    IDENT = 'base'

    def __init__(self,
                 auto_save=False,
                 create_dirs=True,
                 output_dir=None,
                 created_dt=None,
                 config=None,
                 command_dict=None,
                 version=None):

        self.auto_save = auto_save
        self.create_dirs = create_dirs
        self.output_dir = output_dir
        self.created_dt = datetime.now() if created_dt is None else created_dt
        self.config = config
        self.command_dict = command_dict or {}
        self.version = version

        self.tables: Dict[str, pd.DataFrame] = {}
        self.svgs: Dict[str, str] = {}
        self.artifacts: List[str] = []
        self.has_saved = False
        self._started = time.perf_counter()

    @abc.abstractmethod
    def update_data(self, **kwargs):
        """
        Update data held in response
        """
        pass

    def save(self, output_dir=None):
        """
        Basic saves for all children response objects
        """

        if self.output_dir is None:
            self.output_dir = output_dir

        if not self.has_saved and self.create_dirs:
            self.create_output_dir()
            self.save_meta()
            self.has_saved = True

            logger.info(f"Saving results to {self.output_dir}")

        for name, df in self.tables.items():
            self._record(FouraResponse._save_df(df, self.output_dir, name))
        for name, text in self.svgs.items():
            path = f"{self.output_dir}/{name}.svg"
            save_svg(path, text)
            self._record(path)

    def save_meta(self):

        # save config used in request
        with open(f"{self.output_dir}/config.yaml", 'w') as f:
            yaml.safe_dump(self.config.echo(), f, sort_keys=True)
        self._record(f"{self.output_dir}/config.yaml")

        # save command and parameters used
        command = f"Command - {self.IDENT}\n" + '\n'.join(
            [f"{key} : {value}" for key, value in self.command_dict.items() if key != "output_dir"])
        with open(f"{self.output_dir}/params.txt", "w") as pf:
            pf.write(command)
        self._record(f"{self.output_dir}/params.txt")

    def save_manifest(self, seed=None):
        path = f"{self.output_dir}/manifest.yaml"
        manifest = {
            'command': self.IDENT,
            'config': self.config.echo(),
            'outputs': sorted(set(self.artifacts + [path])),
            'wall_time_seconds': round(time.perf_counter() - self._started, 6),
            'version': self.version,
            'seed': seed if seed is not None else self.config.train.seed,
            'created_at': self.created_dt.isoformat(),
        }
        with open(path, 'w') as f:
            yaml.safe_dump(manifest, f, sort_keys=False)
        self._record(path)

    def create_output_dir(self, output_dir=None) -> None:
        """
        If they do not exist, create all necessary subdirectories to store data and metadata
        """

        if output_dir is None and self.output_dir is None:
            raise ValueError("output_dir must be passed during Response creation or to the save method.")
        self.output_dir = self.output_dir if not output_dir else output_dir

        timestamp = self.created_dt.strftime(DT_FMT)
        subcommand_dir = f"{self.output_dir}/{self.IDENT}"
        output_time_dir = f"{subcommand_dir}/{timestamp}"
        os.makedirs(subcommand_dir, exist_ok=True)
        os.makedirs(output_time_dir)

        self.output_dir = output_time_dir

    def _record(self, path):
        if path is not None and path not in self.artifacts:
            self.artifacts.append(path)

    # Static utility methods

    @staticmethod
    def _save_df(df: pd.DataFrame, output_dir, name) -> str:
        save_path = f"{output_dir}/{name}.csv"
        if df is None:
            return None
        with open(save_path, 'w', encoding='utf-8', newline='') as f:
            df.to_csv(f, index=False, float_format=FLOAT_FORMAT, lineterminator='\n')
        return save_path


class TrainResponse(FouraResponse):
    """
    Trained adapters of one or more seeds
    """
    IDENT = 'train'

    def __init__(self, *args, **kwargs):
        super(TrainResponse, self).__init__(**kwargs)
        self.checkpoints: Dict[int, Checkpoint] = {}
        self.traces = {}

    def update_data(self, seed=None, trace=None, checkpoint=None, df_losses=None, df_ranks=None):
        self.traces[seed] = trace
        self.checkpoints[seed] = checkpoint
        for name, df in (('losses', df_losses), ('ranks', df_ranks)):
            if df is not None:
                self.tables[name] = pd.concat([self.tables[name], df], ignore_index=True) \
                    if name in self.tables else df

    def save(self, output_dir=None):
        super(TrainResponse, self).save(output_dir=output_dir)
        single = len(self.checkpoints) == 1
        for seed in sorted(self.checkpoints):
            name = 'adapters.ckpt' if single else f"adapters_seed{seed}.ckpt"
            path = f"{self.output_dir}/{name}"
            write_checkpoint(path, self.checkpoints[seed])
            self._record(path)
        self.save_manifest(seed=sorted(self.checkpoints)[0] if single else sorted(self.checkpoints))


class AnalyzeResponse(FouraResponse):
    """
    Spectral and subspace measures of trained checkpoints
    """
    IDENT = 'analyze'

    def update_data(self, spread=None, amplification=None, bound=None, projection=None, params=None,
                    autocorrelation=None, alpha_sweep=None, svgs=None):
        for name, df in (('spread', spread), ('amplification', amplification), ('bound', bound),
                         ('projection', projection), ('params', params), ('autocorrelation', autocorrelation),
                         ('alpha_sweep', alpha_sweep)):
            if df is not None:
                self.tables[name] = df
        self.svgs.update(svgs or {})

    def save(self, output_dir=None):
        super(AnalyzeResponse, self).save(output_dir=output_dir)
        self.save_manifest()


class MergeResponse(FouraResponse):
    """
    Merged evaluation of two checkpoints
    """
    IDENT = 'merge'

    def update_data(self, merged_eval=None, compatibility=None):
        if merged_eval is not None:
            self.tables['merged_eval'] = merged_eval
        if compatibility is not None:
            self.tables['compatibility'] = compatibility

    def save(self, output_dir=None):
        super(MergeResponse, self).save(output_dir=output_dir)
        self.save_manifest()


class GradcheckResponse(FouraResponse):
    """
    Finite-difference check of every adapter combination
    """
    IDENT = 'gradcheck'

    def update_data(self, results=None):
        if results is not None:
            self.tables['gradcheck'] = results

    @property
    def passed(self) -> bool:
        return bool(self.tables['gradcheck']['passed'].all())

    def save(self, output_dir=None):
        super(GradcheckResponse, self).save(output_dir=output_dir)
        self.save_manifest()


class DenoiseReportResponse(FouraResponse):
    """
    Gate behavior of a toy denoiser across refinement steps
    """
    IDENT = 'denoise_report'

    def update_data(self, timestep_ranks=None, alpha_sweep=None, composite=None, svgs=None):
        for name, df in (('timestep_ranks', timestep_ranks), ('alpha_sweep', alpha_sweep), ('composite', composite)):
            if df is not None:
                self.tables[name] = df
        self.svgs.update(svgs or {})

    def save(self, output_dir=None):
        super(DenoiseReportResponse, self).save(output_dir=output_dir)
        self.save_manifest()
