import os
import yaml

from pydantic import BaseModel, ValidationError

from .exceptions import ConfigError
from .foura_schema import TrainConfig


class LocalConfig(BaseModel):
    output_dir: str = './runs'

    class Config:
        extra = "forbid"


# Full Config Model for app
class FouraConfig(BaseModel):
    local: LocalConfig = LocalConfig()
    train: TrainConfig = TrainConfig()

    @classmethod
    def from_file(cls, path_to_config):

        try:
            with open(path_to_config, 'r') as f:
                config_yml = yaml.load(f, Loader=yaml.FullLoader)
        except yaml.YAMLError as e:
            mark = getattr(e, 'problem_mark', None)
            raise ConfigError(f"could not parse {path_to_config}: {e}",
                              line=mark.line + 1 if mark is not None else None)
        except OSError as e:
            raise ConfigError(f"could not read {path_to_config}: {e}")

        if config_yml is None:
            config_yml = {}
        if not isinstance(config_yml, dict):
            raise ConfigError(f"{path_to_config} must hold a mapping at top level")

        return cls.from_dict(config_yml, source=path_to_config)

    @classmethod
    def from_dict(cls, config_dict, source='<dict>'):
        try:
            return cls(**config_dict)
        except ValidationError as e:
            first = e.errors()[0]
            field = '.'.join(str(part) for part in first['loc'] if part != '__root__')
            raise ConfigError(f"invalid config in {source}: {first['msg']}", field=field or None)

    def with_overrides(self, **overrides):
        """
        Return a copy with train-level values replaced, re-validated.

        Parameters:
            -overrides:
                -TrainConfig field names mapped to new values. None values are ignored.
        """
        data = self.dict()
        data['train'].update({key: value for key, value in overrides.items() if value is not None})
        return FouraConfig.from_dict(data, source='command line')

    def echo(self) -> dict:
        # plain types only, for yaml dumps
        data = self.dict()
        data['train'] = {key: (value.value if hasattr(value, 'value') else value)
                         for key, value in data['train'].items()}
        return data

    class Config:
        extra = "forbid"
        use_enum_values = False


def worker_threads() -> int:
    try:
        threads = int(os.environ.get('FOURA_THREADS', '1'))
    except ValueError:
        raise ConfigError("FOURA_THREADS must be an integer", field='FOURA_THREADS')
    return max(1, threads)
