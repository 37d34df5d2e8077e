from .utils import FouraConfig, TrainConfig
from .utils import FouraResponse, TrainResponse, AnalyzeResponse, MergeResponse, GradcheckResponse, DenoiseReportResponse
from .foura_api import FouraAPI
from .version import __version__
