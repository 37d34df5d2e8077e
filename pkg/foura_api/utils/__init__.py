from .foura_response import FouraResponse, TrainResponse, AnalyzeResponse, MergeResponse, GradcheckResponse, DenoiseReportResponse
from .config_schema import FouraConfig
from .foura_schema import TrainConfig
