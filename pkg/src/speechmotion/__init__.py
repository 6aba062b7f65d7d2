"""Streaming speech-to-facial-motion inference engine.

Converts 16 kHz mono audio into a 60 fps stream of mouth landmark
displacements, sampled rigid head poses, billboard upper-body positions,
and rasterized 512 x 512 landmark feature maps, with exact latency
accounting. See the README for the architecture and CLI usage.
"""

from .config import PipelineConfig, default_config, load_config
from .errors import ConfigError, DataError, DimensionError, SpeechMotionError
from .pipeline import Engine, FrameOutput, TimingReport, run_offline

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "DimensionError",
    "Engine",
    "FrameOutput",
    "PipelineConfig",
    "SpeechMotionError",
    "TimingReport",
    "default_config",
    "load_config",
    "run_offline",
    "__version__",
]
