"""Self-supervised nuclei instance segmentation for H&E histology tiles."""

from .config import PipelineConfig, load_config, save_config
from .pipeline import PipelineResult, run_pipeline

__version__ = "0.1.0"

__all__ = ["PipelineConfig", "PipelineResult", "load_config", "run_pipeline",
           "save_config", "__version__"]
