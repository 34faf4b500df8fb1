from .config import ExperimentConfig, load_config, parse_config
from .pipeline import VARIANTS, RunArtifacts, StageError, run_variant

__all__ = ["ExperimentConfig", "load_config", "parse_config", "VARIANTS", "RunArtifacts",
           "StageError", "run_variant"]
