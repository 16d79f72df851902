"""Training-time OOD detection with collapse-aware feature geometry."""

from .config import RunConfig, load_config, parse_config
from .geometry import GeometryState, shell_radii
from .metrics import EvalReport, auroc, aupr, fpr_at_tpr
from .models import ModelState, init_model
from .scorers import SCORERS, ScoringContext, select_scorer
from .trainer import TrainConfig, train

__all__ = [
    "RunConfig", "load_config", "parse_config", "GeometryState", "shell_radii", "EvalReport", "auroc", "aupr",
    "fpr_at_tpr", "ModelState", "init_model", "SCORERS", "ScoringContext", "select_scorer", "TrainConfig", "train",
]
__version__ = "0.1.0"
