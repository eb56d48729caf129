from .actor_critic import FIXED_LOG_STD, ActorCritic
from .checkpoint import (CHECKPOINT_VERSION, Checkpoint, load_checkpoint,
                         require_layout_match, save_checkpoint)
from .mlp import mlp, require_finite, xavier_init
from .pointset import PointSetEncoder
from .student import StudentArchConfig, StudentLatents, StudentPolicy

__all__ = [
    "ActorCritic",
    "CHECKPOINT_VERSION",
    "Checkpoint",
    "FIXED_LOG_STD",
    "PointSetEncoder",
    "StudentArchConfig",
    "StudentLatents",
    "StudentPolicy",
    "load_checkpoint",
    "mlp",
    "require_finite",
    "require_layout_match",
    "save_checkpoint",
    "xavier_init",
]
