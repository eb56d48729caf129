from .figure import (FigureModel, default_figure, source_figure, fk,
                     site_table, points_world, facing_sign, stand_pose,
                     LINK_NAMES, JOINT_NAMES, TRACKED_BODIES, TRACKED_EDGES,
                     KEY_ANCHORS)
from .state import SimConfig, SimState, blank_state
from .engine import Engine, get_engine, step, KinSnapshot
from .domain_rand import (DomainParams, DomainRandRanges, nominal_params,
                          sample_domain_params, resample_gravity, apply_push)
from .sensor import SensorNoise, sense_points, head_position
from .termination import (TerminationConfig, check_termination, REASON_NONE,
                          REASON_FALL, REASON_DEVIATION, REASON_MISMATCH,
                          REASON_NAMES)

__all__ = [
    "FigureModel", "default_figure", "source_figure", "fk", "site_table",
    "points_world", "facing_sign", "stand_pose", "LINK_NAMES", "JOINT_NAMES",
    "TRACKED_BODIES", "TRACKED_EDGES", "KEY_ANCHORS",
    "SimConfig", "SimState", "blank_state",
    "Engine", "get_engine", "step", "KinSnapshot",
    "DomainParams", "DomainRandRanges", "nominal_params",
    "sample_domain_params", "resample_gravity", "apply_push",
    "SensorNoise", "sense_points", "head_position",
    "TerminationConfig", "check_termination", "REASON_NONE", "REASON_FALL",
    "REASON_DEVIATION", "REASON_MISMATCH", "REASON_NAMES",
]
