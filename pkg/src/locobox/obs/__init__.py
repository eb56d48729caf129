"""Observation assembly: layouts, input vectors, masking, noise."""

from .layout import (Block, ObservationLayout, paper_student_layout,
                     paper_teacher_layout, student_layout, teacher_layout)
from .mask import (GROUPS, AvailabilityMask, preset_mask,
                   sample_availability_mask)
from .noise import apply_obs_noise
from .student import (GoalPacket, ProprioHistory, StudentSensors,
                      build_student_obs, proprio_frame)
from .teacher import build_teacher_obs

__all__ = [
    "AvailabilityMask",
    "Block",
    "GoalPacket",
    "GROUPS",
    "ObservationLayout",
    "ProprioHistory",
    "StudentSensors",
    "apply_obs_noise",
    "build_student_obs",
    "build_teacher_obs",
    "paper_student_layout",
    "paper_teacher_layout",
    "preset_mask",
    "proprio_frame",
    "sample_availability_mask",
    "student_layout",
    "teacher_layout",
]
