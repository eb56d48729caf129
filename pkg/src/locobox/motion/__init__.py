"""Reference motion data: task scripting, embodiment scaling, augmentation,
trajectory files, and the training corpus."""

from .dataset import (AXIS_SCALES, OBJECT_SCALES, CorpusEntry, base_specs,
                      build_corpus, load_manifest)
from .generator import generate_reference
from .io import load_reference, save_reference
from .transforms import augment, scale_and_correspond
from .types import TASK_KINDS, ReferenceTrajectory, TaskSpec, central_difference

__all__ = [
    "AXIS_SCALES", "OBJECT_SCALES", "CorpusEntry", "base_specs",
    "build_corpus", "load_manifest", "generate_reference", "load_reference",
    "save_reference", "augment", "scale_and_correspond", "TASK_KINDS",
    "ReferenceTrajectory", "TaskSpec", "central_difference",
]
