"""Goal-conditioned reward for the RL finetuning stage.

A target only pays reward while the policy can see it: each term is gated by
the availability flag of the matching observation group (object goals by the
object-translation flag, root goals by the long-horizon goal flag), so masked
inputs never leak through the reward.
"""

from __future__ import annotations

import numpy as np

from ..sim.state import SimState
from .types import FinetuneCoeffs, GoalTargets


def finetune_reward(state: SimState, goals: GoalTargets, mask,
                    prev_distances: dict | None,
                    coeffs: FinetuneCoeffs | None = None,
                    terminal: np.ndarray | None = None):
    """(total, terms) where terms has dense/progress/bonus/distances.

    ``prev_distances`` is the ``distances`` entry returned by the previous
    call; pass ``None`` on the first step of an episode, which zeroes the
    progress term.
    """
    coeffs = coeffs if coeffs is not None else FinetuneCoeffs()
    n = state.n
    zeros = np.zeros(n)

    def _dist(cur_xy, goal_xy):
        if goal_xy is None:
            return zeros.copy(), zeros.copy()
        d = np.linalg.norm(cur_xy - np.asarray(goal_xy), axis=-1)
        return d, np.ones(n)

    d_obj, has_obj = _dist(state.box_pose[:, :2], goals.obj_xy)
    d_root, has_root = _dist(state.root_pose[:, :2], goals.root_xy)

    v_obj = np.asarray(mask.object_trans, dtype=float) * has_obj
    v_root = np.asarray(mask.global_goal, dtype=float) * has_root

    dense = coeffs.w_dense * (v_obj * np.exp(-coeffs.k_goal * d_obj)
                              + v_root * np.exp(-coeffs.k_goal * d_root))

    cap = coeffs.progress_cap
    if prev_distances is None:
        prev_distances = {"object": d_obj, "root": d_root}
    prog_obj = np.clip(np.asarray(prev_distances["object"]) - d_obj, -cap, cap)
    prog_root = np.clip(np.asarray(prev_distances["root"]) - d_root, -cap, cap)
    progress = coeffs.w_progress * (v_obj * prog_obj + v_root * prog_root)

    # terminal bonus: every visible target inside the success radius
    visible_any = (v_obj > 0.0) | (v_root > 0.0)
    ok_obj = (v_obj <= 0.0) | (d_obj < coeffs.success_radius)
    ok_root = (v_root <= 0.0) | (d_root < coeffs.success_radius)
    done = np.zeros(n, dtype=bool) if terminal is None \
        else np.asarray(terminal, dtype=bool)
    bonus = coeffs.bonus * (done & visible_any & ok_obj & ok_root)

    total = dense + progress + bonus
    terms = {
        "dense": dense,
        "progress": progress,
        "bonus": bonus,
        "distances": {"object": d_obj, "root": d_root},
    }
    return total, terms
