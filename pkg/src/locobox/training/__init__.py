"""Training pipeline: PPO, distillation, schedules, envs, and stage runners."""

from .distill import (DistillConfig, choose_expert_actions, distill_losses,
                      kl_diag_gaussian, latent_smoothness, masked_group_recon)
from .env import (GoalVecEnv, StudentBundle, TrackingVecEnv, effective_flags,
                  group_by_box_size, phase_command, remask_obs,
                  stand_still_reference)
from .normalize import RunningNormalizer
from .ppo import (ACPolicy, PPOBatch, PPOConfig, PriorStudentPolicy,
                  bounds_penalty, compute_gae, gaussian_logp,
                  normalize_advantages, ppo_losses, ppo_update)
from .schedules import (critic_warmup_multiplier, dagger_fraction, distill_lr,
                        lambda_kl, lambda_smooth, ramp)
from .stages import (STAGES, DistillStageConfig, FinetuneStageConfig,
                     JsonlLogger, RetargetStageConfig, TeacherStageConfig,
                     distill_stage, eval_goal, eval_student_tracking,
                     eval_tracking, finetune_stage, load_refs,
                     load_student, load_tracking_policy, ref_paths_in,
                     rollout_retarget, run_stage)

__all__ = [
    "ACPolicy", "DistillConfig", "DistillStageConfig", "FinetuneStageConfig",
    "GoalVecEnv", "JsonlLogger", "PPOBatch", "PPOConfig",
    "PriorStudentPolicy", "RetargetStageConfig", "RunningNormalizer",
    "STAGES", "StudentBundle", "TeacherStageConfig", "TrackingVecEnv",
    "bounds_penalty", "choose_expert_actions", "compute_gae",
    "critic_warmup_multiplier", "dagger_fraction", "distill_losses",
    "distill_lr", "distill_stage", "effective_flags", "eval_goal",
    "eval_student_tracking", "eval_tracking", "finetune_stage",
    "gaussian_logp", "group_by_box_size", "kl_diag_gaussian",
    "lambda_kl", "lambda_smooth", "latent_smoothness", "load_refs",
    "load_student", "load_tracking_policy", "masked_group_recon",
    "normalize_advantages", "phase_command", "ppo_losses", "ppo_update",
    "ramp", "ref_paths_in", "remask_obs", "rollout_retarget", "run_stage",
    "stand_still_reference",
]
