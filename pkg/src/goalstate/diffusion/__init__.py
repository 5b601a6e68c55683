"""Conditional diffusion over object goal point clouds."""
from .checkpoint import load_checkpoint, save_checkpoint
from .conditioning import ConditionBundle, Frame, TrainingItem, Vocabulary, make_item
from .network import ModelConfig, NoisePredictor, voxel_pool
from .objective import loss_at, structure_term, total_loss
from .sampling import DiffusionSample, OraclePredictor, ddim_sample, extract_goal_transform
from .schedule import NoiseSchedule, forward_noise, make_schedule, one_shot_denoise
from .training import TrainConfig, train

__all__ = [
    "ConditionBundle", "DiffusionSample", "Frame", "ModelConfig", "NoisePredictor",
    "NoiseSchedule", "OraclePredictor", "TrainConfig", "TrainingItem", "Vocabulary",
    "ddim_sample", "extract_goal_transform", "forward_noise", "load_checkpoint", "loss_at",
    "make_item", "make_schedule", "one_shot_denoise", "save_checkpoint", "structure_term",
    "total_loss", "train", "voxel_pool",
]
