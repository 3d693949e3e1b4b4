"""Desk-scale transformer, synthetic task and LoRA-MoE forward math."""

from .checkpoint import load_checkpoint, save_checkpoint
from .lora_moe import LoraMoeLayer, lora_moe_forward
from .model import BLOCK_MATRICES, ToyConfig, ToyTransformer, TrainingDivergedError
from .task import SyntheticTask, TaskConfig, generate_task
from .training import TrainConfig, dump_gradients, evaluate, gradient_set, train

__all__ = [
    "BLOCK_MATRICES",
    "LoraMoeLayer",
    "SyntheticTask",
    "TaskConfig",
    "ToyConfig",
    "ToyTransformer",
    "TrainConfig",
    "TrainingDivergedError",
    "dump_gradients",
    "evaluate",
    "generate_task",
    "gradient_set",
    "load_checkpoint",
    "lora_moe_forward",
    "save_checkpoint",
    "train",
]
