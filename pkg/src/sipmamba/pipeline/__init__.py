"""Toy localized-answering pipeline built on the fusion and state-space blocks."""

from .dataset import ArrayDataset
from .lora import LoRALinear, lora_apply, lora_merge
from .losses import cross_entropy, giou, loss_total
from .metrics import accuracy, evaluate, macro_f1, miou
from .model import (ModelConfig, Prediction, VQLAModel, encode_image, encode_question,
                    forward_full)
from .train import TrainConfig, TrainState, train_stage1, train_stage2

__all__ = [
    "ArrayDataset", "LoRALinear", "lora_apply", "lora_merge", "cross_entropy", "giou",
    "loss_total", "accuracy", "evaluate", "macro_f1", "miou", "ModelConfig", "Prediction",
    "VQLAModel", "encode_image", "encode_question", "forward_full", "TrainConfig",
    "TrainState", "train_stage1", "train_stage2",
]
