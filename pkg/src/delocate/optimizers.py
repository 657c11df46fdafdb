"""Optimizer settings used by the three training phases."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import torch

from .errors import InvalidInput

PRETRAIN_LR = 1.5e-4
PRETRAIN_WEIGHT_DECAY = 0.05
FINETUNE_LR = 1e-3
STAGE2_LR = 0.1
STAGE2_MOMENTUM = 0.9
STAGE2_WEIGHT_DECAY = 5e-4


@dataclass
class OptimizerSpec:
    name: str = "adamw"  # adamw | sgd
    lr: float = 1e-3
    weight_decay: float = 0.0
    momentum: float = 0.9

    def build(self, params: Iterable[torch.nn.Parameter]) -> torch.optim.Optimizer:
        if self.name == "adamw":
            return torch.optim.AdamW(params, lr=self.lr, weight_decay=self.weight_decay)
        if self.name == "sgd":
            return torch.optim.SGD(
                params, lr=self.lr, momentum=self.momentum, weight_decay=self.weight_decay
            )
        raise InvalidInput(f"unknown optimizer {self.name!r}")


def pretrain_default() -> OptimizerSpec:
    return OptimizerSpec("adamw", PRETRAIN_LR, PRETRAIN_WEIGHT_DECAY)


def finetune_default() -> OptimizerSpec:
    return OptimizerSpec("adamw", FINETUNE_LR, 0.0)


def stage2_default() -> OptimizerSpec:
    return OptimizerSpec("sgd", STAGE2_LR, STAGE2_WEIGHT_DECAY, STAGE2_MOMENTUM)
