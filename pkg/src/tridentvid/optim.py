"""Optimizer construction and the training-log record shared by all stages."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable

import torch


class TrainingDivergence(RuntimeError):
    def __init__(self, stage: str, step: int, loss: float):
        super().__init__(f"non-finite loss in stage {stage!r} at step {step}: {loss}")
        self.stage = stage
        self.step = step
        self.loss = loss


@dataclass
class LogRecord:
    step: int
    stage: str
    loss: float
    lr: float
    seed: int


def make_optimizer(params: Iterable[torch.nn.Parameter], name: str, lr: float) -> torch.optim.Optimizer:
    params = [p for p in params if p.requires_grad]
    if name == "adam":
        return torch.optim.Adam(params, lr=lr)
    if name == "sgd":
        return torch.optim.SGD(params, lr=lr)
    raise ValueError(f"unknown optimizer {name!r} (expected 'adam' or 'sgd')")


def check_finite(loss: torch.Tensor, stage: str, step: int) -> float:
    value = float(loss.detach())
    if not math.isfinite(value):
        raise TrainingDivergence(stage, step, value)
    return value


def write_log(records: list[LogRecord], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(asdict(rec)) + "\n")


def read_log(path: str | Path) -> list[LogRecord]:
    with open(path) as fh:
        return [LogRecord(**json.loads(line)) for line in fh if line.strip()]
