"""
Pointwise regression losses and their restriction to the sparse set of supervised pixels.
"""
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from flowmap.exceptions import LossError


class LossKind(str, Enum):
    HUBER = "huber"
    MSE = "mse"
    L1 = "l1"


class LossScale(str, Enum):
    """
    Scale the loss is computed on: the model's normalized flow scale, or m³/s.
    """

    NORMALIZED = "normalized"
    RAW = "raw"


@dataclass(frozen=True)
class LossSpec:
    kind: LossKind = LossKind.HUBER
    delta: float = 1.0
    scale: LossScale = LossScale.NORMALIZED

    def __post_init__(self):
        try:
            object.__setattr__(self, "kind", LossKind(self.kind))
            object.__setattr__(self, "scale", LossScale(self.scale))
        except ValueError as exc:
            raise LossError(str(exc)) from exc
        if not self.delta > 0:
            raise LossError("huber delta must be positive, got {}".format(self.delta), delta=self.delta)

    def as_dict(self) -> dict:
        return {"kind": self.kind.value, "delta": self.delta, "scale": self.scale.value}


def pointwise_loss(f: float, f_gt: float, spec: LossSpec) -> float:
    """
    Loss of one prediction ``f`` against its ground truth ``f_gt``, in 64-bit precision.
    """
    error = float(f) - float(f_gt)
    if spec.kind == LossKind.MSE:
        return error * error
    if spec.kind == LossKind.L1:
        return abs(error)
    if abs(error) <= spec.delta:
        return 0.5 * error * error
    return spec.delta * (abs(error) - 0.5 * spec.delta)


def pointwise_loss_derivative(f: float, f_gt: float, spec: LossSpec) -> float:
    """
    Derivative of ``pointwise_loss`` with respect to ``f``.
    """
    error = float(f) - float(f_gt)
    if spec.kind == LossKind.MSE:
        return 2.0 * error
    if spec.kind == LossKind.L1:
        return float(np.sign(error))
    if abs(error) <= spec.delta:
        return error
    return spec.delta * float(np.sign(error))


def pointwise_loss_tensor(pred: torch.Tensor, target: torch.Tensor, spec: LossSpec) -> torch.Tensor:
    if spec.kind == LossKind.MSE:
        return F.mse_loss(pred, target, reduction="none")
    if spec.kind == LossKind.L1:
        return F.l1_loss(pred, target, reduction="none")
    return F.huber_loss(pred, target, reduction="none", delta=spec.delta)


def masked_loss(flow_map: torch.Tensor, targets: Sequence, spec: LossSpec) -> torch.Tensor:
    """
    Mean pointwise loss over the target pixels of one (H, W) flow map.

    Every other pixel contributes neither loss nor gradient. Targets carry ``pixel``, ``flow_norm``,
    ``flow_gt``, ``norm_max`` and ``norm_shift``; on the raw scale predictions are mapped back to m³/s first.
    """
    if not targets:
        raise LossError("masked loss needs at least one target")
    height, width = flow_map.shape[-2:]
    rows, cols = [], []
    for target in targets:
        row, col = target.pixel
        if not (0 <= row < height and 0 <= col < width):
            raise LossError("target pixel {} outside the {}x{} map".format(target.pixel, height, width))
        rows.append(row)
        cols.append(col)

    predicted = flow_map[..., rows, cols]
    if spec.scale == LossScale.RAW:
        scales = torch.tensor([t.norm_max for t in targets], dtype=flow_map.dtype, device=flow_map.device)
        shifts = torch.tensor([t.norm_shift for t in targets], dtype=flow_map.dtype, device=flow_map.device)
        predicted = predicted * scales + shifts
        truth = [t.flow_gt for t in targets]
    else:
        truth = [t.flow_norm for t in targets]
    truth = torch.tensor(truth, dtype=flow_map.dtype, device=flow_map.device)
    return pointwise_loss_tensor(predicted, truth, spec).mean()


def batch_masked_loss(flow_maps: torch.Tensor, targets_batch: Sequence[Sequence], spec: LossSpec) -> torch.Tensor:
    """
    Average of the per-sample masked losses of a (B, H, W) batch.
    """
    if len(flow_maps) != len(targets_batch):
        raise LossError(
            "batch holds {} flow maps but {} target lists".format(len(flow_maps), len(targets_batch)),
        )
    if not len(targets_batch):
        raise LossError("empty batch")
    losses = [masked_loss(flow_map, targets, spec) for flow_map, targets in zip(flow_maps, targets_batch)]
    return torch.stack(losses).mean()
