"""Supervised ("hard") and distillation ("soft") losses.

Map-valued inputs are (B, 1, H, W) or (B, H, W) tensors of probabilities;
every per-sample reduction is over all non-batch axes, then averaged over
the batch.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import torch

CLAMP = 1e-7
DICE_EPS = 1.0
WBCE_CAP = 20.0
SOFT_VARIANTS = ("soft1", "soft2", "soft3")


@dataclass
class LossWeights:
    alpha: float = 1.0
    beta: float = 0.2
    lambda0_s: float = 0.1
    omega: float = 0.05
    omega_scaling: str = "multiply_by_selected"

    def __post_init__(self):
        for name in ("alpha", "beta", "lambda0_s"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.omega < 0:
            raise ValueError(f"omega must be >= 0, got {self.omega}")
        if self.omega_scaling not in ("multiply_by_selected", "none"):
            raise ValueError(f"unknown omega_scaling {self.omega_scaling!r}")

    def effective_omega(self, n_selected: int) -> float:
        if self.omega_scaling == "multiply_by_selected":
            return self.omega * n_selected
        return self.omega


def _check_same(pred, target):
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")


def _flat(x):
    return x.reshape(x.shape[0], -1) if x.ndim > 1 else x.reshape(1, -1)


def dice_loss(pred, target, eps: float = DICE_EPS):
    _check_same(pred, target)
    p, t = _flat(pred), _flat(target)
    inter = (p * t).sum(dim=1)
    score = (2.0 * inter + eps) / (p.sum(dim=1) + t.sum(dim=1) + eps)
    return (1.0 - score).mean()


def class_weights(target, cap: float = WBCE_CAP):
    """Inverse class frequency over the whole batch, N / (2 N_c), capped.

    Falls back to uniform weights when either class has zero mass.
    """
    n = target.numel()
    n_pos = target.sum()
    n_neg = n - n_pos
    if n_pos <= 0 or n_neg <= 0:
        return 1.0, 1.0
    w_pos = torch.clamp(n / (2.0 * n_pos), max=cap)
    w_neg = torch.clamp(n / (2.0 * n_neg), max=cap)
    return w_pos, w_neg


def wbce_loss(pred, target, cap: float = WBCE_CAP):
    _check_same(pred, target)
    target = target.detach()
    w_pos, w_neg = class_weights(target, cap)
    p = pred.clamp(CLAMP, 1.0 - CLAMP)
    loss = -(w_pos * target * torch.log(p) + w_neg * (1.0 - target) * torch.log(1.0 - p))
    return loss.mean()


def bce_loss(pred, target):
    _check_same(pred, target)
    p = pred.clamp(CLAMP, 1.0 - CLAMP)
    return -(target * torch.log(p) + (1.0 - target) * torch.log(1.0 - p)).mean()


def loss_seg(f_s, y_s, lambda0_s: float = 0.1):
    return lambda0_s * wbce_loss(f_s, y_s) + (1.0 - lambda0_s) * dice_loss(f_s, y_s)


def loss_cls(f_c, y_c):
    return bce_loss(f_c, y_c)


def loss_edg(f_e, y_e):
    return dice_loss(f_e, y_e)


@dataclass
class LossBreakdown:
    seg: torch.Tensor
    cls: torch.Tensor
    edg: torch.Tensor
    hard: torch.Tensor
    soft_per_teacher: dict = field(default_factory=dict)
    total: torch.Tensor | None = None

    def scalars(self) -> dict:
        out = {k: float(getattr(self, k).detach()) for k in ("seg", "cls", "edg", "hard")}
        out["soft"] = {k: float(v.detach()) for k, v in self.soft_per_teacher.items()}
        out["total"] = float((self.total if self.total is not None else self.hard).detach())
        return out


def combine_hard(seg, cls, edg, weights: LossWeights):
    return weights.alpha * seg + weights.beta * (cls + edg)


def loss_hard(outputs, y_s, y_c, y_e, weights: LossWeights) -> LossBreakdown:
    """L_hard = alpha * L_seg + beta * (L_cls + L_edg) against ground truth."""
    seg = loss_seg(outputs.seg, y_s, weights.lambda0_s)
    cls = loss_cls(outputs.cls, y_c)
    edg = loss_edg(outputs.edge, y_e)
    return LossBreakdown(seg=seg, cls=cls, edg=edg, hard=combine_hard(seg, cls, edg, weights))


def loss_soft(student, teacher, variant: str = "soft3", lambda0_s: float = 0.1):
    """Distillation loss against teacher probabilities used as soft labels.

    ``student``/``teacher`` need ``seg`` and ``cls`` attributes. soft1 keeps the
    segmentation term, soft2 the classification term, soft3 both.
    """
    if variant not in SOFT_VARIANTS:
        raise ValueError(f"unknown soft variant {variant!r}")
    t_seg, t_cls = teacher.seg.detach(), teacher.cls.detach()
    total = 0.0
    if variant in ("soft1", "soft3"):
        total = total + loss_seg(student.seg, t_seg, lambda0_s)
    if variant in ("soft2", "soft3"):
        total = total + loss_cls(student.cls, t_cls)
    return total


def total_loss(hard, soft_losses: list, weights: LossWeights, n_selected: int | None = None):
    """L_hard + omega_eff * sum of the soft losses.

    ``n_selected`` (default: number of soft terms) scales omega; an ensemble
    target averaged over 3 teachers passes one term with ``n_selected=3``.
    """
    if not soft_losses or weights.omega == 0.0:
        return hard
    n = len(soft_losses) if n_selected is None else n_selected
    return hard + weights.effective_omega(n) * sum(soft_losses)
