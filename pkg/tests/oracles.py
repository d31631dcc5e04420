"""Independent reference implementations written element by element in
plain Python/numpy, sharing no code with the package."""
from __future__ import annotations

import math

import numpy as np

CLAMP = 1e-7


def _clamp(p):
    return min(max(p, CLAMP), 1.0 - CLAMP)


def dice(pred, target, eps=1.0):
    """Per-sample dice loss averaged over the leading axis."""
    vals = []
    for p, t in zip(pred, target):
        inter = sp = st = 0.0
        for a, b in zip(np.ravel(p), np.ravel(t)):
            inter += a * b
            sp += a
            st += b
        vals.append(1.0 - (2.0 * inter + eps) / (sp + st + eps))
    return sum(vals) / len(vals)


def wbce(pred, target, cap=20.0):
    flat_p, flat_t = list(np.ravel(pred)), list(np.ravel(target))
    n = len(flat_t)
    pos = sum(flat_t)
    neg = n - pos
    if pos <= 0 or neg <= 0:
        wp = wn = 1.0
    else:
        wp, wn = min(n / (2 * pos), cap), min(n / (2 * neg), cap)
    total = 0.0
    for p, t in zip(flat_p, flat_t):
        p = _clamp(p)
        total += -(wp * t * math.log(p) + wn * (1 - t) * math.log(1 - p))
    return total / n


def bce(pred, target):
    flat_p, flat_t = list(np.ravel(pred)), list(np.ravel(target))
    total = 0.0
    for p, t in zip(flat_p, flat_t):
        p = _clamp(p)
        total += -(t * math.log(p) + (1 - t) * math.log(1 - p))
    return total / len(flat_t)


def seg(pred, target, lam=0.1):
    return lam * wbce(pred, target) + (1 - lam) * dice(pred, target)


def hard(seg_p, cls_p, edge_p, y_s, y_c, y_e, alpha=1.0, beta=0.2, lam=0.1):
    return alpha * seg(seg_p, y_s, lam) + beta * (bce(cls_p, y_c) + dice(edge_p, y_e))


def soft(s_seg, s_cls, t_seg, t_cls, variant="soft3", lam=0.1):
    out = 0.0
    if variant in ("soft1", "soft3"):
        out += seg(s_seg, t_seg, lam)
    if variant in ("soft2", "soft3"):
        out += bce(s_cls, t_cls)
    return out


def f1_iou(pred_bin, mask):
    tp = fp = fn = 0
    for p, m in zip(np.ravel(pred_bin), np.ravel(mask)):
        if p and m:
            tp += 1
        elif p and not m:
            fp += 1
        elif m and not p:
            fn += 1
    if tp + fp + fn == 0:
        return 1.0, 1.0
    return 2 * tp / (2 * tp + fp + fn), tp / (tp + fp + fn)


def auc_pairs(scores, labels):
    """Probability a random positive outranks a random negative, ties 1/2."""
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    wins = 0.0
    for a in pos:
        for b in neg:
            wins += 1.0 if a > b else 0.5 if a == b else 0.0
    return wins / (len(pos) * len(neg))
