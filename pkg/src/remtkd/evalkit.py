"""Pixel/image metrics, robustness perturbations and per-type reports."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from PIL import Image
from scipy import ndimage, stats

THRESHOLD = 0.5
METRIC_NAMES = ("pixel_f1", "pixel_iou", "pixel_auc", "image_acc", "image_f1", "image_auc")


class UndefinedMetricError(ValueError):
    pass


def pixel_metrics(pred, mask, threshold: float = THRESHOLD, empty: str = "one"):
    """(F1, IoU) of ``pred >= threshold`` against a binary mask.

    When both the binarized prediction and the mask are empty the result is
    (1.0, 1.0) with ``empty="one"`` and None with ``empty="skip"``.
    """
    b = np.asarray(pred) >= threshold
    m = np.asarray(mask).astype(bool)
    if b.shape != m.shape:
        raise ValueError(f"shape mismatch: {b.shape} vs {m.shape}")
    tp = int(np.count_nonzero(b & m))
    fp = int(np.count_nonzero(b & ~m))
    fn = int(np.count_nonzero(~b & m))
    if tp + fp + fn == 0:
        return (1.0, 1.0) if empty == "one" else None
    return 2 * tp / (2 * tp + fp + fn), tp / (tp + fp + fn)


def auc(scores, labels) -> float:
    """Mann-Whitney AUC with average ranks for ties."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(bool)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs at least one positive and one negative")
    ranks = stats.rankdata(s)
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def image_metrics(cls_scores, labels, threshold: float = THRESHOLD):
    """(accuracy, F1, AUC) for image-level detection. AUC is NaN for
    single-class inputs; F1 is 0 when there are no true positives."""
    s = np.asarray(cls_scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(bool)
    pred = s >= threshold
    acc = float(np.mean(pred == y))
    tp = int(np.count_nonzero(pred & y))
    fp = int(np.count_nonzero(pred & ~y))
    fn = int(np.count_nonzero(~pred & y))
    f1 = 2 * tp / (2 * tp + fp + fn) if tp else 0.0
    try:
        a = auc(s, y)
    except UndefinedMetricError:
        a = math.nan
    return acc, f1, a


# --------------------------------------------------------------------------
# Perturbations

PERTURBATIONS = ("jpeg", "gaussian_blur", "gaussian_noise", "median_filter")


@dataclass(frozen=True)
class PerturbationSpec:
    kind: str
    severity: float
    seed: int = 0

    def __post_init__(self):
        if self.kind not in PERTURBATIONS:
            raise ValueError(f"unknown perturbation {self.kind!r}")
        s = self.severity
        ok = {
            "jpeg": 1 <= s <= 100,
            "gaussian_blur": s >= 0,
            "gaussian_noise": s >= 0,
            "median_filter": s >= 1 and float(s).is_integer() and int(s) % 2 == 1,
        }[self.kind]
        if not ok:
            raise ValueError(f"invalid severity {s} for {self.kind}")

    @property
    def label(self) -> str:
        return f"{self.kind}:{self.severity:g}"


def perturb(image: np.ndarray, spec: PerturbationSpec, rng: np.random.Generator | None = None) -> np.ndarray:
    """Degrade an (H, W, 3) image in [0, 1]. Masks are never perturbed."""
    img = np.asarray(image, dtype=np.float64)
    if spec.kind == "jpeg":
        buf = io.BytesIO()
        Image.fromarray(np.round(np.clip(img, 0, 1) * 255).astype(np.uint8)).save(
            buf, format="JPEG", quality=int(spec.severity))
        buf.seek(0)
        return np.asarray(Image.open(buf).convert("RGB"), dtype=np.float64) / 255.0
    if spec.kind == "gaussian_blur":
        if spec.severity == 0:
            return img.copy()
        return ndimage.gaussian_filter(img, sigma=(spec.severity, spec.severity, 0), mode="reflect")
    if spec.kind == "gaussian_noise":
        if spec.severity == 0:
            return img.copy()
        rng = rng if rng is not None else np.random.default_rng(spec.seed)
        return np.clip(img + rng.normal(0.0, spec.severity, img.shape), 0.0, 1.0)
    k = int(spec.severity)
    if k == 1:
        return img.copy()
    return ndimage.median_filter(img, size=(k, k, 1), mode="reflect")


# --------------------------------------------------------------------------
# Reports


@dataclass
class GroupMetrics:
    pixel_f1: float
    pixel_iou: float
    pixel_auc: float
    image_acc: float
    image_f1: float
    image_auc: float
    n_tampered: int = 0
    n_authentic: int = 0

    @property
    def average_f1(self) -> float:
        return 0.5 * (self.pixel_f1 + self.image_f1)


def _nanmean(values):
    vals = [v for v in values if not (isinstance(v, float) and math.isnan(v))]
    return float(np.mean(vals)) if vals else math.nan


@dataclass
class MetricsReport:
    groups: dict = field(default_factory=dict)   # forgery_type -> GroupMetrics
    average: GroupMetrics | None = None
    perturbation: str = "none"

    @property
    def average_f1(self) -> float:
        """Mean of image-level and pixel-level F1 over forgery types."""
        return _nanmean([g.average_f1 for g in self.groups.values()])

    def rows(self):
        for name, g in list(self.groups.items()) + [("average", self.average)]:
            yield {"group": name, "perturbation": self.perturbation, **asdict(g)}

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=["group", "perturbation", *METRIC_NAMES, "n_tampered", "n_authentic"],
                                lineterminator="\n")
        writer.writeheader()
        for row in self.rows():
            writer.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in row.items()})
        return buf.getvalue()

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.rows())


def group_metrics(seg_probs, cls_probs, masks, labels, threshold=THRESHOLD, empty="one") -> GroupMetrics:
    f1s, ious, aucs = [], [], []
    for p, m in zip(seg_probs, masks):
        r = pixel_metrics(p, m, threshold, empty)
        if r is not None:
            f1s.append(r[0])
            ious.append(r[1])
        if m.any() and not m.all():
            aucs.append(auc(p, m))
    acc, f1, a = image_metrics(cls_probs, labels, threshold)
    labels = np.asarray(labels)
    return GroupMetrics(
        pixel_f1=_nanmean(f1s), pixel_iou=_nanmean(ious), pixel_auc=_nanmean(aucs),
        image_acc=acc, image_f1=f1, image_auc=a,
        n_tampered=int(labels.sum()), n_authentic=int((labels == 0).sum()),
    )


@torch.no_grad()
def predict(model, images: np.ndarray, batch_size: int = 64):
    """Seg probability maps (N, H, W) and detection scores (N,) as float64."""
    from .cuenet import to_tensor

    model.eval()
    dtype = next(model.parameters()).dtype
    segs, clss = [], []
    for i in range(0, len(images), batch_size):
        out = model(to_tensor(images[i:i + batch_size], dtype))
        segs.append(out.seg[:, 0].double().numpy())
        clss.append(out.cls.double().numpy())
    return np.concatenate(segs), np.concatenate(clss)


def evaluate(model, data, perturbation: PerturbationSpec | None = None,
             threshold: float = THRESHOLD, empty: str = "one", batch_size: int = 64) -> MetricsReport:
    """Per-forgery-type report for ``model`` on ``data``.

    ``data`` is a ForgeryData bundle, a list of SampleRecords or a
    DatasetManifest. Each tampered type is scored together with all authentic
    samples (the negatives); a manifest with only authentic samples yields a
    single "authentic" group. Averages are unweighted over groups.
    """
    from .data import as_forgery_data

    data = as_forgery_data(data).sorted()
    images = data.images
    if perturbation is not None:
        rng = np.random.default_rng(perturbation.seed)
        images = np.stack([perturb(im / 255.0 if im.dtype == np.uint8 else im, perturbation, rng)
                           for im in images])
    seg, cls = predict(model, images, batch_size)
    types = np.asarray(data.types)
    authentic = types == "authentic"
    names = [t for t in dict.fromkeys(data.types) if t != "authentic"]
    groups = {}
    if not names:
        names = ["authentic"]
    for name in sorted(names, key=_type_order):
        sel = (types == name) | authentic
        groups[name] = group_metrics(seg[sel], cls[sel], data.masks[sel], data.labels[sel], threshold, empty)
    report = MetricsReport(groups=groups, perturbation=perturbation.label if perturbation else "none")
    report.average = GroupMetrics(
        **{m: _nanmean([getattr(g, m) for g in groups.values()]) for m in METRIC_NAMES},
        n_tampered=int(sum(g.n_tampered for g in groups.values())),
        n_authentic=int(authentic.sum()),
    )
    return report


def _type_order(name):
    from .synth import FORGERY_TYPES

    return FORGERY_TYPES.index(name) if name in FORGERY_TYPES else len(FORGERY_TYPES)


def plot_robustness(curves: dict, path, metric: str = "pixel_f1"):
    """``curves``: kind -> list of (severity, value). Writes PNG or SVG."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, len(curves), figsize=(4 * len(curves), 3.2), squeeze=False)
    for ax, (kind, pts) in zip(axes[0], curves.items()):
        xs, ys = zip(*pts)
        ax.plot(xs, ys, marker="o")
        ax.set_title(kind)
        ax.set_xlabel("severity")
        ax.set_ylabel(metric)
        if kind == "jpeg":
            ax.invert_xaxis()
        ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
