"""Procedural forgery corpus: authentic base images, copy-move, splicing,
inpainting and multi-operation tampering, with masks and edge bands.

Images are float arrays of shape (H, W, 3) in [0, 1]. Masks and edges are
uint8 arrays of shape (H, W) with values in {0, 1}.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

FORGERY_TYPES = ("authentic", "copy_move", "splicing", "inpainting", "multi")
SINGLE_OPS = ("copy_move", "splicing", "inpainting")

AREA_RANGE = (0.05, 0.25)
EDGE_WIDTH = 2
INPAINT_ITERS = 60
SENSOR_NOISE = (0.01, 0.05)     # per-image sensor noise level, several 8-bit steps
MAX_PLACEMENT_TRIES = 100

_SQUARE = np.ones((3, 3), dtype=bool)


class SynthError(ValueError):
    """Base class for generation failures."""


class SizeError(SynthError):
    pass


class ShapeMismatchError(SynthError):
    pass


class PlacementError(SynthError):
    pass


class StorageError(OSError):
    pass


def _check_image(image: np.ndarray) -> None:
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeMismatchError(f"expected (H, W, 3) image, got {image.shape}")


# --------------------------------------------------------------------------
# Base images


def _smooth_noise(rng, shape, sigma):
    field_ = ndimage.gaussian_filter(rng.standard_normal(shape), sigma, mode="wrap")
    field_ -= field_.min()
    return field_ / max(field_.max(), 1e-12)


def _color(rng):
    return rng.uniform(0.1, 0.9, size=3)


def _shape_mask(rng, size, kind):
    yy, xx = np.mgrid[0:size, 0:size]
    h = rng.integers(size // 6, size // 2 + 1)
    w = rng.integers(size // 6, size // 2 + 1)
    y0 = rng.integers(0, size - h + 1)
    x0 = rng.integers(0, size - w + 1)
    if kind == "rect":
        return (yy >= y0) & (yy < y0 + h) & (xx >= x0) & (xx < x0 + w)
    if kind == "ellipse":
        cy, cx = y0 + h / 2 - 0.5, x0 + w / 2 - 0.5
        return ((yy - cy) / (h / 2)) ** 2 + ((xx - cx) / (w / 2)) ** 2 <= 1.0
    # triangle: half-plane cut of the bounding box
    box = (yy >= y0) & (yy < y0 + h) & (xx >= x0) & (xx < x0 + w)
    return box & ((yy - y0) * w >= (xx - x0) * h)


def _texture(rng, size):
    yy, xx = np.mgrid[0:size, 0:size]
    kind = rng.integers(4)
    c1, c2 = _color(rng), _color(rng)
    if kind == 0:  # flat
        return np.broadcast_to(c1, (size, size, 3)).copy()
    if kind == 1:  # stripes
        period = rng.integers(3, 9)
        theta = rng.uniform(0, np.pi)
        t = (np.cos(theta) * xx + np.sin(theta) * yy) / period
        s = (np.sin(2 * np.pi * t) > 0)[..., None]
        return np.where(s, c1, c2)
    if kind == 2:  # checker
        cell = rng.integers(2, 7)
        s = (((yy // cell) + (xx // cell)) % 2 == 0)[..., None]
        return np.where(s, c1, c2)
    n = _smooth_noise(rng, (size, size), rng.uniform(0.8, 2.5))[..., None]
    return c1 * n + c2 * (1 - n)


def gen_base_image(seed: int, size: int = 64) -> np.ndarray:
    """Authentic synthetic scene: gradient background, a smooth noise field,
    2-5 textured shapes and per-image sensor noise."""
    if size < 32 or size % 32:
        raise SizeError(f"size must be a positive multiple of 32, got {size}")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)

    theta = rng.uniform(0, 2 * np.pi)
    t = np.clip(0.5 + (np.cos(theta) * (xx - 0.5) + np.sin(theta) * (yy - 0.5)), 0, 1)[..., None]
    img = _color(rng) * t + _color(rng) * (1 - t)

    # noise field confined to a random half-plane
    n = _smooth_noise(rng, (size, size), rng.uniform(2.0, 6.0))[..., None]
    phi = rng.uniform(0, 2 * np.pi)
    half = (np.cos(phi) * (xx - 0.5) + np.sin(phi) * (yy - 0.5) > rng.uniform(-0.2, 0.2))[..., None]
    img = np.where(half, 0.5 * img + 0.5 * (_color(rng) * n + _color(rng) * (1 - n)), img)

    for _ in range(rng.integers(2, 6)):
        m = _shape_mask(rng, size, rng.choice(["rect", "ellipse", "triangle"]))[..., None]
        img = np.where(m, _texture(rng, size), img)

    sigma = rng.uniform(*SENSOR_NOISE)
    img = img + rng.normal(0.0, sigma, img.shape)
    return np.clip(img, 0.0, 1.0)


# --------------------------------------------------------------------------
# Region sampling


def _region(rng, size, area_range, max_side):
    """Rect or ellipse mask inside a bounding box at the origin; realized area
    fraction lies within ``area_range``. Returns (mask_in_box, (bh, bw))."""
    lo, hi = area_range
    total = size * size
    for _ in range(MAX_PLACEMENT_TRIES):
        frac = rng.uniform(lo, hi)
        kind = "ellipse" if rng.random() < 0.5 else "rect"
        box_area = frac * total / (np.pi / 4 if kind == "ellipse" else 1.0)
        aspect = np.exp(rng.uniform(np.log(0.5), np.log(2.0)))
        bh = int(round(np.sqrt(box_area * aspect)))
        bw = int(round(np.sqrt(box_area / aspect)))
        bh, bw = min(max(bh, 2), max_side), min(max(bw, 2), max_side)
        if kind == "rect":
            m = np.ones((bh, bw), dtype=bool)
        else:
            yy, xx = np.mgrid[0:bh, 0:bw]
            m = ((yy - (bh - 1) / 2) / (bh / 2)) ** 2 + ((xx - (bw - 1) / 2) / (bw / 2)) ** 2 <= 1.0
        if lo <= m.sum() / total <= hi:
            return m, (bh, bw)
    raise PlacementError("could not realize a region within the area range")


def _place(shape_mask, size, y, x):
    full = np.zeros((size, size), dtype=bool)
    bh, bw = shape_mask.shape
    full[y:y + bh, x:x + bw] = shape_mask
    return full


def _random_region(rng, size, area_range):
    m, (bh, bw) = _region(rng, size, area_range, size)
    y = int(rng.integers(0, size - bh + 1))
    x = int(rng.integers(0, size - bw + 1))
    return _place(m, size, y, x), (y, x, bh, bw)


# --------------------------------------------------------------------------
# Tampering operations. Each returns (image, mask, meta).


def apply_copy_move(image: np.ndarray, rng: np.random.Generator,
                    area_range=AREA_RANGE):
    """Copy a patch to a non-overlapping location in the same image.

    The mask marks the pasted (target) region; ``meta["offset"]`` is the
    (dy, dx) shift from source to target.
    """
    _check_image(image)
    size = image.shape[0]
    if image.shape[1] != size:
        raise ShapeMismatchError("copy-move expects square images")
    m, (bh, bw) = _region(rng, size, area_range, size // 2)
    gy, gx = np.mgrid[0:size - bh + 1, 0:size - bw + 1]
    for _ in range(MAX_PLACEMENT_TRIES):
        sy, sx = int(rng.integers(0, size - bh + 1)), int(rng.integers(0, size - bw + 1))
        ok = (np.abs(gy - sy) >= bh) | (np.abs(gx - sx) >= bw)
        if ok.any():
            pick = int(rng.integers(ok.sum()))
            ty, tx = int(gy[ok][pick]), int(gx[ok][pick])
            break
    else:
        raise PlacementError("no non-overlapping copy-move placement after 100 tries")
    out = image.copy()
    src = image[sy:sy + bh, sx:sx + bw]
    tgt = out[ty:ty + bh, tx:tx + bw]
    tgt[m] = src[m]
    mask = _place(m, size, ty, tx).astype(np.uint8)
    meta = {"op": "copy_move", "source": (sy, sx), "target": (ty, tx),
            "offset": (ty - sy, tx - sx)}
    return out, mask, meta


def apply_splice(target: np.ndarray, donor: np.ndarray, rng: np.random.Generator,
                 area_range=AREA_RANGE, feather: bool | None = None):
    """Paste a donor patch into the target.

    With feathering, the 1-px inner boundary ring is a 50/50 blend of donor
    and target; the interior always equals the donor pixels exactly.
    """
    _check_image(target)
    if donor.shape != target.shape:
        raise ShapeMismatchError(f"donor {donor.shape} != target {target.shape}")
    size = target.shape[0]
    m, (bh, bw) = _region(rng, size, area_range, size)
    sy, sx = int(rng.integers(0, size - bh + 1)), int(rng.integers(0, size - bw + 1))
    ty, tx = int(rng.integers(0, size - bh + 1)), int(rng.integers(0, size - bw + 1))
    if feather is None:
        feather = bool(rng.random() < 0.5)
    out = target.copy()
    patch = donor[sy:sy + bh, sx:sx + bw]
    tgt = out[ty:ty + bh, tx:tx + bw]
    tgt[m] = patch[m]
    if feather:
        ring = m & ~ndimage.binary_erosion(m, _SQUARE, border_value=0)
        tgt[ring] = 0.5 * patch[ring] + 0.5 * target[ty:ty + bh, tx:tx + bw][ring]
    mask = _place(m, size, ty, tx).astype(np.uint8)
    meta = {"op": "splicing", "source": (sy, sx), "target": (ty, tx), "feather": feather}
    return out, mask, meta


def diffuse_fill(image: np.ndarray, region: np.ndarray, iterations: int) -> np.ndarray:
    """Fill ``region`` by Jacobi iterations of 4-neighbour averaging."""
    if iterations < 1:
        raise SynthError("inpainting needs at least 1 diffusion iteration")
    out = image.copy()
    ring = ndimage.binary_dilation(region, _SQUARE) & ~region
    out[region] = image[ring].mean(axis=0) if ring.any() else image.mean(axis=(0, 1))
    for _ in range(iterations):
        p = np.pad(out, ((1, 1), (1, 1), (0, 0)), mode="edge")
        avg = 0.25 * (p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:])
        out[region] = avg[region]
    return out


def apply_inpaint(image: np.ndarray, rng: np.random.Generator, area_range=AREA_RANGE,
                  iterations: int = INPAINT_ITERS, noise: float = 0.002):
    """Erase a region and fill it by neighbourhood diffusion plus faint noise."""
    _check_image(image)
    if iterations < 1:
        raise SynthError("inpainting needs at least 1 diffusion iteration")
    region, _ = _random_region(rng, image.shape[0], area_range)
    out = diffuse_fill(image, region, iterations)
    out[region] += rng.normal(0.0, noise, (int(region.sum()), 3))
    out = np.clip(out, 0.0, 1.0)
    return out, region.astype(np.uint8), {"op": "inpainting", "iterations": iterations}


def apply_multi(image: np.ndarray, donor: np.ndarray, rng: np.random.Generator,
                area_range=AREA_RANGE, ops=None):
    """Apply 2 or 3 distinct single operations in sequence; mask is the union."""
    _check_image(image)
    if donor.shape != image.shape:
        raise ShapeMismatchError(f"donor {donor.shape} != image {image.shape}")
    if ops is None:
        k = int(rng.integers(2, 4))
        ops = [SINGLE_OPS[i] for i in rng.permutation(3)[:k]]
    if len(set(ops)) != len(ops) or not 2 <= len(ops) <= 3:
        raise SynthError(f"multi needs 2-3 distinct operations, got {ops}")
    out = image
    mask = np.zeros(image.shape[:2], dtype=np.uint8)
    steps = []
    for op in ops:
        if op == "copy_move":
            out, m, meta = apply_copy_move(out, rng, area_range)
        elif op == "splicing":
            out, m, meta = apply_splice(out, donor, rng, area_range)
        else:
            out, m, meta = apply_inpaint(out, rng, area_range)
        mask |= m
        steps.append(meta | {"mask": m})
    return out, mask, {"op": "multi", "ops": list(ops), "steps": steps}


def mask_to_edge(mask: np.ndarray, width: int = EDGE_WIDTH) -> np.ndarray:
    """Band of total thickness ``width`` straddling the mask boundary.

    dilation by ``width // 2`` minus erosion by ``width - width // 2`` with a
    3x3 structuring element and zero padding, so width 2 is the classic
    one-step morphological gradient and width 1 is the inner boundary ring.
    """
    if width < 1:
        raise SynthError("edge width must be >= 1")
    m = mask.astype(bool)
    if not m.any():
        return np.zeros(m.shape, dtype=np.uint8)
    out_steps, in_steps = width // 2, width - width // 2
    dil = ndimage.binary_dilation(m, _SQUARE, iterations=out_steps) if out_steps else m
    ero = ndimage.binary_erosion(m, _SQUARE, iterations=in_steps, border_value=0)
    return (dil & ~ero).astype(np.uint8)


# --------------------------------------------------------------------------
# Records and datasets


@dataclass
class SampleRecord:
    id: str
    image: np.ndarray
    mask: np.ndarray
    edge: np.ndarray
    forgery_type: str
    label: int
    meta: dict = field(default_factory=dict, repr=False)


def sample_seed(global_seed: int, sample_id: str) -> np.random.SeedSequence:
    """Per-sample seed sequence depending only on (global_seed, id)."""
    digest = hashlib.sha256(sample_id.encode("utf-8")).digest()
    key = [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]
    return np.random.SeedSequence(entropy=global_seed, spawn_key=key)


def generate_sample(sample_id: str, forgery_type: str, global_seed: int, size: int = 64,
                    area_range=AREA_RANGE, edge_width: int = EDGE_WIDTH) -> SampleRecord:
    if forgery_type not in FORGERY_TYPES:
        raise SynthError(f"unknown forgery type {forgery_type!r}")
    ss = sample_seed(global_seed, sample_id)
    base_seed, donor_seed, op_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(3))
    rng = np.random.default_rng(op_seed)
    image = gen_base_image(base_seed, size)
    meta: dict = {}
    if forgery_type == "authentic":
        mask = np.zeros((size, size), dtype=np.uint8)
    elif forgery_type == "copy_move":
        image, mask, meta = apply_copy_move(image, rng, area_range)
    elif forgery_type == "splicing":
        image, mask, meta = apply_splice(image, gen_base_image(donor_seed, size), rng, area_range)
    elif forgery_type == "inpainting":
        image, mask, meta = apply_inpaint(image, rng, area_range)
    else:
        image, mask, meta = apply_multi(image, gen_base_image(donor_seed, size), rng, area_range)
    return SampleRecord(
        id=sample_id, image=image, mask=mask, edge=mask_to_edge(mask, edge_width),
        forgery_type=forgery_type, label=int(mask.any()), meta=meta,
    )


def sample_ids(split: str, counts: dict[str, int]) -> list[tuple[str, str]]:
    out = []
    for ftype in FORGERY_TYPES:
        n = counts.get(ftype, 0)
        if n < 0:
            raise SynthError(f"negative count for {ftype}")
        out.extend((f"{split}-{ftype}-{i:05d}", ftype) for i in range(n))
    unknown = set(counts) - set(FORGERY_TYPES)
    if unknown:
        raise SynthError(f"unknown forgery types {sorted(unknown)}")
    return out


def generate_split(split: str, counts: dict[str, int], seed: int, size: int = 64,
                   area_range=AREA_RANGE, edge_width: int = EDGE_WIDTH) -> list[SampleRecord]:
    return [generate_sample(sid, ftype, seed, size, area_range, edge_width)
            for sid, ftype in sample_ids(split, counts)]


@dataclass
class DatasetConfig:
    out_dir: str
    split: str = "train"
    counts: dict = field(default_factory=lambda: {"authentic": 10, "copy_move": 10})
    size: int = 64
    seed: int = 0
    edge_width: int = EDGE_WIDTH
    area_range: tuple = AREA_RANGE


@dataclass
class DatasetManifest:
    root: Path
    split: str
    records: list[dict]

    @property
    def counts(self) -> dict[str, int]:
        c = {t: 0 for t in FORGERY_TYPES}
        for r in self.records:
            c[r["forgery_type"]] += 1
        return c

    def load_record(self, entry: dict) -> SampleRecord:
        def read(rel):
            return np.asarray(Image.open(self.root / rel))
        mask = (read(entry["mask_path"]) > 127).astype(np.uint8)
        return SampleRecord(
            id=entry["id"], image=read(entry["image_path"]).astype(np.float64) / 255.0,
            mask=mask, edge=(read(entry["edge_path"]) > 127).astype(np.uint8),
            forgery_type=entry["forgery_type"], label=int(entry["label"]),
        )

    def load(self) -> list[SampleRecord]:
        return [self.load_record(e) for e in self.records]


MANIFEST_NAME = "manifest.jsonl"


def _save_png(path: Path, arr: np.ndarray) -> None:
    Image.fromarray(arr).save(path, format="PNG")


def quantize(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def build_dataset(config: DatasetConfig) -> DatasetManifest:
    """Generate a split on disk: PNG images/masks/edges plus ``manifest.jsonl``."""
    root = Path(config.out_dir) / config.split
    try:
        for sub in ("images", "masks", "edges"):
            (root / sub).mkdir(parents=True, exist_ok=True)
        entries = []
        for sid, ftype in sample_ids(config.split, config.counts):
            rec = generate_sample(sid, ftype, config.seed, config.size,
                                  config.area_range, config.edge_width)
            entry = {
                "id": sid,
                "image_path": f"images/{sid}.png",
                "mask_path": f"masks/{sid}.png",
                "edge_path": f"edges/{sid}.png",
                "forgery_type": ftype,
                "label": rec.label,
            }
            _save_png(root / entry["image_path"], quantize(rec.image))
            _save_png(root / entry["mask_path"], rec.mask * 255)
            _save_png(root / entry["edge_path"], rec.edge * 255)
            entries.append(entry)
        tmp = root / (MANIFEST_NAME + ".tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            for e in entries:
                fh.write(json.dumps(e, sort_keys=True) + "\n")
        os.replace(tmp, root / MANIFEST_NAME)
    except OSError as exc:
        raise StorageError(f"cannot write dataset under {root}: {exc}") from exc
    return DatasetManifest(root=root, split=config.split, records=entries)


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    with open(path, encoding="utf-8") as fh:
        records = [json.loads(line) for line in fh if line.strip()]
    split = records[0]["id"].split("-", 1)[0] if records else path.parent.name
    for r in records:
        for key in ("image_path", "mask_path", "edge_path"):
            if not (path.parent / r[key]).exists():
                raise FileNotFoundError(f"manifest references missing file {r[key]}")
    return DatasetManifest(root=path.parent, split=split, records=records)
