"""Array bundle of samples used by training and evaluation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import synth


@dataclass
class ForgeryData:
    ids: list
    images: np.ndarray   # (N, H, W, 3) uint8, identical to the PNG contents
    masks: np.ndarray    # (N, H, W) uint8 {0, 1}
    edges: np.ndarray    # (N, H, W) uint8 {0, 1}
    labels: np.ndarray   # (N,) int
    types: list

    def __len__(self):
        return len(self.ids)

    @classmethod
    def from_records(cls, records) -> "ForgeryData":
        records = list(records)
        if not records:
            raise ValueError("no records")
        return cls(
            ids=[r.id for r in records],
            images=np.stack([synth.quantize(r.image) for r in records]),
            masks=np.stack([r.mask.astype(np.uint8) for r in records]),
            edges=np.stack([r.edge.astype(np.uint8) for r in records]),
            labels=np.array([r.label for r in records], dtype=np.int64),
            types=[r.forgery_type for r in records],
        )

    @classmethod
    def generate(cls, split: str, counts: dict, seed: int, size: int = 64) -> "ForgeryData":
        return cls.from_records(synth.generate_split(split, counts, seed, size))

    def take(self, idx) -> "ForgeryData":
        idx = np.asarray(idx, dtype=np.int64)
        return ForgeryData(
            ids=[self.ids[i] for i in idx], images=self.images[idx], masks=self.masks[idx],
            edges=self.edges[idx], labels=self.labels[idx], types=[self.types[i] for i in idx],
        )

    def select_types(self, types) -> "ForgeryData":
        keep = [i for i, t in enumerate(self.types) if t in set(types)]
        return self.take(keep)

    def sorted(self) -> "ForgeryData":
        return self.take(np.argsort(np.asarray(self.ids), kind="stable"))

    def concat(self, other: "ForgeryData") -> "ForgeryData":
        return ForgeryData(
            ids=self.ids + other.ids, images=np.concatenate([self.images, other.images]),
            masks=np.concatenate([self.masks, other.masks]), edges=np.concatenate([self.edges, other.edges]),
            labels=np.concatenate([self.labels, other.labels]), types=self.types + other.types,
        )

    def counts(self) -> dict:
        return {t: self.types.count(t) for t in synth.FORGERY_TYPES if t in self.types}


def as_forgery_data(data) -> ForgeryData:
    if isinstance(data, ForgeryData):
        return data
    if isinstance(data, synth.DatasetManifest):
        return ForgeryData.from_records(data.load())
    return ForgeryData.from_records(data)
