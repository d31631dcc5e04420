"""
Cue-Net forward pass
====================

The network returns a localization map, an image-level score and an edge
map, plus the deepest decoder map D4 that the teacher selector reads.
"""

import torch

from remtkd import cuenet, redts
from remtkd.data import ForgeryData

model = cuenet.build(cuenet.CueNetConfig(), seed=0)
n_params = sum(p.numel() for p in model.parameters())
print(f"parameters: {n_params:,}")

data = ForgeryData.generate("demo", {"authentic": 2, "splicing": 2}, seed=0, size=64)
x = cuenet.to_tensor(data.images)

for level, e in enumerate(model.encode(x), start=1):
    print(f"E{level}: {tuple(e.shape)}")

with torch.no_grad():
    out = model(x)
print("seg ", tuple(out.seg.shape), "edge", tuple(out.edge.shape), "cls", tuple(out.cls.shape))
print("D4  ", tuple(out.d4.shape))

# the fast decoder and the literal concat-then-fuse route agree
with torch.no_grad():
    pyr = model.encode(x)
    fast, _ = model.decode(pyr, (64, 64))
    slow, _ = model.decode_reference(pyr, (64, 64))
print(f"max |fast - literal| = {(fast - slow).abs().max():.2e}")

# batch representation used in the selector state
feat = redts.repr_feature(model, x)
print("pooled D4 feature:", feat.shape, "state length:", redts.state_dim(feat.size))
