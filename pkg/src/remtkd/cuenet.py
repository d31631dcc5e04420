"""Desk-scale Cue-Net: ConvNeXt-style 4-stage encoder, UPerNet decoder
(pyramid pooling + feature pyramid), edge-aware module and a
classification head on the deepest encoder level.

The network has no running statistics (GroupNorm only), so ``forward`` is a
pure function of the input and the parameter tensors.
"""
from __future__ import annotations

import functools
import hashlib
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

STRIDES = (4, 8, 16, 32)


@dataclass(frozen=True)
class CueNetConfig:
    stage_channels: tuple = (16, 32, 64, 128)
    d: int = 128
    eam_channels: int = 16
    ppm_bins: tuple = (1, 2, 3, 6)
    in_channels: int = 3

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "CueNetConfig":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


TINY = CueNetConfig(stage_channels=(4, 8, 16, 32), d=16, eam_channels=4)


class ModelOutputs(NamedTuple):
    seg: torch.Tensor        # (B, 1, H, W) probabilities
    cls: torch.Tensor        # (B,) probabilities
    edge: torch.Tensor       # (B, 1, H, W) probabilities
    d4: torch.Tensor         # (B, d, h/32, w/32) deepest decoder map
    e4: torch.Tensor         # (B, C4, h/32, w/32)
    seg_logits: torch.Tensor
    cls_logits: torch.Tensor


@functools.lru_cache(maxsize=None)
def _interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) 1-D linear interpolation weights, half-pixel centres,
    edge-clamped (``align_corners=False`` semantics)."""
    m = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        src = max((i + 0.5) * scale - 0.5, 0.0)
        i0 = min(int(np.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        w1 = src - i0
        m[i, i0] += 1.0 - w1
        m[i, i1] += w1
    return m


@functools.lru_cache(maxsize=None)
def _resize_operator(h: int, w: int, H: int, W: int, dtype: torch.dtype) -> torch.Tensor:
    k = np.kron(_interp_matrix(h, H), _interp_matrix(w, W))  # (H*W, h*w)
    return torch.from_numpy(np.ascontiguousarray(k.T)).to(dtype)


def resize_bilinear(x: torch.Tensor, size) -> torch.Tensor:
    """Bilinear resize of (B, C, h, w) to ``size``.

    Same values as ``F.interpolate(..., mode="bilinear", align_corners=False)``
    but expressed as one matmul, whose backward is far cheaper on CPU.
    """
    h, w = x.shape[-2:]
    H, W = int(size[0]), int(size[1])
    if (h, w) == (H, W):
        return x
    if h * w * H * W > 1 << 24:
        return F.interpolate(x, size=(H, W), mode="bilinear", align_corners=False)
    op = _resize_operator(h, w, H, W, x.dtype)
    B, C = x.shape[:2]
    return (x.reshape(B * C, h * w) @ op).view(B, C, H, W)


def _pointwise(x: torch.Tensor, conv: nn.Conv2d) -> torch.Tensor:
    # 1x1 conv as a channel matmul; same result, faster on CPU
    y = torch.einsum("bchw,oc->bohw", x, conv.weight[:, :, 0, 0])
    return y if conv.bias is None else y + conv.bias.view(1, -1, 1, 1)


class CBR(nn.Module):
    """conv -> GroupNorm -> ReLU"""

    def __init__(self, cin, cout, k=1):
        super().__init__()
        self.conv = nn.Conv2d(cin, cout, k, padding=k // 2)
        self.norm = nn.GroupNorm(1, cout)

    def forward(self, x):
        x = _pointwise(x, self.conv) if self.conv.kernel_size == (1, 1) else self.conv(x)
        return F.relu(self.norm(x))


class Stage(nn.Module):
    """Downsample conv -> norm -> GELU, then a residual depthwise/MLP block."""

    def __init__(self, cin, cout, first):
        super().__init__()
        # the first stage patchifies by 4; later ones halve with padding so
        # that inputs below 32 px still yield non-empty maps
        self.down = nn.Conv2d(cin, cout, 4, stride=4) if first else nn.Conv2d(cin, cout, 3, stride=2, padding=1)
        self.norm0 = nn.GroupNorm(1, cout)
        self.dw = nn.Conv2d(cout, cout, 3, padding=1, groups=cout)
        self.norm1 = nn.GroupNorm(1, cout)
        self.pw1 = nn.Conv2d(cout, 4 * cout, 1)
        self.pw2 = nn.Conv2d(4 * cout, cout, 1)

    def forward(self, x):
        x = F.gelu(self.norm0(self.down(x)))
        y = self.norm1(self.dw(x))
        return x + _pointwise(F.gelu(_pointwise(y, self.pw1)), self.pw2)


class CueNet(nn.Module):
    def __init__(self, config: CueNetConfig = CueNetConfig()):
        super().__init__()
        self.config = config
        c, d, r = config.stage_channels, config.d, config.eam_channels
        if len(c) != 4 or any(b <= a for a, b in zip(c, c[1:])):
            raise ValueError(f"need 4 strictly increasing stage channels, got {c}")
        if d % len(config.ppm_bins):
            raise ValueError("d must be divisible by the number of PPM bins")
        self.stages = nn.ModuleList(
            Stage(config.in_channels if i == 0 else c[i - 1], c[i], i == 0) for i in range(4))
        # UPerNet decoder
        self.ppm = nn.ModuleList(CBR(c[3], d // len(config.ppm_bins)) for _ in config.ppm_bins)
        self.ppm_bottleneck = CBR(c[3] + d, d, k=3)
        self.lateral = nn.ModuleList(CBR(c[i], d) for i in range(3))
        self.fpn_out = nn.ModuleList(CBR(d, d) for _ in range(3))
        self.fuse = nn.Conv2d(4 * d, 1, 1)
        # edge-aware module
        self.eam_low = CBR(c[1], r)
        self.eam_high = CBR(c[3], r)
        self.eam_fuse = CBR(2 * r, r, k=3)
        self.eam_out = nn.Conv2d(r, 1, 1)
        # detection head
        self.cls_head = nn.Linear(c[3], 1)

    # ------------------------------------------------------------------
    def _check_input(self, image):
        if image.ndim != 4 or image.shape[1] != self.config.in_channels:
            raise ValueError(f"expected (B, {self.config.in_channels}, H, W), got {tuple(image.shape)}")
        h, w = image.shape[-2:]
        if h < 16 or w < 16 or h % 16 or w % 16:
            raise ValueError(f"H and W must be positive multiples of 16, got {h}x{w}")

    def encode(self, image: torch.Tensor) -> list[torch.Tensor]:
        """Feature pyramid [E1, E2, E3, E4] at strides 4, 8, 16, 32."""
        self._check_input(image)
        feats, x = [], image
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats

    def decode(self, pyramid, out_size):
        """Returns (seg_logits (B,1,H,W), D4)."""
        e1, e2, e3, e4 = pyramid
        h, w = e4.shape[-2:]
        pooled = [e4]
        for bins, branch in zip(self.config.ppm_bins, self.ppm):
            p = F.adaptive_avg_pool2d(e4, (min(bins, h), min(bins, w)))
            pooled.append(resize_bilinear(branch(p), (h, w)))
        d4 = self.ppm_bottleneck(torch.cat(pooled, dim=1))

        ds = [None, None, None, d4]
        top = d4
        for i in (2, 1, 0):
            lat = self.lateral[i](pyramid[i])
            top = lat + resize_bilinear(top, lat.shape[-2:])
            ds[i] = self.fpn_out[i](top)

        # concat of upsampled D_j followed by the 1x1 fusion conv; projected
        # per level before upsampling (linear ops commute, result identical)
        weight = self.fuse.weight.view(4, -1)
        logits = self.fuse.bias.view(1, 1, 1, 1)
        for j, dj in enumerate(ds):
            proj = torch.einsum("bchw,c->bhw", dj, weight[j]).unsqueeze(1)
            logits = logits + resize_bilinear(proj, out_size)
        return logits, d4

    def decode_reference(self, pyramid, out_size):
        """Literal concat-then-fuse route, kept to cross-check ``decode``."""
        e1, e2, e3, e4 = pyramid
        h, w = e4.shape[-2:]
        pooled = [e4] + [resize_bilinear(b(F.adaptive_avg_pool2d(e4, (min(n, h), min(n, w)))), (h, w))
                         for n, b in zip(self.config.ppm_bins, self.ppm)]
        d4 = self.ppm_bottleneck(torch.cat(pooled, dim=1))
        ds, top = [None, None, None, d4], d4
        for i in (2, 1, 0):
            lat = self.lateral[i](pyramid[i])
            top = lat + F.interpolate(top, size=lat.shape[-2:], mode="bilinear", align_corners=False)
            ds[i] = self.fpn_out[i](top)
        up = [F.interpolate(dj, size=tuple(out_size), mode="bilinear", align_corners=False) for dj in ds]
        return self.fuse(torch.cat(up, dim=1)), d4

    def eam(self, e2, e4, out_size):
        low = self.eam_low(e2)
        high = resize_bilinear(self.eam_high(e4), low.shape[-2:])
        fused = self.eam_fuse(torch.cat([low, high], dim=1))
        return resize_bilinear(torch.sigmoid(_pointwise(fused, self.eam_out)), out_size)

    def classify_logits(self, e4):
        return self.cls_head(e4.mean(dim=(2, 3))).squeeze(1)

    def classify(self, e4):
        return torch.sigmoid(self.classify_logits(e4))

    def forward(self, image: torch.Tensor) -> ModelOutputs:
        size = image.shape[-2:]
        pyr = self.encode(image)
        seg_logits, d4 = self.decode(pyr, size)
        cls_logits = self.classify_logits(pyr[3])
        return ModelOutputs(
            seg=torch.sigmoid(seg_logits), cls=torch.sigmoid(cls_logits),
            edge=self.eam(pyr[1], pyr[3], size), d4=d4, e4=pyr[3],
            seg_logits=seg_logits, cls_logits=cls_logits,
        )


def build(config: CueNetConfig = CueNetConfig(), seed: int = 0, dtype=torch.float32) -> CueNet:
    """Fresh model with parameters drawn from a private generator."""
    gen = torch.Generator().manual_seed(seed)
    model = CueNet(config).to(dtype)
    with torch.no_grad():
        for name, p in model.named_parameters():
            if name.endswith("bias"):
                p.zero_()
            elif p.ndim == 1:  # norm scales
                p.fill_(1.0)
            else:
                fan_in = p[0].numel()
                p.copy_(torch.randn(p.shape, generator=gen, dtype=dtype) * np.sqrt(2.0 / fan_in))
    return model


def functional_forward(model: CueNet, params: dict, image: torch.Tensor) -> ModelOutputs:
    """Evaluate ``model``'s architecture with an explicit parameter map."""
    return torch.func.functional_call(model, params, (image,))


def params_hash(model_or_params) -> str:
    params = model_or_params.state_dict() if isinstance(model_or_params, nn.Module) else model_or_params
    h = hashlib.sha256()
    for name in sorted(params):
        t = params[name].detach().cpu().contiguous()
        h.update(name.encode())
        h.update(str(tuple(t.shape)).encode())
        h.update(t.numpy().tobytes())
    return h.hexdigest()


def to_tensor(images: np.ndarray, dtype=torch.float32) -> torch.Tensor:
    """(B, H, W, 3) array -> (B, 3, H, W) tensor; uint8 is scaled to [0, 1]."""
    arr = np.asarray(images)
    if arr.ndim == 3:
        arr = arr[None]
    t = torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2)))
    return t.to(dtype) / 255.0 if arr.dtype == np.uint8 else t.to(dtype)
