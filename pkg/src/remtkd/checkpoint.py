"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"RMTK" | u16 version | u32 header length | header (UTF-8 JSON)
    | tensor payload | 32-byte SHA-256 of everything before it

The JSON header carries the architecture descriptor, free-form metadata and
the tensor directory: name, element type ("f32" or "f64"), shape, byte
offset into the payload.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"RMTK"
VERSION = 1
_PREFIX = struct.Struct("<4sHI")
_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}


class CheckpointError(Exception):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class ChecksumError(CheckpointError):
    pass


def _as_numpy(value) -> np.ndarray:
    if hasattr(value, "detach"):
        value = value.detach().cpu().numpy()
    return np.asarray(value)


def encode(tensors: dict, arch: dict | None = None, meta: dict | None = None, dtype: str = "f32") -> bytes:
    directory, chunks, offset = [], [], 0
    for name in tensors:
        arr = np.ascontiguousarray(_as_numpy(tensors[name]), dtype=_DTYPES[dtype])
        raw = arr.tobytes()
        directory.append({"name": name, "dtype": dtype, "shape": list(arr.shape), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"arch": arch or {}, "meta": meta or {}, "tensors": directory},
                        sort_keys=True).encode("utf-8")
    body = _PREFIX.pack(MAGIC, VERSION, len(header)) + header + b"".join(chunks)
    return body + hashlib.sha256(body).digest()


def decode(blob: bytes):
    """Returns (tensors: dict name -> ndarray, arch, meta)."""
    if len(blob) < _PREFIX.size + 32:
        raise CheckpointError("truncated checkpoint")
    magic, version, hlen = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    if version != VERSION:
        raise VersionError(f"unsupported checkpoint version {version}")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError("checksum mismatch")
    header = json.loads(body[_PREFIX.size:_PREFIX.size + hlen].decode("utf-8"))
    payload = memoryview(body)[_PREFIX.size + hlen:]
    tensors = {}
    for entry in header["tensors"]:
        dt = _DTYPES[entry["dtype"]]
        count = int(np.prod(entry["shape"], dtype=np.int64))
        arr = np.frombuffer(payload, dtype=dt, count=count, offset=entry["offset"])
        tensors[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return tensors, header["arch"], header["meta"]


def atomic_write(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save(path, tensors: dict, arch: dict | None = None, meta: dict | None = None, dtype: str = "f32") -> None:
    atomic_write(path, encode(tensors, arch, meta, dtype))


def load(path):
    with open(path, "rb") as fh:
        return decode(fh.read())


# --------------------------------------------------------------------------
# Model and policy helpers


def save_model(path, model, meta: dict | None = None) -> None:
    save(path, model.state_dict(), arch=model.config.to_dict(), meta=meta, dtype="f32")


def load_model(path):
    import torch

    from .cuenet import CueNet, CueNetConfig

    tensors, arch, meta = load(path)
    if not arch:
        raise CheckpointError(f"{path} holds no architecture descriptor")
    model = CueNet(CueNetConfig.from_dict(arch))
    expected = model.state_dict()
    if set(tensors) != set(expected):
        raise CheckpointError("tensor names do not match the architecture")
    state = {}
    for name, ref in expected.items():
        if tuple(tensors[name].shape) != tuple(ref.shape):
            raise CheckpointError(f"shape mismatch for {name}")
        state[name] = torch.from_numpy(tensors[name])
    model.load_state_dict(state)
    model.eval()
    return model, meta


def save_policies(path, policies: dict, meta: dict | None = None) -> None:
    tensors = {}
    for k, p in policies.items():
        tensors[f"{k}.W"] = np.asarray(p.W, dtype=np.float64)
        tensors[f"{k}.b"] = np.array([p.b], dtype=np.float64)
    save(path, tensors, arch={"kind": "policy"}, meta=meta, dtype="f64")


def load_policies(path) -> dict:
    from .redts import PolicyParams

    tensors, arch, _ = load(path)
    if arch.get("kind") != "policy":
        raise CheckpointError(f"{path} is not a policy checkpoint")
    names = sorted({n.rsplit(".", 1)[0] for n in tensors})
    return {k: PolicyParams(W=tensors[f"{k}.W"], b=float(tensors[f"{k}.b"][0])) for k in names}
