"""WDSM model checkpoint container.

Layout (little-endian)::

    b"WDSM" | u32 version
    u32 n_bytes | UTF-8 hyperparameter block of ``key=value`` lines
    u32 n_tensors
    per tensor: u16 name length | UTF-8 name | u64 rows | u64 cols | f64 data
"""
from __future__ import annotations

import io
import struct

import numpy as np

from .gcn import ModelParams

CHECKPOINT_MAGIC = b"WDSM"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def checkpoint_bytes(params: ModelParams, hyper: dict | None = None) -> bytes:
    meta = {"layers": params.layers, "latent": params.latent}
    meta.update(hyper or {})
    text = "".join(f"{k}={v}\n" for k, v in meta.items()).encode("utf-8")
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<II", CHECKPOINT_VERSION, len(text)))
    buf.write(text)
    buf.write(struct.pack("<I", len(params.tensors)))
    for name, arr in params.tensors.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(np.atleast_2d(arr), dtype="<f8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<QQ", *arr.shape))
        buf.write(arr.tobytes())
    return buf.getvalue()


def checkpoint_from_bytes(data: bytes):
    """Returns ``(params, hyper)`` where ``hyper`` maps keys to strings."""
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(data):
            raise CheckpointError(f"checkpoint truncated while reading {what}")
        out = data[pos : pos + n]
        pos += n
        return out

    if take(4, "magic") != CHECKPOINT_MAGIC:
        raise CheckpointError("not a model checkpoint")
    version, n_text = struct.unpack("<II", take(8, "header"))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    hyper = {}
    for line in take(n_text, "hyperparameters").decode("utf-8").splitlines():
        key, _, value = line.partition("=")
        hyper[key] = value
    (n_tensors,) = struct.unpack("<I", take(4, "tensor count"))
    tensors = {}
    for _ in range(n_tensors):
        (n_name,) = struct.unpack("<H", take(2, "name length"))
        name = take(n_name, "name").decode("utf-8")
        rows, cols = struct.unpack("<QQ", take(16, f"{name} dims"))
        tensors[name] = np.frombuffer(take(8 * rows * cols, name), dtype="<f8").astype(np.float64).reshape(rows, cols)
    if pos != len(data):
        raise CheckpointError(f"{len(data) - pos} trailing bytes after checkpoint")
    try:
        params = ModelParams(int(hyper["layers"]), int(hyper["latent"]), tensors)
        params.check()
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"inconsistent checkpoint: {exc}") from None
    return params, hyper


def save_checkpoint(path, params: ModelParams, hyper: dict | None = None):
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(params, hyper))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return checkpoint_from_bytes(fh.read())
