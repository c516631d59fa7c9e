"""``.mbhh`` checkpoint files.

Layout (little-endian)::

    b"MBHH" | u32 version | u32 config length | config JSON (UTF-8)
    u32 tensor count
    per tensor: u32 name length | name | u8 dtype tag | u32 rank | u64 dims[rank] | raw values
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError
from .network import MambaHash, ModelConfig

MAGIC = b"MBHH"
VERSION = 1
DTYPE_TAGS = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_TAG_OF = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}


def save_checkpoint(model: MambaHash, path) -> None:
    cfg = json.dumps(model.config.to_dict(), sort_keys=True).encode()
    named = list(model.named_parameters())
    parts = [MAGIC, struct.pack("<II", VERSION, len(cfg)), cfg, struct.pack("<I", len(named))]
    for name, t in named:
        raw = name.encode()
        tag = _TAG_OF[t.data.dtype]
        parts.append(struct.pack(f"<I{len(raw)}sBI", len(raw), raw, tag, t.ndim))
        parts.append(struct.pack(f"<{t.ndim}Q", *t.shape))
        parts.append(np.ascontiguousarray(t.data, dtype=DTYPE_TAGS[tag]).tobytes())
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf = buf
        self.off = 0
        self.path = path

    def take(self, fmt: str, what: str):
        try:
            vals = struct.unpack_from(fmt, self.buf, self.off)
        except struct.error as exc:
            raise FormatError(f"{self.path}: truncated {what} at offset {self.off}") from exc
        self.off += struct.calcsize(fmt)
        return vals

    def raw(self, n: int, what: str) -> bytes:
        if self.off + n > len(self.buf):
            raise FormatError(f"{self.path}: truncated {what} at offset {self.off}")
        out = self.buf[self.off : self.off + n]
        self.off += n
        return out


def read_checkpoint(path) -> tuple[ModelConfig, dict[str, np.ndarray]]:
    """Parse a checkpoint into its config and named arrays."""
    buf = Path(path).read_bytes()
    r = _Reader(buf, path)
    magic = r.raw(4, "magic")
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r} at offset 0 (expected {MAGIC!r})")
    (version,) = r.take("<I", "version")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version} at offset 4")
    (cfg_len,) = r.take("<I", "config length")
    cfg_off = r.off
    try:
        config = ModelConfig.from_dict(json.loads(r.raw(cfg_len, "config").decode()))
    except (UnicodeDecodeError, json.JSONDecodeError, TypeError) as exc:
        raise FormatError(f"{path}: unreadable config block at offset {cfg_off}") from exc
    (count,) = r.take("<I", "tensor count")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = r.take("<I", "tensor name length")
        name = r.raw(nlen, "tensor name").decode()
        tag, rank = r.take("<BI", f"header of tensor {name!r}")
        if tag not in DTYPE_TAGS:
            raise FormatError(f"{path}: unknown dtype tag {tag} for tensor {name!r} at offset {r.off - 5}")
        dims = r.take(f"<{rank}Q", f"dims of tensor {name!r}")
        dt = DTYPE_TAGS[tag]
        data = r.raw(int(np.prod(dims, dtype=np.int64)) * dt.itemsize, f"values of tensor {name!r}")
        tensors[name] = np.frombuffer(data, dtype=dt).reshape(dims).astype(dt.newbyteorder("="))
    if r.off != len(buf):
        raise FormatError(f"{path}: {len(buf) - r.off} trailing bytes at offset {r.off}")
    return config, tensors


def load_into(model: MambaHash, path) -> MambaHash:
    """Copy checkpoint weights into ``model``; nothing is modified unless everything matches."""
    config, tensors = read_checkpoint(path)
    if config != model.config:
        raise ConfigError(f"{path}: checkpoint config {config.to_dict()} does not match model config")
    named = dict(model.named_parameters())
    if set(named) != set(tensors):
        missing = sorted(set(named) ^ set(tensors))[:5]
        raise ConfigError(f"{path}: parameter names differ from the model (e.g. {missing})")
    for name, t in named.items():
        if tensors[name].shape != t.shape:
            raise ConfigError(f"{path}: tensor {name!r} has shape {tensors[name].shape}, model expects {t.shape}")
    for name, t in named.items():
        t.data = tensors[name].astype(t.dtype, copy=True)
    return model


def load_checkpoint(path) -> MambaHash:
    """Build a model from the stored config and fill in its weights."""
    config, tensors = read_checkpoint(path)
    dtype = next(iter(tensors.values())).dtype if tensors else np.float64
    return load_into(MambaHash(config, dtype=dtype), path)
