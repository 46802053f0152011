"""VSCW weight files: a small named-tensor binary format.

Layout (little-endian): magic b"VSCW", u32 version = 1, u32 tensor count;
then per tensor: u16 name length, UTF-8 name, u8 ndim, ndim x u32 dims,
row-major f32 values.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .model import ConfigError, ViGConfig, ViGModel

__all__ = ["FormatError", "save_weights", "load_weights", "write_tensors", "read_tensors"]

MAGIC = b"VSCW"
VERSION = 1


class FormatError(ValueError):
    """Corrupt or unsupported weight file."""


def write_tensors(tensors: dict, path) -> None:
    out = bytearray()
    out += MAGIC
    out += struct.pack("<II", VERSION, len(tensors))
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise FormatError(f"tensor name too long: {name!r}")
        out += struct.pack("<H", len(encoded))
        out += encoded
        out += struct.pack("<B", arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += arr.tobytes()
    Path(path).write_bytes(bytes(out))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError("truncated weight file")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_tensors(path) -> dict:
    r = _Reader(Path(path).read_bytes())
    if r.take(4) != MAGIC:
        raise FormatError(f"bad magic in {path}: not a VSCW file")
    version, count = r.unpack("<II")
    if version != VERSION:
        raise FormatError(f"unsupported VSCW version {version}")
    tensors = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I") if ndim else ()
        n_values = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(r.take(4 * n_values), dtype="<f4").reshape(shape)
        tensors[name] = data.copy()
    if r.pos != len(r.buf):
        raise FormatError("trailing bytes after last tensor")
    return tensors


def save_weights(model: ViGModel, path) -> None:
    write_tensors(model.weights, path)


def load_weights(config: ViGConfig, path) -> ViGModel:
    """Load and validate a VSCW file against the config's canonical name/shape map."""
    tensors = read_tensors(path)
    expected = config.weight_shapes()
    for name in tensors:
        if name not in expected:
            raise FormatError(f"unknown tensor {name!r} in weight file")
    for name in expected:
        if name not in tensors:
            raise FormatError(f"weight file is missing tensor {name!r}")
        if tuple(tensors[name].shape) != tuple(expected[name]):
            raise FormatError(
                f"tensor {name!r} has shape {tuple(tensors[name].shape)}, expected {tuple(expected[name])}")
    model = ViGModel(config=config, weights=tensors)
    model.validate()
    return model
