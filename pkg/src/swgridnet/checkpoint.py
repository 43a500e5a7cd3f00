"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"SWGD"  u32 version
    32 bytes  sha256 digest of the network config text
    u32 n     config text (utf-8, n bytes)
    u32 count
    count x { u16 name_len, name (utf-8), u8 ndim, ndim x u32 extent,
              prod(extent) x float32 }

Entries are every parameter followed by every BN running statistic, in the
network's fixed walk order.
"""

from __future__ import annotations

import hashlib
import io
import os
import struct
from pathlib import Path

import numpy as np

from .config import load_fields
from .errors import CheckpointError
from .model import NetworkConfig, SwGridNetwork

MAGIC = b"SWGD"
VERSION = 1


def _entries(net: SwGridNetwork):
    for name, t in net.named_parameters():
        yield name, t.data
    yield from net.named_buffers()


def save_checkpoint(net: SwGridNetwork, path):
    text = net.config.to_text().encode()
    buf = io.BytesIO()
    buf.write(MAGIC + struct.pack("<I", VERSION))
    buf.write(hashlib.sha256(text).digest())
    buf.write(struct.pack("<I", len(text)) + text)
    entries = list(_entries(net))
    buf.write(struct.pack("<I", len(entries)))
    for name, arr in entries:
        raw = name.encode()
        buf.write(struct.pack("<H", len(raw)) + raw)
        buf.write(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(buf.getvalue())
    os.replace(tmp, path)
    return len(entries)


class _Reader:
    def __init__(self, raw, path):
        self.raw, self.pos, self.path = raw, 0, path

    def take(self, n):
        if self.pos + n > len(self.raw):
            raise CheckpointError(f"{self.path}: truncated at byte offset {self.pos}")
        chunk = self.raw[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_checkpoint(path):
    """(NetworkConfig, {name: float32 array}) after magic, version and digest checks."""
    r = _Reader(Path(path).read_bytes(), path)
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    digest = r.take(32)
    (n,) = r.unpack("<I")
    text = r.take(n)
    if hashlib.sha256(text).digest() != digest:
        raise CheckpointError(f"{path}: config digest mismatch")
    config = load_fields(NetworkConfig, text.decode())
    (count,) = r.unpack("<I")
    entries = {}
    for _ in range(count):
        (ln,) = r.unpack("<H")
        name = r.take(ln).decode()
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        size = int(np.prod(shape, dtype=np.int64))
        entries[name] = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(shape).astype(np.float32)
    if r.pos != len(r.raw):
        raise CheckpointError(f"{path}: {len(r.raw) - r.pos} trailing bytes")
    return config, entries


def load_checkpoint(path, expected_config: NetworkConfig | None = None) -> SwGridNetwork:
    config, entries = read_checkpoint(path)
    if expected_config is not None and expected_config.digest() != config.digest():
        raise CheckpointError(f"{path}: checkpoint was saved for a different network config")
    net = SwGridNetwork.create(config, np.float32)
    params = dict(net.named_parameters())
    buffers = dict(net.named_buffers())
    expected = set(params) | set(buffers)
    if set(entries) != expected:
        diff = sorted(set(entries) ^ expected)
        raise CheckpointError(f"{path}: entry names do not match the model ({diff[:3]}...)")
    for name, arr in entries.items():
        target = params[name].data if name in params else buffers[name]
        if target.shape != arr.shape:
            raise CheckpointError(f"{path}: {name} has shape {arr.shape}, model expects {target.shape}")
        target[...] = arr
    return net
