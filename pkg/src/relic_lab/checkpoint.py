"""Binary checkpoints for training state.

Layout, little-endian::

    "RLCK" | version u16 | config sha256 (32 bytes) | step u64
    | entry count u32 | entries: name_len u16, name, ndim u8, dims u32[ndim], offset u64
    | payload length u64 | payload f64[...] | rng_len u32 | rng JSON

Entry names are ``online/<net>/<param>``, ``momentum/<net>/<param>`` and
``target/<net>/<param>``; offsets count f64 elements into the payload.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError
from .nn import Parameters
from .train import TrainState

MAGIC = b"RLCK"
VERSION = 1


@dataclass
class Checkpoint:
    version: int
    config_hash: bytes
    step: int
    state: TrainState
    rng: dict


def _entries(state: TrainState):
    for net, params in state.online.items():
        for key, arr in params.arrays.items():
            yield f"online/{net}/{key}", arr
        for key, arr in params.momentum.items():
            yield f"momentum/{net}/{key}", arr
    for net, params in (state.target or {}).items():
        for key, arr in params.arrays.items():
            yield f"target/{net}/{key}", arr


def encode_checkpoint(state: TrainState, config_hash: bytes, rng: dict) -> bytes:
    if len(config_hash) != 32:
        raise ValueError("config hash must be 32 bytes")
    head = [MAGIC, struct.pack("<H", VERSION), config_hash, struct.pack("<Q", state.step)]
    entries = list(_entries(state))
    directory = [struct.pack("<I", len(entries))]
    payload = []
    offset = 0
    for name, arr in entries:
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode()
        directory.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        directory.append(struct.pack(f"<{arr.ndim}I", *arr.shape) + struct.pack("<Q", offset))
        payload.append(arr.reshape(-1).tobytes())
        offset += arr.size
    rng_blob = json.dumps(rng, sort_keys=True).encode()
    tail = [struct.pack("<Q", offset), *payload, struct.pack("<I", len(rng_blob)), rng_blob]
    return b"".join(head + directory + tail)


def save_checkpoint(path, state: TrainState, config_hash: bytes, rng: dict) -> None:
    """Write atomically: the file appears complete or not at all."""
    blob = encode_checkpoint(state, config_hash, rng)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.blob):
            raise FormatError(f"truncated checkpoint while reading {what}", self.pos)
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size, what))


def decode_checkpoint(blob: bytes) -> Checkpoint:
    r = _Reader(blob)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    (version,) = r.unpack("<H", "version")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}, expected {VERSION}", 4)
    config_hash = r.take(32, "config hash")
    (step,) = r.unpack("<Q", "step")
    (count,) = r.unpack("<I", "entry count")
    directory = []
    for _ in range(count):
        (name_len,) = r.unpack("<H", "entry name length")
        try:
            name = r.take(name_len, "entry name").decode()
        except UnicodeDecodeError:
            raise FormatError("entry name is not UTF-8", r.pos - name_len) from None
        (ndim,) = r.unpack("<B", "entry rank")
        shape = r.unpack(f"<{ndim}I", "entry shape")
        (offset,) = r.unpack("<Q", "entry offset")
        directory.append((name, shape, offset))
    (total,) = r.unpack("<Q", "payload length")
    start = r.pos
    payload = np.frombuffer(r.take(8 * total, "payload"), dtype="<f8")
    (rng_len,) = r.unpack("<I", "rng length")
    rng_raw = r.take(rng_len, "rng state")
    if r.pos != len(blob):
        raise FormatError("trailing bytes after checkpoint", r.pos)
    try:
        rng = json.loads(rng_raw)
    except (json.JSONDecodeError, UnicodeDecodeError):
        raise FormatError("rng state is not valid JSON", r.pos - rng_len) from None

    online, momentum, target = {}, {}, {}
    for name, shape, offset in directory:
        size = int(np.prod(shape, dtype=np.int64))
        if offset + size > total:
            raise FormatError(f"entry {name} overruns the payload", start + 8 * offset)
        arr = payload[offset : offset + size].astype(np.float64).reshape(shape)
        parts = name.split("/")
        if len(parts) != 3 or parts[0] not in ("online", "momentum", "target"):
            raise FormatError(f"unrecognized entry name {name!r}")
        group = {"online": online, "momentum": momentum, "target": target}[parts[0]]
        group.setdefault(parts[1], {})[parts[2]] = arr
    nets = {}
    for net, arrays in online.items():
        nets[net] = Parameters(arrays, step, None, momentum.get(net, {}))
    tgt = {net: Parameters(arrays, step) for net, arrays in target.items()} or None
    return Checkpoint(version, config_hash, step, TrainState(nets, tgt, step), rng)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())
