"""Versioned binary checkpoint format.

Layout (all integers little-endian)::

    b"MHGN" | u32 version | u64 checksum | payload

    payload = u64 config_len | config (UTF-8 JSON, sorted keys)
            | u32 n_tensors
            | n_tensors x ( u32 name_len | name | u32 rank | rank x u64 dim | f32 data )

The checksum is the 8-byte BLAKE2b digest of the payload. Tensors are
written in sorted name order, so equal checkpoints serialize to equal bytes.
The config JSON carries a manifest of tensor names and shapes that is
checked against the table on load.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"MHGN"
VERSION = 1
PREFIXES = ("param/", "reservoir/", "adam_m/", "adam_v/")


class CheckpointError(ValueError):
    pass


class ChecksumError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class MissingTensorError(CheckpointError):
    def __init__(self, name: str, detail: str = "missing"):
        super().__init__(f"tensor {name!r}: {detail}")
        self.name = name


def to_f32(a) -> np.ndarray:
    """Round to float32 precision, returned as float64."""
    return np.asarray(a, dtype=np.float64).astype(np.float32).astype(np.float64)


@dataclass
class Checkpoint:
    config: dict
    params: dict[str, np.ndarray]
    reservoir: dict[str, np.ndarray] = field(default_factory=dict)
    adam_m: dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    best_val_loss: float = float("inf")
    epoch: int = 0
    version: int = VERSION

    def tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for prefix, group in zip(PREFIXES, (self.params, self.reservoir, self.adam_m, self.adam_v)):
            for k, v in group.items():
                out[prefix + k] = np.asarray(v)
        return out


def checkpoint_bytes(ck: Checkpoint) -> bytes:
    tensors = ck.tensors()
    names = sorted(tensors)
    header = {
        "config": ck.config,
        "step": int(ck.step),
        "best_val_loss": float(ck.best_val_loss),
        "epoch": int(ck.epoch),
        "manifest": {n: list(tensors[n].shape) for n in names},
    }
    cfg = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [struct.pack("<Q", len(cfg)), cfg, struct.pack("<I", len(names))]
    for n in names:
        a = np.asarray(tensors[n], dtype="<f4")
        nb = n.encode("utf-8")
        parts.append(struct.pack("<I", len(nb)) + nb + struct.pack("<I", a.ndim))
        parts.append(struct.pack(f"<{a.ndim}Q", *a.shape) if a.ndim else b"")
        parts.append(a.tobytes(order="C"))
    payload = b"".join(parts)
    digest = hashlib.blake2b(payload, digest_size=8).digest()
    return MAGIC + struct.pack("<I", ck.version) + digest + payload


def save_checkpoint(ck: Checkpoint, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(ck))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("unexpected end of checkpoint data")
        b = self.buf[self.pos:self.pos + n]
        self.pos += n
        return b

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def parse_checkpoint(data: bytes) -> Checkpoint:
    if len(data) < 16 or data[:4] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version = struct.unpack("<I", data[4:8])[0]
    if version != VERSION:
        raise VersionError(f"unsupported checkpoint version {version} (expected {VERSION})")
    payload = data[16:]
    if hashlib.blake2b(payload, digest_size=8).digest() != data[8:16]:
        raise ChecksumError("checksum mismatch: file is truncated or corrupted")
    r = _Reader(payload)
    (n_cfg,) = r.unpack("<Q")
    header = json.loads(r.take(n_cfg).decode("utf-8"))
    (count,) = r.unpack("<I")
    table = {}
    for _ in range(count):
        (nlen,) = r.unpack("<I")
        name = r.take(nlen).decode("utf-8")
        (rank,) = r.unpack("<I")
        dims = r.unpack(f"<{rank}Q") if rank else ()
        size = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(dims)
        table[name] = arr.astype(np.float32)
    manifest = header.get("manifest", {})
    for name, shape in manifest.items():
        if name not in table:
            raise MissingTensorError(name, "listed in manifest but absent from tensor table")
        if list(table[name].shape) != list(shape):
            raise MissingTensorError(name, f"shape {list(table[name].shape)} != manifest {shape}")
    for name in table:
        if name not in manifest:
            raise MissingTensorError(name, "present in tensor table but not in manifest")
    groups = [{}, {}, {}, {}]
    for name, arr in table.items():
        for g, prefix in zip(groups, PREFIXES):
            if name.startswith(prefix):
                g[name[len(prefix):]] = arr
                break
        else:
            raise CheckpointError(f"tensor {name!r} has an unknown prefix")
    return Checkpoint(header["config"], groups[0], groups[1], groups[2], groups[3],
                      header["step"], header["best_val_loss"], header["epoch"], version)


def load_checkpoint(path) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"{path}: cannot read: {e.strerror}") from e
    return parse_checkpoint(data)
