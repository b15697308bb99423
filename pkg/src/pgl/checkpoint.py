"""Bit-exact binary checkpoints.

Layout (all integers little-endian):

    magic "PGLC" | u32 version=1 | u32 tensor count
    per tensor:  u32 name length | UTF-8 name | u32 rank | u64 dims... | f32 data
    trailer:     u32 CRC32 of every preceding byte

Tensors are written in insertion order, so save(load(save(x))) is
byte-identical.  A checkpoint carries the model parameters, batchnorm running
stats, optimizer velocities ("opt.velocity.<name>"), and the epoch counter
("meta.epoch").
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from .errors import CheckpointError

MAGIC = b"PGLC"
VERSION = 1


def write_tensors(tensors: dict, path):
    """Write an ordered {name: ndarray} mapping in the PGLC format."""
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype=np.float32)
        nb = name.encode("utf-8")
        parts.append(struct.pack("<I", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.astype("<f4").tobytes(order="C"))
    payload = b"".join(parts)
    with open(path, "wb") as f:
        f.write(payload)
        f.write(struct.pack("<I", zlib.crc32(payload)))


def read_tensors(path) -> dict:
    """Read a PGLC file back into an ordered {name: ndarray} mapping."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a PGLC checkpoint")
    payload, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(payload) != crc:
        raise CheckpointError(f"{path}: CRC mismatch, file is corrupt")
    version, count = struct.unpack_from("<II", payload, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    pos = 12
    tensors = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", payload, pos)
            pos += 4
            name = payload[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<I", payload, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}Q", payload, pos)
            pos += 8 * rank
            size = int(np.prod(dims)) if rank else 1
            data = np.frombuffer(payload, dtype="<f4", count=size, offset=pos)
            if data.size != size:
                raise struct.error("short read")
            pos += 4 * size
            tensors[name] = data.reshape(dims).copy()
    except (struct.error, ValueError):
        raise CheckpointError(f"{path}: truncated checkpoint") from None
    if pos != len(payload):
        raise CheckpointError(f"{path}: {len(payload) - pos} trailing bytes after tensors")
    return tensors


class Checkpoint:
    """Decoded checkpoint: named tensors plus the trainer bookkeeping."""

    def __init__(self, tensors: dict):
        self.tensors = tensors

    @property
    def epoch(self) -> int:
        return int(self.tensors.get("meta.epoch", np.zeros(1))[0])

    def __contains__(self, name):
        return name in self.tensors

    def __getitem__(self, name):
        return self.tensors[name]


def save_checkpoint(model, opt, epoch: int, path):
    """Serialize model params, batchnorm stats, velocities, and the epoch."""
    tensors = {}
    for name, p in model.named_params():
        tensors[name] = p.data
    for prefix, bn in model.named_bns():
        tensors[f"{prefix}.running_mean"] = bn.state.running_mean
        tensors[f"{prefix}.running_var"] = bn.state.running_var
        tensors[f"{prefix}.batches_tracked"] = np.asarray([bn.state.batches_tracked], dtype=np.float32)
    for name, v in opt.velocity.items():
        tensors[f"opt.velocity.{name}"] = v
    tensors["meta.epoch"] = np.asarray([epoch], dtype=np.float32)
    write_tensors(tensors, path)


def load_checkpoint(path) -> Checkpoint:
    return Checkpoint(read_tensors(path))


def apply_checkpoint(ckpt: Checkpoint, model, opt=None):
    """Copy checkpoint values into a freshly built model (and optimizer)."""
    for name, p in model.named_params():
        if name not in ckpt.tensors:
            raise CheckpointError(f"checkpoint is missing parameter {name}")
        arr = ckpt.tensors[name]
        if arr.shape != p.shape:
            raise CheckpointError(f"{name}: checkpoint shape {list(arr.shape)} != model {list(p.shape)}")
        p.data = arr.astype(np.float32).copy()
    for prefix, bn in model.named_bns():
        bn.state.running_mean = ckpt.tensors[f"{prefix}.running_mean"].copy()
        bn.state.running_var = ckpt.tensors[f"{prefix}.running_var"].copy()
        bn.state.batches_tracked = int(ckpt.tensors[f"{prefix}.batches_tracked"][0])
    if opt is not None:
        prefix = "opt.velocity."
        for name, arr in ckpt.tensors.items():
            if name.startswith(prefix):
                opt.velocity[name[len(prefix):]] = arr.astype(np.float32).copy()
