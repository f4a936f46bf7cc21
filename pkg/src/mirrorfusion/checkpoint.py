"""Flat little-endian binary checkpoints.

Layout: magic 'MFCK', u32 version, u64 optimizer step, u32 config length +
UTF-8 config text, u32 tensor count, then per-tensor records of
(u32 name length, name, u32 rank, u32 dims..., raw float32 values).
Optimizer moments are stored as tensors under ``optim.m.`` / ``optim.v.``
prefixes, so a load(save(x)) round trip is bitwise exact.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"MFCK"
VERSION = 1


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]     # float32 model parameters
    moments_m: dict[str, np.ndarray]
    moments_v: dict[str, np.ndarray]
    step: int
    config_text: str


def _write_tensor(fh, name: str, arr: np.ndarray) -> None:
    data = np.asarray(arr, dtype="<f4", order="C")   # keeps rank-0 arrays rank-0
    nb = name.encode("utf-8")
    fh.write(struct.pack("<I", len(nb)))
    fh.write(nb)
    fh.write(struct.pack("<I", data.ndim))
    fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
    fh.write(data.tobytes())


def _read_exact(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointError("truncated checkpoint file")
    return buf


def _read_tensor(fh) -> tuple[str, np.ndarray]:
    (name_len,) = struct.unpack("<I", _read_exact(fh, 4))
    name = _read_exact(fh, name_len).decode("utf-8")
    (rank,) = struct.unpack("<I", _read_exact(fh, 4))
    dims = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank)) if rank else ()
    count = int(np.prod(dims)) if dims else 1
    arr = np.frombuffer(_read_exact(fh, 4 * count), dtype="<f4").reshape(dims)
    return name, arr.copy()


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tensors: list[tuple[str, np.ndarray]] = list(ckpt.params.items())
    tensors += [(f"optim.m.{k}", v) for k, v in ckpt.moments_m.items()]
    tensors += [(f"optim.v.{k}", v) for k, v in ckpt.moments_v.items()]
    cfg = ckpt.config_text.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", ckpt.step))
        fh.write(struct.pack("<I", len(cfg)))
        fh.write(cfg)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors:
            _write_tensor(fh, name, arr)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    with open(path, "rb") as fh:
        if _read_exact(fh, 4) != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version} "
                                  f"(expected {VERSION})")
        (step,) = struct.unpack("<Q", _read_exact(fh, 8))
        (cfg_len,) = struct.unpack("<I", _read_exact(fh, 4))
        config_text = _read_exact(fh, cfg_len).decode("utf-8")
        (n_tensors,) = struct.unpack("<I", _read_exact(fh, 4))
        params: dict[str, np.ndarray] = {}
        mm: dict[str, np.ndarray] = {}
        mv: dict[str, np.ndarray] = {}
        for _ in range(n_tensors):
            name, arr = _read_tensor(fh)
            if name.startswith("optim.m."):
                mm[name[len("optim.m."):]] = arr
            elif name.startswith("optim.v."):
                mv[name[len("optim.v."):]] = arr
            elif name in params:
                raise CheckpointError(f"duplicate parameter '{name}' in {path}")
            else:
                params[name] = arr
    return Checkpoint(params=params, moments_m=mm, moments_v=mv, step=step,
                      config_text=config_text)
