"""SCKP1 checkpoint files.

Layout (little-endian)::

    b"SCKP1\\0"
    u32 metadata length, metadata bytes (UTF-8 JSON, sorted keys)
    u32 tensor count
    per tensor: u32 name length, name bytes, u32 rank, u32 dims[rank], f32 data

Model tensors use their ``state_dict`` names; optimizer moments are stored
as ``optim.exp_avg.<param>`` / ``optim.exp_avg_sq.<param>``.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..model import DMAE, ModelConfig

MAGIC = b"SCKP1\0"
FORMAT_VERSION = 1
_U32 = struct.Struct("<I")


class CheckpointFormatError(ValueError):
    pass


@dataclass
class Checkpoint:
    meta: dict
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def model_config(self) -> ModelConfig:
        return ModelConfig(**self.meta["model"])

    def model_tensors(self) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.tensors.items() if not k.startswith("optim.")}

    def optimizer_tensors(self) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.tensors.items() if k.startswith("optim.")}


def dumps_checkpoint(ckpt: Checkpoint) -> bytes:
    meta = dict(ckpt.meta, format=FORMAT_VERSION)
    blob = json.dumps(meta, sort_keys=True).encode()
    parts = [MAGIC, _U32.pack(len(blob)), blob, _U32.pack(len(ckpt.tensors))]
    for name, arr in ckpt.tensors.items():
        arr = np.require(arr, dtype="<f4", requirements="C")  # keeps rank 0
        raw = name.encode()
        parts += [_U32.pack(len(raw)), raw, _U32.pack(arr.ndim)]
        parts += [_U32.pack(d) for d in arr.shape]
        parts.append(arr.tobytes())
    return b"".join(parts)


def loads_checkpoint(buf: bytes) -> Checkpoint:
    if buf[:len(MAGIC)] != MAGIC:
        raise CheckpointFormatError("bad magic, expected SCKP1")
    off = len(MAGIC)

    def u32():
        nonlocal off
        if off + 4 > len(buf):
            raise CheckpointFormatError(f"truncated file at byte {off}")
        (v,) = _U32.unpack_from(buf, off)
        off += 4
        return v

    def take(nbytes):
        nonlocal off
        if off + nbytes > len(buf):
            raise CheckpointFormatError(f"truncated file at byte {off}")
        out = buf[off:off + nbytes]
        off += nbytes
        return out

    meta = json.loads(take(u32()).decode())
    if meta.get("format") != FORMAT_VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint format {meta.get('format')!r}")
    tensors = {}
    for _ in range(u32()):
        name = take(u32()).decode()
        shape = tuple(u32() for _ in range(u32()))
        count = int(np.prod(shape, dtype=np.int64))
        tensors[name] = np.frombuffer(take(4 * count), dtype="<f4").reshape(shape).astype(np.float32)
    if off != len(buf):
        raise CheckpointFormatError(f"{len(buf) - off} trailing bytes")
    return Checkpoint(meta, tensors)


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(dumps_checkpoint(ckpt))
    tmp.replace(path)
    return path


def load_checkpoint(path) -> Checkpoint:
    return loads_checkpoint(Path(path).read_bytes())


def model_state(model: DMAE, skip_decoder: bool = False) -> dict[str, np.ndarray]:
    out = {}
    for k, v in model.state_dict().items():
        if not v.is_floating_point():
            continue  # e.g. batch-norm step counters
        if skip_decoder and k.startswith(("dec_", "mask_token")):
            continue
        out[k] = v.detach().cpu().numpy().astype(np.float32)
    return out


def optimizer_state(opt: torch.optim.Optimizer, model: DMAE) -> tuple[dict[str, np.ndarray], int]:
    names = {id(p): k for k, p in model.named_parameters()}
    tensors, step = {}, 0
    for p, st in opt.state.items():
        if not st:
            continue
        name = names[id(p)]
        tensors[f"optim.exp_avg.{name}"] = st["exp_avg"].numpy().astype(np.float32)
        tensors[f"optim.exp_avg_sq.{name}"] = st["exp_avg_sq"].numpy().astype(np.float32)
        step = int(st["step"])
    return tensors, step


def restore_optimizer(opt: torch.optim.Optimizer, model: DMAE, ckpt: Checkpoint):
    saved = ckpt.optimizer_tensors()
    step = ckpt.meta.get("optim_step", 0)
    for name, p in model.named_parameters():
        key = f"optim.exp_avg.{name}"
        if key not in saved:
            continue
        opt.state[p] = {
            "step": torch.tensor(float(step)),
            "exp_avg": torch.from_numpy(saved[key].copy()),
            "exp_avg_sq": torch.from_numpy(saved[f"optim.exp_avg_sq.{name}"].copy()),
        }


def load_model_weights(model: DMAE, tensors: dict[str, np.ndarray], allow_missing=("dec_", "mask_token", "head")):
    """Copy matching tensors into ``model``; missing prefixes in ``allow_missing`` keep their init."""
    state = model.state_dict()
    for k, v in tensors.items():
        if k not in state:
            continue  # e.g. a probe's batch-norm stats when loading into a plain model
        if tuple(state[k].shape) != v.shape:
            raise CheckpointFormatError(f"tensor {k}: checkpoint shape {v.shape} != model {tuple(state[k].shape)}")
        state[k].copy_(torch.from_numpy(v.copy()))
    missing = [k for k, v in state.items() if k not in tensors and v.is_floating_point()
               and not k.startswith(tuple(allow_missing))]
    if missing:
        raise CheckpointFormatError(f"checkpoint lacks tensors: {missing[:5]}")


def build_model(ckpt: Checkpoint, **overrides) -> DMAE:
    cfg = ModelConfig(**dict(ckpt.meta["model"], **overrides))
    model = DMAE(cfg, seed=ckpt.meta.get("seed", 0))
    load_model_weights(model, ckpt.model_tensors(), allow_missing=("dec_", "mask_token", "head", "cls_token"))
    return model
