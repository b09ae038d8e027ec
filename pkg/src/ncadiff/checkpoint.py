"""Bit-exact binary checkpoints.

Layout:

    bytes 0..8    magic b"NCADIFF1"
    bytes 8..16   uint64 little-endian header length n
    bytes 16..16+n  JSON header {"format_version": 1, "manifest": [...],
                                 "metadata": {...}}
    rest          payload: contiguous little-endian float32 data

Each manifest entry is {"name", "shape", "dtype": "f32", "byte_offset"} with
offsets relative to the payload start, non-overlapping and densely packed.
Tensor names use the prefixes ``model.``, ``ema.`` and ``opt.`` (Adam first
and second moments per parameter). Metadata carries the resolved run config,
the completed-step counter, the master seed and the Adam step count, which
together are all the state needed to resume training step-for-step
identically: per-step randomness is derived from (seed, step), never from a
mutable generator. Writes go through a temp file + rename so a crash never
leaves a half-written checkpoint behind.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .errors import (
    CheckpointManifestError,
    CheckpointTruncatedError,
    CheckpointVersionError,
)

MAGIC = b"NCADIFF1"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    tensors: dict[str, torch.Tensor]
    metadata: dict

    def select(self, prefix: str) -> dict[str, torch.Tensor]:
        plen = len(prefix)
        return {k[plen:]: v for k, v in self.tensors.items() if k.startswith(prefix)}


def _tensor_bytes(t: torch.Tensor) -> bytes:
    arr = t.detach().cpu().contiguous().to(torch.float32).numpy()
    return arr.astype("<f4", copy=False).tobytes()


def collect_training_tensors(model, optimizer=None, ema=None) -> dict[str, torch.Tensor]:
    tensors: dict[str, torch.Tensor] = {}
    for name, p in model.named_parameters():
        tensors[f"model.{name}"] = p
    if ema is not None:
        for name, shadow in ema.shadow.items():
            tensors[f"ema.{name}"] = shadow
    if optimizer is not None:
        for name, p in model.named_parameters():
            state = optimizer.state.get(p)
            if state:
                tensors[f"opt.{name}.exp_avg"] = state["exp_avg"]
                tensors[f"opt.{name}.exp_avg_sq"] = state["exp_avg_sq"]
    return tensors


def adam_step_count(optimizer) -> float | None:
    for state in optimizer.state.values():
        if "step" in state:
            step = state["step"]
            return float(step) if not isinstance(step, torch.Tensor) else float(step.item())
    return None


def save_checkpoint(
    path: str | Path,
    *,
    model,
    optimizer=None,
    ema=None,
    step: int = 0,
    config: dict | None = None,
    seed: int | None = None,
    extra_metadata: dict | None = None,
) -> Path:
    path = Path(path)
    tensors = collect_training_tensors(model, optimizer, ema)
    manifest = []
    offset = 0
    for name, t in tensors.items():
        manifest.append(
            {"name": name, "shape": list(t.shape), "dtype": "f32", "byte_offset": offset}
        )
        offset += t.numel() * 4
    metadata = {
        "step": step,
        "seed": seed,
        "config": config,
        "adam_step": None if optimizer is None else adam_step_count(optimizer),
    }
    if extra_metadata:
        metadata.update(extra_metadata)
    header = json.dumps(
        {"format_version": FORMAT_VERSION, "manifest": manifest, "metadata": metadata}
    ).encode("utf-8")

    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for t in tensors.values():
            f.write(_tensor_bytes(t))
    os.replace(tmp, path)
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < len(MAGIC) + 8 or blob[: len(MAGIC)] != MAGIC:
        raise CheckpointVersionError(f"{path}: missing {MAGIC!r} magic header")
    (header_len,) = struct.unpack_from("<Q", blob, len(MAGIC))
    header_end = len(MAGIC) + 8 + header_len
    if len(blob) < header_end:
        raise CheckpointTruncatedError(f"{path}: header truncated")
    try:
        header = json.loads(blob[len(MAGIC) + 8 : header_end].decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointManifestError(f"{path}: manifest is not valid JSON: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{path}: format version {header.get('format_version')!r}, "
            f"expected {FORMAT_VERSION}"
        )
    manifest = header.get("manifest")
    if not isinstance(manifest, list):
        raise CheckpointManifestError(f"{path}: manifest missing or not a list")

    payload = blob[header_end:]
    expected = 0
    entries = []
    for entry in manifest:
        try:
            name = entry["name"]
            shape = tuple(int(s) for s in entry["shape"])
            offset = int(entry["byte_offset"])
            dtype = entry["dtype"]
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointManifestError(f"{path}: malformed manifest entry {entry!r}") from exc
        if dtype != "f32":
            raise CheckpointManifestError(f"{path}: unsupported dtype {dtype!r} for {name}")
        if offset != expected:
            raise CheckpointManifestError(
                f"{path}: manifest offsets overlap or leave gaps at {name}"
            )
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        expected += count * 4
        entries.append((name, shape, offset, count))
    if len(payload) < expected:
        raise CheckpointTruncatedError(
            f"{path}: payload has {len(payload)} bytes, manifest promises {expected}"
        )
    if len(payload) > expected:
        raise CheckpointManifestError(
            f"{path}: payload has {len(payload) - expected} bytes beyond the manifest"
        )

    tensors = {}
    for name, shape, offset, count in entries:
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=offset).reshape(shape)
        tensors[name] = torch.from_numpy(arr.copy())
    return Checkpoint(tensors=tensors, metadata=header.get("metadata", {}))


def load_model_weights(model, checkpoint: Checkpoint, *, prefix: str = "model.") -> None:
    weights = checkpoint.select(prefix)
    with torch.no_grad():
        for name, p in model.named_parameters():
            if name not in weights:
                raise CheckpointManifestError(f"checkpoint missing tensor {prefix}{name}")
            if tuple(weights[name].shape) != tuple(p.shape):
                raise CheckpointManifestError(
                    f"checkpoint tensor {prefix}{name} has shape "
                    f"{tuple(weights[name].shape)}, model expects {tuple(p.shape)}"
                )
            p.copy_(weights[name])


def restore_trainer(trainer, checkpoint: Checkpoint) -> None:
    """Put a Trainer back into the exact state recorded in the checkpoint."""
    load_model_weights(trainer.model, checkpoint)
    ema_tensors = checkpoint.select("ema.")
    for name, shadow in trainer.ema.shadow.items():
        if name in ema_tensors:
            shadow.copy_(ema_tensors[name])
    adam_step = checkpoint.metadata.get("adam_step")
    exp_avg = checkpoint.select("opt.")
    if adam_step is not None and exp_avg:
        for name, p in trainer.model.named_parameters():
            trainer.optimizer.state[p] = {
                "step": torch.tensor(float(adam_step)),
                "exp_avg": exp_avg[f"{name}.exp_avg"].clone(),
                "exp_avg_sq": exp_avg[f"{name}.exp_avg_sq"].clone(),
            }
    trainer.step = int(checkpoint.metadata.get("step", 0))


def file_sha256(path: str | Path) -> str:
    digest = hashlib.sha256()
    digest.update(Path(path).read_bytes())
    return digest.hexdigest()
