"""Versioned checkpoint archives keyed to a training-config hash."""
from __future__ import annotations

import hashlib
import io
from pathlib import Path

import torch

from ..errors import StateError

FORMAT_VERSION = 1


def param_hash(state_dict: dict) -> str:
    """SHA-256 over sorted parameter names, dtypes, shapes and raw bytes."""
    h = hashlib.sha256()
    for key in sorted(state_dict):
        t = state_dict[key].detach().cpu().contiguous()
        h.update(key.encode())
        h.update(str(t.dtype).encode())
        h.update(str(tuple(t.shape)).encode())
        h.update(t.numpy().tobytes())
    return h.hexdigest()


def checkpoint_path(run_dir, stage: str, variant: str = "none") -> Path:
    """Each ablation variant keeps its own checkpoint set."""
    return Path(run_dir) / "checkpoints" / variant / f"{stage}.pt"


def save_checkpoint(path, *, stage: str, config_hash: str, state_dict: dict, optimizer_state=None,
                    epoch: int = 0, history=None, upstream: dict | None = None) -> str:
    state = {k: v.detach().cpu().clone() for k, v in state_dict.items()}
    digest = param_hash(state)
    archive = {
        "format_version": FORMAT_VERSION,
        "stage": stage,
        "config_hash": config_hash,
        "param_hash": digest,
        "state_dict": state,
        "optimizer": optimizer_state,
        "epoch": epoch,
        "rng_state": torch.get_rng_state(),
        "history": history or [],
        "upstream": dict(upstream or {}),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.BytesIO()
    torch.save(archive, buf)
    path.write_bytes(buf.getvalue())
    return digest


def load_checkpoint(path, config_hash: str, stage: str | None = None) -> dict:
    path = Path(path)
    if not path.is_file():
        raise StateError(f"checkpoint {path} not found; run `train` first")
    archive = torch.load(path, map_location="cpu", weights_only=False)
    if archive.get("format_version") != FORMAT_VERSION:
        raise StateError(f"{path}: unsupported checkpoint format {archive.get('format_version')}")
    if stage is not None and archive.get("stage") != stage:
        raise StateError(f"{path}: holds stage {archive.get('stage')!r}, expected {stage!r}")
    if archive["config_hash"] != config_hash:
        raise StateError(f"{path}: trained under config {archive['config_hash']}, current config is {config_hash}")
    if param_hash(archive["state_dict"]) != archive["param_hash"]:
        raise StateError(f"{path}: parameter hash mismatch (corrupted archive)")
    return archive
