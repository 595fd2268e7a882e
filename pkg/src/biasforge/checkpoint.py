"""Checkpointing: opaque parameter blob + human-readable sidecar manifest.

The blob holds everything needed to continue training bit-exactly: module
state dicts, Adam moment accumulators with step counts, the training
torch.Generator state, and step counters. The sidecar is a key = value text
file recording provenance (model kind, seed, iteration, config hash, losses
at save time) without requiring the blob to be loaded.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import torch
from torch import nn

from .errors import DataError
from .optim import AdamState

MANIFEST_SUFFIX = ".manifest"


@dataclass
class CheckpointMeta:
    model: str
    seed: int
    iteration: int
    config_hash: str
    loss_d: float
    loss_g: float


def _manifest_path(blob_path: str | Path) -> Path:
    return Path(str(blob_path) + MANIFEST_SUFFIX)


def capture_training_state(
    modules: dict[str, nn.Module],
    adams: dict[str, AdamState],
    rng: torch.Generator,
    counters: dict[str, int],
) -> dict:
    """Snapshot of a training state as plain tensors (safe for torch.load
    with weights_only). Tensors are cloned so later training cannot mutate
    the snapshot."""
    return {
        "modules": {k: {n: t.clone() for n, t in m.state_dict().items()}
                    for k, m in modules.items()},
        "adams": {k: {"m": [t.clone() for t in a.m],
                      "v": [t.clone() for t in a.v],
                      "step": a.step}
                  for k, a in adams.items()},
        "rng": rng.get_state().clone(),
        "counters": dict(counters),
    }


def restore_training_state(
    payload: dict,
    modules: dict[str, nn.Module],
    adams: dict[str, AdamState],
    rng: torch.Generator,
) -> dict[str, int]:
    """Load a snapshot into freshly built modules/optimizer states. Returns
    the step counters recorded in the snapshot."""
    try:
        for k, m in modules.items():
            m.load_state_dict(payload["modules"][k])
        for k, a in adams.items():
            saved = payload["adams"][k]
            if len(saved["m"]) != len(a.m):
                raise DataError(f"checkpoint optimizer state for '{k}' does not "
                                f"match the model ({len(saved['m'])} vs {len(a.m)} tensors)")
            for dst, src in zip(a.m, saved["m"]):
                dst.copy_(src)
            for dst, src in zip(a.v, saved["v"]):
                dst.copy_(src)
            a.step = int(saved["step"])
        rng.set_state(payload["rng"])
        return dict(payload["counters"])
    except KeyError as e:
        raise DataError(f"checkpoint payload is missing field {e}") from e
    except RuntimeError as e:
        raise DataError(f"checkpoint does not fit the configured model: {e}") from e


def save_checkpoint(path: str | Path, payload: dict, meta: CheckpointMeta) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)
    lines = [
        f"model = {meta.model}",
        f"seed = {meta.seed}",
        f"iteration = {meta.iteration}",
        f"config_hash = {meta.config_hash}",
        f"L_D = {meta.loss_d!r}",
        f"L_G = {meta.loss_g!r}",
    ]
    _manifest_path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_checkpoint_meta(path: str | Path) -> CheckpointMeta:
    mpath = _manifest_path(path)
    if not mpath.is_file():
        raise DataError(f"checkpoint manifest not found: {mpath}")
    fields: dict[str, str] = {}
    for raw in mpath.read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"malformed checkpoint manifest line: {line!r}")
        key, _, value = line.partition("=")
        fields[key.strip()] = value.strip()
    try:
        return CheckpointMeta(
            model=fields["model"],
            seed=int(fields["seed"]),
            iteration=int(fields["iteration"]),
            config_hash=fields["config_hash"],
            loss_d=float(fields["L_D"]),
            loss_g=float(fields["L_G"]),
        )
    except (KeyError, ValueError) as e:
        raise DataError(f"incomplete checkpoint manifest {mpath}: {e}") from e


def load_checkpoint(path: str | Path) -> tuple[dict, CheckpointMeta]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"checkpoint not found: {path}")
    meta = read_checkpoint_meta(path)
    try:
        payload = torch.load(path, weights_only=True)
    except Exception as e:
        raise DataError(f"unreadable checkpoint blob {path}: {e}") from e
    return payload, meta
