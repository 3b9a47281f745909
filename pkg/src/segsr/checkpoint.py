"""Checkpoint archive: a zip of ``.npy`` tensors plus a JSON manifest.

Layout::

    manifest.json                  kind, configs, epoch/step, optimizer groups
    params/<dotted.name>.npy       model state_dict (parameters and buffers)
    optim/<param index>/<key>.npy  Adam state per parameter
    rng/torch.npy                  training generator state

Entries are written in sorted order with a fixed timestamp, so saving the
same state twice yields identical bytes.
"""
from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

FORMAT_VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


@dataclass
class Checkpoint:
    kind: str  # "sr" or "seg"
    model_config: dict
    params: dict[str, torch.Tensor]
    optimizer: dict | None = None
    epoch: int = 0
    step: int = 0
    train_config: dict = field(default_factory=dict)
    rng_state: torch.Tensor | None = None


def _npy_bytes(t) -> bytes:
    arr = t.detach().cpu().numpy() if isinstance(t, torch.Tensor) else np.asarray(t)
    buf = io.BytesIO()
    np.save(buf, np.ascontiguousarray(arr), allow_pickle=False)
    return buf.getvalue()


def _load_npy(data: bytes) -> torch.Tensor:
    return torch.from_numpy(np.load(io.BytesIO(data), allow_pickle=False).copy())


def to_bytes(ckpt: Checkpoint) -> bytes:
    entries: dict[str, bytes] = {}
    for name, t in ckpt.params.items():
        entries[f"params/{name}.npy"] = _npy_bytes(t)
    optim_groups = None
    if ckpt.optimizer is not None:
        for idx, state in ckpt.optimizer["state"].items():
            for key, value in state.items():
                entries[f"optim/{int(idx)}/{key}.npy"] = _npy_bytes(torch.as_tensor(value))
        optim_groups = ckpt.optimizer["param_groups"]
    if ckpt.rng_state is not None:
        entries["rng/torch.npy"] = _npy_bytes(ckpt.rng_state)
    manifest = {
        "format_version": FORMAT_VERSION,
        "kind": ckpt.kind,
        "model_config": ckpt.model_config,
        "train_config": ckpt.train_config,
        "epoch": ckpt.epoch,
        "step": ckpt.step,
        "param_names": list(ckpt.params),
        "optimizer_param_groups": optim_groups,
    }
    entries["manifest.json"] = json.dumps(manifest, indent=2, sort_keys=True).encode()

    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(entries):
            info = zipfile.ZipInfo(name, date_time=_EPOCH)
            info.external_attr = 0o644 << 16
            zf.writestr(info, entries[name])
    return buf.getvalue()


def from_bytes(data: bytes) -> Checkpoint:
    with zipfile.ZipFile(io.BytesIO(data)) as zf:
        manifest = json.loads(zf.read("manifest.json"))
        if manifest.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint format {manifest.get('format_version')}")
        names = set(zf.namelist())
        params = {n: _load_npy(zf.read(f"params/{n}.npy")) for n in manifest["param_names"]}
        optimizer = None
        if manifest["optimizer_param_groups"] is not None:
            state: dict[int, dict] = {}
            for entry in sorted(names):
                if entry.startswith("optim/"):
                    _, idx, fname = entry.split("/")
                    state.setdefault(int(idx), {})[fname[: -len(".npy")]] = _load_npy(zf.read(entry))
            optimizer = {"state": state, "param_groups": manifest["optimizer_param_groups"]}
        rng = _load_npy(zf.read("rng/torch.npy")) if "rng/torch.npy" in names else None
    return Checkpoint(
        kind=manifest["kind"],
        model_config=manifest["model_config"],
        params=params,
        optimizer=optimizer,
        epoch=manifest["epoch"],
        step=manifest["step"],
        train_config=manifest["train_config"],
        rng_state=rng,
    )


def save(ckpt: Checkpoint, path) -> None:
    Path(path).write_bytes(to_bytes(ckpt))


def load(path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())
