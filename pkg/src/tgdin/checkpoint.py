"""Checkpoint container: one self-describing binary file per model.

Format (version 1):

    line 1: ``TGDINCKPT 1\n``
    line 2: decimal byte length of the JSON header, ``\n``
    JSON header (sorted keys): model spec, parameter layout, optimizer
        hyperparameters and step count, provenance dict
    raw little-endian float64 payload: params, then adam m, then adam v

The encoding has no timestamps or other ambient state, so identical
checkpoints serialize to identical bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Optional

import numpy as np

from .models import ModelSpec, ParamVector
from .optim import AdamState

_MAGIC = b"TGDINCKPT 1\n"


@dataclass
class ModelCheckpoint:
    spec: ModelSpec
    params: ParamVector
    adam: Optional[AdamState]
    provenance: dict

    @property
    def kind(self) -> str:
        return self.spec.kind


def _spec_to_dict(spec: ModelSpec) -> dict:
    d = asdict(spec)
    d["hidden_dims"] = list(spec.hidden_dims)
    return d


def _spec_from_dict(d: dict) -> ModelSpec:
    d = dict(d)
    d["hidden_dims"] = tuple(d["hidden_dims"])
    return ModelSpec(**d)


def save_checkpoint(ckpt: ModelCheckpoint, path: str | Path) -> None:
    layout = {name: [off, list(shape)]
              for name, (off, shape) in ckpt.params.layout.items()}
    header = {
        "spec": _spec_to_dict(ckpt.spec),
        "layout": layout,
        "n_params": int(ckpt.params.size),
        "adam": None,
        "provenance": ckpt.provenance,
    }
    if ckpt.adam is not None:
        header["adam"] = {
            "t": ckpt.adam.t, "lr": ckpt.adam.lr,
            "beta1": ckpt.adam.beta1, "beta2": ckpt.adam.beta2,
            "eps": ckpt.adam.eps, "weight_decay": ckpt.adam.weight_decay,
        }
    blob = json.dumps(header, sort_keys=True).encode()
    payload = [ckpt.params.values.astype("<f8").tobytes()]
    if ckpt.adam is not None:
        payload.append(ckpt.adam.m.astype("<f8").tobytes())
        payload.append(ckpt.adam.v.astype("<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(f"{len(blob)}\n".encode())
        fh.write(blob)
        for part in payload:
            fh.write(part)


def load_checkpoint(path: str | Path) -> ModelCheckpoint:
    raw = Path(path).read_bytes()
    if not raw.startswith(_MAGIC):
        raise ValueError(f"{path}: not a checkpoint file (bad magic)")
    rest = raw[len(_MAGIC):]
    nl = rest.index(b"\n")
    header_len = int(rest[:nl])
    header = json.loads(rest[nl + 1:nl + 1 + header_len])
    body = rest[nl + 1 + header_len:]

    spec = _spec_from_dict(header["spec"])
    layout = {name: (int(off), tuple(shape))
              for name, (off, shape) in header["layout"].items()}
    n = int(header["n_params"])
    need = n * 8 * (3 if header["adam"] is not None else 1)
    if len(body) != need:
        raise ValueError(f"{path}: payload size mismatch")
    values = np.frombuffer(body[:n * 8], dtype="<f8").astype(np.float64)
    params = ParamVector(values.copy(), layout)
    adam = None
    if header["adam"] is not None:
        h = header["adam"]
        m = np.frombuffer(body[n * 8:2 * n * 8], dtype="<f8").copy()
        v = np.frombuffer(body[2 * n * 8:], dtype="<f8").copy()
        adam = AdamState(m=m, v=v, t=int(h["t"]), lr=h["lr"],
                         beta1=h["beta1"], beta2=h["beta2"], eps=h["eps"],
                         weight_decay=h["weight_decay"])
    return ModelCheckpoint(spec=spec, params=params, adam=adam,
                           provenance=header["provenance"])
