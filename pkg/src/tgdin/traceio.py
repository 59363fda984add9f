"""Trace CSV format and its sidecar metadata file.

One row per window:

    t_index,t_start_s,capacity_mbps,thr_u0_mbps,...,buf_u0_mb,...,
    delay_u0_s,...,loss_u0_frac,...[,demand_true_u0_mbps,...]

Per-user column groups expand with the user count; truth columns are
optional.  Floats are written with ``repr`` so a write/read round-trip
is bit-lossless.  The sidecar ``<trace>.meta.json`` stores the regime
spec and seed needed to regenerate the trace.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np

from .core import SimConstants, Trace, regime_from_dict, regime_to_dict

log = logging.getLogger(__name__)


class TraceFormatError(ValueError):
    pass


def _columns(n_users: int, with_truth: bool) -> list[str]:
    cols = ["t_index", "t_start_s", "capacity_mbps"]
    for group, unit in (("thr", "mbps"), ("buf", "mb"),
                        ("delay", "s"), ("loss", "frac")):
        cols += [f"{group}_u{u}_{unit}" for u in range(n_users)]
    if with_truth:
        cols += [f"demand_true_u{u}_mbps" for u in range(n_users)]
    return cols


def write_trace_csv(trace: Trace, path: str | Path, dt_s: float = 0.2) -> None:
    """Write the trace (and its meta sidecar when meta is present)."""
    path = Path(path)
    T, U = trace.throughput_mbps.shape
    cols = _columns(U, trace.has_truth)
    lines = [",".join(cols)]
    for t in range(T):
        row = [str(t), repr(t * dt_s), repr(float(trace.capacity_mbps[t]))]
        for arr in (trace.throughput_mbps, trace.buffer_mb,
                    trace.delay_s, trace.loss_frac):
            row += [repr(float(arr[t, u])) for u in range(U)]
        if trace.has_truth:
            row += [repr(float(trace.demand_true_mbps[t, u])) for u in range(U)]
        lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n")
    if trace.meta is not None:
        meta = {"seed": int(trace.seed), "regime": regime_to_dict(trace.meta)}
        Path(str(path) + ".meta.json").write_text(
            json.dumps(meta, sort_keys=True, indent=1) + "\n")


def read_trace_csv(path: str | Path, strict: bool = True) -> Trace:
    """Read a trace CSV; attaches sidecar metadata when present.

    Unknown columns are rejected in strict mode and warned about in lax
    mode; missing mandatory columns and non-finite values are always
    rejected.
    """
    path = Path(path)
    text = path.read_text()
    lines = [ln for ln in text.splitlines() if ln]
    if not lines:
        raise TraceFormatError(f"{path}: empty file")
    header = lines[0].split(",")

    n_users = sum(1 for c in header if c.startswith("thr_u"))
    if n_users == 0:
        raise TraceFormatError(f"{path}: no thr_u*_mbps columns")
    with_truth = any(c.startswith("demand_true_u") for c in header)
    expected = _columns(n_users, with_truth)
    missing = [c for c in expected if c not in header]
    if missing:
        raise TraceFormatError(f"{path}: missing mandatory column {missing[0]!r}")
    extra = [c for c in header if c not in expected]
    if extra:
        if strict:
            raise TraceFormatError(f"{path}: unknown column {extra[0]!r}")
        log.warning("%s: ignoring unknown column(s) %s", path, extra)

    idx = {c: header.index(c) for c in expected}
    T = len(lines) - 1
    capacity = np.empty(T)
    thr = np.empty((T, n_users))
    buf = np.empty((T, n_users))
    delay = np.empty((T, n_users))
    loss = np.empty((T, n_users))
    truth = np.empty((T, n_users)) if with_truth else None
    for i, line in enumerate(lines[1:]):
        parts = line.split(",")
        if len(parts) != len(header):
            raise TraceFormatError(f"{path}: row {i + 2} has {len(parts)} "
                                   f"fields, expected {len(header)}")
        try:
            capacity[i] = float(parts[idx["capacity_mbps"]])
            for u in range(n_users):
                thr[i, u] = float(parts[idx[f"thr_u{u}_mbps"]])
                buf[i, u] = float(parts[idx[f"buf_u{u}_mb"]])
                delay[i, u] = float(parts[idx[f"delay_u{u}_s"]])
                loss[i, u] = float(parts[idx[f"loss_u{u}_frac"]])
                if with_truth:
                    truth[i, u] = float(parts[idx[f"demand_true_u{u}_mbps"]])
        except ValueError as exc:
            raise TraceFormatError(f"{path}: row {i + 2}: {exc}") from exc

    for name, arr in (("capacity", capacity), ("throughput", thr),
                      ("buffer", buf), ("delay", delay), ("loss", loss)):
        if not np.all(np.isfinite(arr)):
            raise TraceFormatError(f"{path}: non-finite {name} value")
    if truth is not None and not np.all(np.isfinite(truth)):
        raise TraceFormatError(f"{path}: non-finite demand value")

    meta = None
    seed = 0
    meta_path = Path(str(path) + ".meta.json")
    if meta_path.exists():
        doc = json.loads(meta_path.read_text())
        meta = regime_from_dict(doc["regime"])
        seed = int(doc["seed"])
    return Trace(capacity_mbps=capacity, throughput_mbps=thr, buffer_mb=buf,
                 delay_s=delay, loss_frac=loss, demand_true_mbps=truth,
                 meta=meta, seed=seed)
