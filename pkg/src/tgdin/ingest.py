"""Real-trace path: packet logs to fixed windows to model-ready traces.

Packet CSVs carry ``ts_s,user_id,size_bytes`` (header mandatory,
timestamps in seconds, payload sizes as captured).  Aggregation bins
bytes into [w*dt, (w+1)*dt) windows.  Feature reconstruction fills the
queue-state columns the model expects: with egress throughput only, the
degenerate no-backlog rule applies (B = tau = loss = 0); when offered
(ingress) rates are available, the finite-buffer recursion reconstructs
buffer, delay, and loss from them.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .core import SimConstants, Trace
from .theory import buffer_advance, theory_forward


class PacketFormatError(ValueError):
    pass


PACKET_COLUMNS = ("ts_s", "user_id", "size_bytes")


def read_packet_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Parse a packet CSV; returns (ts_s, user_id, size_bytes) arrays."""
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise PacketFormatError(f"{path}: empty file (header mandatory)")
    header = tuple(lines[0].split(","))
    if header != PACKET_COLUMNS:
        raise PacketFormatError(
            f"{path}: expected header {','.join(PACKET_COLUMNS)!r}")
    ts, uid, size = [], [], []
    for i, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise PacketFormatError(f"{path}: line {i}: expected 3 fields")
        try:
            t = float(parts[0])
            u = int(parts[1])
            s = int(parts[2])
        except ValueError as exc:
            raise PacketFormatError(f"{path}: line {i}: {exc}") from exc
        if not math.isfinite(t) or t < 0:
            raise PacketFormatError(f"{path}: line {i}: bad timestamp {t}")
        if s < 0:
            raise PacketFormatError(f"{path}: line {i}: negative size")
        ts.append(t)
        uid.append(u)
        size.append(s)
    return (np.asarray(ts, dtype=np.float64), np.asarray(uid, dtype=np.int64),
            np.asarray(size, dtype=np.int64))


def aggregate_packets(ts_s: np.ndarray, user_id: np.ndarray,
                      size_bytes: np.ndarray, dt_s: float, n_users: int,
                      duration_s: float | None = None
                      ) -> tuple[np.ndarray, int]:
    """Bin packets into per-window per-user throughput (Mbps).

    Windows cover [w*dt, (w+1)*dt); empty windows are zeros.  With an
    explicit ``duration_s``, only floor(duration/dt) complete windows
    are emitted and later packets form the dropped tail; otherwise the
    series ends with the window containing the last packet.  Returns
    (throughput array (T, n_users), dropped tail bytes).
    """
    if dt_s <= 0:
        raise ValueError("dt_s must be positive")
    if n_users < 1:
        raise ValueError("n_users must be >= 1")
    ts_s = np.asarray(ts_s, dtype=np.float64)
    user_id = np.asarray(user_id, dtype=np.int64)
    size_bytes = np.asarray(size_bytes, dtype=np.int64)
    if np.any((user_id < 0) | (user_id >= n_users)):
        bad = int(user_id[(user_id < 0) | (user_id >= n_users)][0])
        raise ValueError(f"unknown user_id {bad} (expected 0..{n_users - 1})")
    if ts_s.size == 0:
        return np.zeros((0, n_users)), 0

    order = np.argsort(ts_s, kind="stable")
    ts_s, user_id, size_bytes = ts_s[order], user_id[order], size_bytes[order]
    win = np.floor(ts_s / dt_s).astype(np.int64)
    if duration_s is not None:
        T = int(math.floor(duration_s / dt_s))
        in_range = win < T
        dropped = int(size_bytes[~in_range].sum())
        win, user_id, size_bytes = win[in_range], user_id[in_range], \
            size_bytes[in_range]
    else:
        T = int(win[-1]) + 1
        dropped = 0
    bytes_per = np.zeros((T, n_users))
    if win.size:
        np.add.at(bytes_per, (win, user_id), size_bytes.astype(np.float64))
    throughput = bytes_per * 8.0 / 1e6 / dt_s
    return throughput, dropped


def reconstruct_features(throughput_mbps: np.ndarray, capacity_mbps,
                         consts: SimConstants,
                         offered_mbps: np.ndarray | None = None) -> Trace:
    """Build a full observation trace from windowed throughput.

    Egress-only input cannot witness backlog, so buffers, delays, and
    losses are zero.  When offered (ingress) rates are supplied, the
    finite-buffer recursion with arrivals = offered reconstructs the
    queue-state columns; throughput stays as observed.
    """
    thr = np.asarray(throughput_mbps, dtype=np.float64)
    if thr.ndim != 2:
        raise ValueError("throughput must be (T, U)")
    T, U = thr.shape
    if capacity_mbps is None:
        raise ValueError("capacity is required (known by construction)")
    cap = np.asarray(capacity_mbps, dtype=np.float64)
    if cap.ndim == 0:
        cap = np.full(T, float(cap))
    if cap.shape != (T,):
        raise ValueError("capacity series length mismatch")

    if offered_mbps is None:
        zeros = np.zeros((T, U))
        return Trace(capacity_mbps=cap, throughput_mbps=thr,
                     buffer_mb=zeros, delay_s=zeros.copy(),
                     loss_frac=zeros.copy())

    offered = np.asarray(offered_mbps, dtype=np.float64)
    if offered.shape != (T, U):
        raise ValueError("offered series shape mismatch")
    buf = np.empty((T, U))
    delay = np.empty((T, U))
    loss = np.empty((T, U))
    B = np.zeros(U)
    for t in range(T):
        out = theory_forward(offered[t], cap[t], B, consts.dt_s, consts)
        buf[t] = B
        delay[t] = out.delay_s
        loss[t] = out.loss_frac
        B, _ = buffer_advance(out.residual_queue_mb, consts.b_max_mb)
    return Trace(capacity_mbps=cap, throughput_mbps=thr, buffer_mb=buf,
                 delay_s=delay, loss_frac=loss)


def ingest_packet_file(path: str | Path, dt_s: float, n_users: int,
                       capacity_mbps, consts: SimConstants,
                       duration_s: float | None = None) -> Trace:
    """Packet CSV -> aggregated windows -> reconstructed trace."""
    ts, uid, size = read_packet_csv(path)
    thr, _ = aggregate_packets(ts, uid, size, dt_s, n_users, duration_s)
    return reconstruct_features(thr, capacity_mbps, consts)
