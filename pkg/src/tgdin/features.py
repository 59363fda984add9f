"""Windowed feature construction and batch assembly.

Feature layout (version 1): for each of the K most recent windows,
oldest first,

    [log1p(thr_u0..u{U-1}), log1p(buf_u0..), delay_u0.., loss_u0..,
     log1p(capacity)]

giving K*(4U+1) values.  Rates, volumes and capacity are log1p
normalized; delay and loss enter raw.  The window at index t is the
last block, so features for sample t depend only on windows
t-K+1 .. t.
"""

from __future__ import annotations

import numpy as np

from .core import Trace
from .rng import RngStream

FEATURE_VERSION = 1


def feature_dim(k: int, n_users: int) -> int:
    return k * (4 * n_users + 1)


def window_features(trace: Trace) -> np.ndarray:
    """Per-window feature matrix (T, 4U+1)."""
    return np.concatenate([
        np.log1p(trace.throughput_mbps),
        np.log1p(trace.buffer_mb),
        trace.delay_s,
        trace.loss_frac,
        np.log1p(trace.capacity_mbps)[:, None],
    ], axis=1)


def featurize(trace: Trace, t: int, k: int) -> np.ndarray:
    """Flat causal feature vector for sample t (windows t-k+1 .. t)."""
    if t < k - 1:
        raise ValueError(f"t={t} has fewer than k={k} windows of history")
    if t >= trace.n_windows:
        raise ValueError(f"t={t} beyond trace end")
    wf = window_features(trace)
    return wf[t - k + 1:t + 1].reshape(-1).copy()


def build_dataset(traces: list[Trace], k: int) -> dict[str, np.ndarray]:
    """Sample arrays for all valid t of all traces.

    Returns x (N, K*(4U+1)) plus the theory inputs and supervision
    targets at each sample's window t, along with trace/window ids.
    """
    xs, caps, bufs, rs, taus, losses, truths = [], [], [], [], [], [], []
    tids, tidx = [], []
    has_truth = all(tr.has_truth for tr in traces)
    for ti, tr in enumerate(traces):
        T = tr.n_windows
        if T < k:
            continue
        wf = window_features(tr)
        F = wf.shape[1]
        sl = np.lib.stride_tricks.sliding_window_view(wf, k, axis=0)
        xs.append(sl.transpose(0, 2, 1).reshape(T - k + 1, k * F))
        caps.append(tr.capacity_mbps[k - 1:])
        bufs.append(tr.buffer_mb[k - 1:])
        rs.append(tr.throughput_mbps[k - 1:])
        taus.append(tr.delay_s[k - 1:])
        losses.append(tr.loss_frac[k - 1:])
        if has_truth:
            truths.append(tr.demand_true_mbps[k - 1:])
        tids.append(np.full(T - k + 1, ti))
        tidx.append(np.arange(k - 1, T))
    if not xs:
        raise ValueError("no trace long enough for the history window")
    out = {
        "x": np.ascontiguousarray(np.concatenate(xs)),
        "capacity": np.concatenate(caps),
        "buffer": np.ascontiguousarray(np.concatenate(bufs)),
        "r": np.ascontiguousarray(np.concatenate(rs)),
        "tau": np.ascontiguousarray(np.concatenate(taus)),
        "loss": np.ascontiguousarray(np.concatenate(losses)),
        "trace_id": np.concatenate(tids),
        "t_index": np.concatenate(tidx),
    }
    if has_truth:
        out["d_true"] = np.ascontiguousarray(np.concatenate(truths))
    return out


def take(batch: dict[str, np.ndarray], idx) -> dict[str, np.ndarray]:
    return {key: arr[idx] for key, arr in batch.items()}


def swap_feature_permutation(k: int, n_users: int) -> np.ndarray:
    """Column permutation exchanging the two users' feature slots."""
    if n_users != 2:
        raise ValueError("user swap supports exactly two users")
    F = 4 * n_users + 1
    perm = np.arange(k * F)
    for w in range(k):
        base = w * F
        for group in range(4):
            a = base + group * 2
            perm[a], perm[a + 1] = perm[a + 1], perm[a]
    return perm


def swap_users(batch: dict[str, np.ndarray], k: int) -> dict[str, np.ndarray]:
    """Exchange both users' feature and target slots (capacity untouched)."""
    perm = swap_feature_permutation(k, 2)
    out = dict(batch)
    out["x"] = batch["x"][:, perm]
    for key in ("buffer", "r", "tau", "loss", "d_true"):
        if key in batch:
            out[key] = batch[key][:, ::-1].copy()
    return out


def user_swap(batch: dict[str, np.ndarray], rng: RngStream,
              p: float, k: int) -> dict[str, np.ndarray]:
    """With probability p, swap the whole batch's user slots (one coin)."""
    n_users = batch["r"].shape[1]
    if n_users != 2:
        raise ValueError("user swap supports exactly two users in v1")
    if p > 0 and rng.gen.random() < p:
        return swap_users(batch, k)
    return batch
