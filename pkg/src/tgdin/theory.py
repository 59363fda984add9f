"""Closed-form differentiable map from latent demand to observable QoS.

Within one window of length dt the map composes three stages:

  1. effective demand   dem_i = (B_i + d_i*dt) / dt
  2. allocation         a_i   = dem_i                 if sum(dem) <= C
                                C * dem_i / sum(dem)  otherwise
  3. queue observables  sent_i  = min(B_i + d_i*dt, a_i*dt)
                        r_i     = sent_i / dt
                        tau_i   = min(tau_max, B_i / max(a_i, a_min))
                        q_rem_i = B_i + d_i*dt - sent_i
                        loss_i  = min(loss_max, max(q_rem_i - b_max, 0)
                                                / max(B_i + d_i*dt, eps))

The map is parameter-free, work-conserving, and differentiable almost
everywhere; ``theory_vjp`` supplies the exact closed-form gradient with
respect to demand.  At min/max kinks the derivative follows the branch
the forward pass selected, with exact ties resolving to the
first-listed branch (so sum(dem) == C uses the uncongested branch).

All functions broadcast over leading batch dimensions: demand/buffer
arrays have shape (..., U) and capacity has shape (...).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import SimConstants

# Guard for the loss denominator: no arrivals means no loss.
_ARR_EPS = 1e-9


@dataclass(frozen=True)
class TheoryOutput:
    """Per-user outputs of one forward evaluation (arrays shaped (..., U))."""

    effective_demand_mbps: np.ndarray
    allocation_mbps: np.ndarray
    sent_mb: np.ndarray
    throughput_mbps: np.ndarray
    delay_s: np.ndarray
    loss_frac: np.ndarray
    residual_queue_mb: np.ndarray


def _check_nonneg(name: str, x: np.ndarray) -> None:
    if np.any(x < 0):
        raise ValueError(f"{name} must be nonnegative")


def effective_demand(buffer_mb: np.ndarray, d_hat_mbps: np.ndarray,
                     dt_s: float) -> np.ndarray:
    """Backlog-adjusted rate competing for capacity: (B + d*dt) / dt."""
    if dt_s <= 0:
        raise ValueError("dt_s must be positive")
    buffer_mb = np.asarray(buffer_mb, dtype=np.float64)
    d_hat_mbps = np.asarray(d_hat_mbps, dtype=np.float64)
    _check_nonneg("buffer_mb", buffer_mb)
    _check_nonneg("d_hat_mbps", d_hat_mbps)
    return (buffer_mb + d_hat_mbps * dt_s) / dt_s


def schedule_allocate(dem_mbps: np.ndarray, capacity_mbps) -> np.ndarray:
    """Work-conserving proportional share of capacity over effective demand.

    Uncongested (sum(dem) <= C, ties included): everyone gets their
    demand.  Congested: a_i = C * dem_i / sum(dem).  Zero total demand
    allocates zero.
    """
    dem = np.asarray(dem_mbps, dtype=np.float64)
    cap = np.asarray(capacity_mbps, dtype=np.float64)
    _check_nonneg("dem_mbps", dem)
    _check_nonneg("capacity_mbps", cap)
    total = dem.sum(axis=-1)
    cap = np.broadcast_to(cap, total.shape) if total.shape else cap
    congested = np.asarray(total > cap)
    safe_total = np.where(total > 0, total, 1.0)
    share = np.expand_dims(cap, -1) * dem / np.expand_dims(safe_total, -1)
    return np.where(np.expand_dims(congested, -1), share, dem)


def queue_observables(buffer_mb: np.ndarray, d_hat_mbps: np.ndarray,
                      allocation_mbps: np.ndarray, dt_s: float,
                      consts: SimConstants) -> dict[str, np.ndarray]:
    """Sent volume, throughput, delay proxy, loss rate, residual queue."""
    B = np.asarray(buffer_mb, dtype=np.float64)
    d = np.asarray(d_hat_mbps, dtype=np.float64)
    a = np.asarray(allocation_mbps, dtype=np.float64)
    for name, x in (("buffer_mb", B), ("d_hat_mbps", d), ("allocation_mbps", a)):
        _check_nonneg(name, x)
    if dt_s <= 0:
        raise ValueError("dt_s must be positive")

    arrivals = B + d * dt_s                      # megabits available to send
    sent = np.minimum(arrivals, a * dt_s)
    throughput = sent / dt_s
    delay = np.minimum(consts.tau_max_s, B / np.maximum(a, consts.a_min_mbps))
    q_rem = arrivals - sent
    overflow = np.maximum(q_rem - consts.b_max_mb, 0.0)
    loss = np.minimum(consts.loss_max_frac,
                      overflow / np.maximum(arrivals, _ARR_EPS))
    return {
        "sent_mb": sent,
        "throughput_mbps": throughput,
        "delay_s": delay,
        "loss_frac": loss,
        "residual_queue_mb": q_rem,
    }


def buffer_advance(q_rem_mb: np.ndarray, b_max_mb: float):
    """Clip the residual queue into the finite buffer; overflow is lost."""
    q = np.asarray(q_rem_mb, dtype=np.float64)
    _check_nonneg("q_rem_mb", q)
    next_buffer = np.minimum(q, b_max_mb)
    lost = q - next_buffer
    return next_buffer, lost


def theory_forward(d_hat_mbps: np.ndarray, capacity_mbps, buffer_mb: np.ndarray,
                   dt_s: float, consts: SimConstants) -> TheoryOutput:
    """Full forward map (d, C, B, dt) -> (r, tau, loss) and internals.

    Composes effective demand, allocation, and the queue observables.
    In the uncongested branch the sent volume mathematically ties with
    the arrivals (dem_i * dt == B_i + d_i * dt), so that branch sends
    the arrivals directly; this keeps residual queues exactly zero
    instead of accumulating 1-ulp rounding residue through dt.
    """
    B = np.asarray(buffer_mb, dtype=np.float64)
    d = np.asarray(d_hat_mbps, dtype=np.float64)
    dem = effective_demand(B, d, dt_s)
    cap = np.asarray(capacity_mbps, dtype=np.float64)
    _check_nonneg("capacity_mbps", cap)
    total = dem.sum(axis=-1)
    congested = np.asarray(np.broadcast_to(cap, total.shape) < total) \
        if total.shape else np.asarray(cap < total)
    safe_total = np.where(total > 0, total, 1.0)
    share = np.expand_dims(cap, -1) * dem / np.expand_dims(safe_total, -1)
    cong = np.expand_dims(congested, -1)
    alloc = np.where(cong, share, dem)

    arrivals = B + d * dt_s
    sent = np.where(cong, np.minimum(arrivals, alloc * dt_s), arrivals)
    throughput = sent / dt_s
    delay = np.minimum(consts.tau_max_s,
                       B / np.maximum(alloc, consts.a_min_mbps))
    q_rem = arrivals - sent
    overflow = np.maximum(q_rem - consts.b_max_mb, 0.0)
    loss = np.minimum(consts.loss_max_frac,
                      overflow / np.maximum(arrivals, _ARR_EPS))
    return TheoryOutput(
        effective_demand_mbps=dem,
        allocation_mbps=alloc,
        sent_mb=sent,
        throughput_mbps=throughput,
        delay_s=delay,
        loss_frac=loss,
        residual_queue_mb=q_rem,
    )


def theory_vjp(d_hat_mbps: np.ndarray, capacity_mbps, buffer_mb: np.ndarray,
               dt_s: float, consts: SimConstants,
               g_throughput: np.ndarray, g_delay: np.ndarray,
               g_loss: np.ndarray) -> np.ndarray:
    """Gradient of sum(g_r*r + g_tau*tau + g_loss*loss) w.r.t. demand.

    Exact closed-form reverse pass through the forward map, using the
    same branch selections the forward pass makes.  Returns an array
    shaped like ``d_hat_mbps``.
    """
    d = np.asarray(d_hat_mbps, dtype=np.float64)
    B = np.asarray(buffer_mb, dtype=np.float64)
    cap = np.asarray(capacity_mbps, dtype=np.float64)
    g_r = np.asarray(g_throughput, dtype=np.float64)
    g_tau = np.asarray(g_delay, dtype=np.float64)
    g_l = np.asarray(g_loss, dtype=np.float64)
    for name, g in (("g_throughput", g_r), ("g_delay", g_tau), ("g_loss", g_l)):
        if not np.all(np.isfinite(g)):
            raise ValueError(f"{name} must be finite")

    dem = (B + d * dt_s) / dt_s
    total = dem.sum(axis=-1)
    congested = total > cap                       # ties -> uncongested branch
    safe_total = np.where(total > 0, total, 1.0)
    share = np.expand_dims(cap, -1) * dem / np.expand_dims(safe_total, -1)
    cong = np.expand_dims(congested, -1)
    alloc = np.where(cong, share, dem)

    arrivals = B + d * dt_s
    a_dt = alloc * dt_s
    # uncongested users send their arrivals (the forward map's branch);
    # ties in the congested min() also resolve to the arrivals side
    arrival_limited = np.where(cong, arrivals <= a_dt, True)
    q_rem = arrivals - np.where(arrival_limited, arrivals, a_dt)
    arr_guard = np.maximum(arrivals, _ARR_EPS)
    overflow = q_rem - consts.b_max_mb
    raw_loss = np.maximum(overflow, 0.0) / arr_guard

    # --- reverse pass: accumulate gradients on arrivals and allocation ---
    g_arr = np.zeros_like(d)
    g_a = np.zeros_like(d)

    # throughput = min(arrivals, a*dt) / dt
    g_sent = g_r / dt_s
    g_arr += np.where(arrival_limited, g_sent, 0.0)
    g_a += np.where(arrival_limited, 0.0, g_sent * dt_s)

    # delay = min(tau_max, B / max(a, a_min)); constant w.r.t. demand when
    # capped at tau_max or floored at a_min (ties pick the cap/numerator).
    denom = np.maximum(alloc, consts.a_min_mbps)
    raw_delay = B / denom
    delay_active = (consts.tau_max_s > raw_delay) & (alloc > consts.a_min_mbps)
    g_a += np.where(delay_active, -g_tau * B / denom**2, 0.0)

    # loss = min(loss_max, max(q_rem - b_max, 0) / max(arrivals, eps))
    loss_uncapped = consts.loss_max_frac > raw_loss   # tie -> cap branch
    overflow_active = overflow >= 0.0                 # tie -> overflow branch
    guard_inactive = arrivals > _ARR_EPS
    g_raw = np.where(loss_uncapped, g_l, 0.0)
    g_over = np.where(overflow_active, g_raw / arr_guard, 0.0)
    g_arr += np.where(guard_inactive,
                      -g_raw * np.maximum(overflow, 0.0) / arr_guard**2, 0.0)
    # q_rem = arrivals - sent
    g_q = g_over
    g_arr += np.where(arrival_limited, 0.0, g_q)      # sent cancels arrivals
    g_a += np.where(arrival_limited, 0.0, -g_q * dt_s)

    # allocation -> effective demand: in the congested branch
    # da_i/ddem_j = (C/S) * (delta_ij - dem_i / S), so the vjp is
    # (C/S) * (g_a_j - sum_i g_a_i dem_i / S).
    g_dem = np.where(cong,
                     (np.expand_dims(cap / safe_total, -1)
                      * (g_a - np.expand_dims((g_a * dem).sum(axis=-1)
                                              / safe_total, -1))),
                     g_a)

    # dem = B/dt + d  and  arrivals = B + d*dt
    return g_dem + g_arr * dt_s


def theory_jacobian(d_hat_mbps: np.ndarray, capacity_mbps, buffer_mb: np.ndarray,
                    dt_s: float, consts: SimConstants) -> dict[str, np.ndarray]:
    """Dense per-window Jacobians d(out)/d(demand), one (U, U) per output.

    Convenience wrapper over ``theory_vjp`` for single windows; rows are
    outputs, columns inputs.
    """
    d = np.asarray(d_hat_mbps, dtype=np.float64)
    if d.ndim != 1:
        raise ValueError("theory_jacobian expects a single window")
    U = d.shape[0]
    jac = {k: np.zeros((U, U)) for k in ("throughput_mbps", "delay_s", "loss_frac")}
    zero = np.zeros(U)
    for i in range(U):
        seed = np.zeros(U)
        seed[i] = 1.0
        jac["throughput_mbps"][i] = theory_vjp(
            d, capacity_mbps, buffer_mb, dt_s, consts, seed, zero, zero)
        jac["delay_s"][i] = theory_vjp(
            d, capacity_mbps, buffer_mb, dt_s, consts, zero, seed, zero)
        jac["loss_frac"][i] = theory_vjp(
            d, capacity_mbps, buffer_mb, dt_s, consts, zero, zero, seed)
    return jac
