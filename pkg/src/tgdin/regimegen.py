"""Randomized scenario sampling and synthetic trace generation.

Capacity follows a slow bounded walk; per-user demand follows either a
continuous AR(1)-jittered level or an on/off burst pattern.  Traces are
rolled forward through the queueing theory layer with the true demand,
so every generated window is physically consistent with the forward
map.  All sampling is keyed by explicit stream ids, making generation a
pure function of (seed, spec) regardless of generation order.
"""

from __future__ import annotations

import math

import numpy as np

from .core import (DEMAND_REGIMES, PATTERNS, REGIME_BOUNDS, DemandProfile,
                   DriftScenario, RegimeSpec, SimConstants, Trace)
from .config import RegimeConfig
from .rng import RngStream, derive_stream, mix64
from .theory import buffer_advance, theory_forward

# Stream-id domains; changing these invalidates stored seeds.
DOM_CAPACITY = 101
DOM_PROFILE = 102
DOM_DEMAND = 103
DOM_DRIFT = 104
DOM_REGIME = 105
DOM_TRACE = 106
DOM_GRID = 107
DOM_CALIB = 108
DOM_CORPUS = 109
DOM_ROUND = 110


def sample_regime(rng: RngStream, cfg: RegimeConfig,
                  n_users: int = 2) -> RegimeSpec:
    """Draw one training regime: capacity base, per-user labels, patterns."""
    gen = rng.gen
    cap = gen.uniform(cfg.capacity_min_mbps, cfg.capacity_max_mbps)
    regimes = tuple(DEMAND_REGIMES[gen.integers(0, len(DEMAND_REGIMES))]
                    for _ in range(n_users))
    patterns = tuple(PATTERNS[gen.integers(0, len(PATTERNS))]
                     for _ in range(n_users))
    return RegimeSpec(capacity_base_mbps=float(cap), demand_regime=regimes,
                      pattern=patterns, length_windows=cfg.length_windows)


def gen_capacity_series(spec: RegimeSpec, rng: RngStream, T: int,
                        cfg: RegimeConfig | None = None) -> np.ndarray:
    """Bounded slow walk around the base capacity, floored at 1 Mbps."""
    if T < 1:
        raise ValueError("T must be >= 1")
    cfg = cfg or RegimeConfig()
    base = spec.capacity_base_mbps
    lo = max(1.0, (1.0 - cfg.capacity_band_frac) * base)
    hi = (1.0 + cfg.capacity_band_frac) * base
    steps = rng.gen.uniform(-cfg.capacity_step_frac, cfg.capacity_step_frac,
                            max(T - 1, 0)) * base
    series = np.empty(T)
    c = base
    series[0] = c
    for t in range(1, T):
        c = min(hi, max(lo, c + steps[t - 1]))
        series[t] = c
    return series


def sample_profile(regime: str, pattern: str, rng: RngStream,
                   cfg: RegimeConfig | None = None) -> DemandProfile:
    """Instantiate a demand profile from a (regime, pattern) label pair."""
    cfg = cfg or RegimeConfig()
    lo_r, hi_r = REGIME_BOUNDS[regime]
    gen = rng.gen
    base = gen.uniform(lo_r, hi_r)
    if pattern == "on_off":
        duty = gen.uniform(cfg.onoff_duty_min, cfg.onoff_duty_max)
        return DemandProfile(pattern="on_off", base_mbps=float(base),
                             lo_mbps=0.0, hi_mbps=1.1 * hi_r, duty=float(duty),
                             jitter_frac=cfg.jitter_frac)
    return DemandProfile(pattern="continuous", base_mbps=float(base),
                         lo_mbps=0.0, hi_mbps=1.1 * hi_r,
                         jitter_frac=cfg.jitter_frac)


def gen_profile_series(profile: DemandProfile, rng: RngStream, T: int,
                       cfg: RegimeConfig | None = None) -> np.ndarray:
    """Demand series for one user under one profile.

    Continuous: clip(base + AR(1) jitter).  On/off: the same jittered
    rate on active windows, exactly zero on idle windows; period and
    phase are drawn once per call.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    cfg = cfg or RegimeConfig()
    gen = rng.gen
    if profile.pattern == "on_off":
        period = int(gen.integers(cfg.onoff_period_min, cfg.onoff_period_max + 1))
        phase = int(gen.integers(0, period))
    sigma = profile.jitter_frac * profile.base_mbps
    innov = gen.normal(0.0, sigma, T) if sigma > 0 else np.zeros(T)
    x = np.empty(T)
    acc = 0.0
    for t in range(T):
        acc = cfg.ar_coeff * acc + innov[t]
        x[t] = acc
    rate = np.clip(profile.base_mbps + x, max(profile.lo_mbps, 0.0),
                   profile.hi_mbps)
    if profile.pattern == "on_off":
        # nearest-integer active span keeps the realized duty unbiased
        # and guarantees at least one active and one idle window per period
        n_active = int(round(profile.duty * period))
        n_active = max(1, min(period - 1, n_active))
        t_idx = np.arange(T)
        active = ((t_idx + phase) % period) < n_active
        rate = np.where(active, rate, 0.0)
    return rate


def resolve_profiles(spec: RegimeSpec, rng: RngStream,
                     cfg: RegimeConfig | None = None) -> tuple[DemandProfile, ...]:
    """Per-user profiles: explicit > drift pre-profiles > sampled labels."""
    if spec.profiles is not None:
        return spec.profiles
    if spec.drift is not None:
        return spec.drift.pre_profiles
    return tuple(
        sample_profile(spec.demand_regime[u], spec.pattern[u],
                       rng.substream(DOM_PROFILE, u), cfg)
        for u in range(spec.n_users))


def gen_demand_series(spec: RegimeSpec, rng: RngStream, T: int,
                      cfg: RegimeConfig | None = None) -> np.ndarray:
    """True per-user demand (T, U), drift not yet applied."""
    if T < 1:
        raise ValueError("T must be >= 1")
    profiles = resolve_profiles(spec, rng, cfg)
    cols = [gen_profile_series(p, rng.substream(DOM_DEMAND, u), T, cfg)
            for u, p in enumerate(profiles)]
    return np.stack(cols, axis=1)


def apply_drift(spec: RegimeSpec, series: np.ndarray, rng: RngStream,
                cfg: RegimeConfig | None = None) -> np.ndarray:
    """Switch the changed user to the post-profile from window floor(T/2).

    The unchanged user's column is returned bit-identical; the changed
    user's tail is regenerated from the post-profile with its own
    stream.
    """
    if spec.drift is None:
        raise ValueError("regime has no drift scenario")
    T = series.shape[0]
    mid = T // 2
    u = spec.drift.changed_user
    out = series.copy()
    tail = gen_profile_series(spec.drift.post_profile,
                              rng.substream(DOM_DRIFT, u), T - mid, cfg)
    out[mid:, u] = tail
    return out


def synthesize_trace(spec: RegimeSpec, seed: int, consts: SimConstants,
                     cfg: RegimeConfig | None = None) -> Trace:
    """Roll the theory layer forward over generated capacity and demand.

    Buffers start empty; each window records the start-of-window buffer
    and the QoS the forward map produces under the true demand, then the
    residual queue is clipped into the finite buffer for the next
    window.
    """
    T = spec.length_windows
    U = spec.n_users
    root = derive_stream(seed, DOM_TRACE)
    capacity = gen_capacity_series(spec, root.substream(DOM_CAPACITY), T, cfg)
    demand = gen_demand_series(spec, root, T, cfg)
    if spec.drift is not None:
        demand = apply_drift(spec, demand, root, cfg)

    thr = np.empty((T, U))
    buf = np.empty((T, U))
    delay = np.empty((T, U))
    loss = np.empty((T, U))
    B = np.zeros(U)
    for t in range(T):
        out = theory_forward(demand[t], capacity[t], B, consts.dt_s, consts)
        buf[t] = B
        thr[t] = out.throughput_mbps
        delay[t] = out.delay_s
        loss[t] = out.loss_frac
        B, _ = buffer_advance(out.residual_queue_mb, consts.b_max_mb)
    return Trace(capacity_mbps=capacity, throughput_mbps=thr, buffer_mb=buf,
                 delay_s=delay, loss_frac=loss, demand_true_mbps=demand,
                 meta=spec, seed=int(seed))


# ---------------------------------------------------------------------------
# Fixed drift scenario table (two users: u0 higher-rate/bursty, u1 lower).
# Profile constants are chosen so the analytic mean duty*base (on/off)
# or base (continuous) matches the intended scenario means.
# ---------------------------------------------------------------------------

def _onoff(base, duty, hi, lo=0.0, jitter=0.1):
    return DemandProfile(pattern="on_off", base_mbps=base, lo_mbps=lo,
                         hi_mbps=hi, duty=duty, jitter_frac=jitter)


def _cont(base, lo, hi, jitter=0.1):
    return DemandProfile(pattern="continuous", base_mbps=base, lo_mbps=lo,
                         hi_mbps=hi, jitter_frac=jitter)


# u0 "video-like" heavy burst profile reused by several scenarios.
_U0_BURSTY = _onoff(base=60.0, duty=0.30, hi=75.0, jitter=0.05)
_U1_STEADY = _cont(base=3.0, lo=1.1, hi=5.1)


def drift_scenarios() -> dict[str, DriftScenario]:
    """The six test-grid scenarios: 3 families x 2 changed users."""
    return {
        "demandOnly_u0": DriftScenario(
            family="demandOnly", changed_user=0,
            pre_profiles=(_onoff(base=6.5, duty=0.4, hi=12.0),
                          _cont(base=3.0, lo=1.2, hi=5.0)),
            post_profile=_onoff(base=7.25, duty=0.4, hi=12.0)),
        "demandOnly_u1": DriftScenario(
            family="demandOnly", changed_user=1,
            pre_profiles=(_U0_BURSTY, _cont(base=8.5, lo=6.5, hi=14.0)),
            post_profile=_cont(base=11.5, lo=6.5, hi=14.0)),
        "patternOnly_u0": DriftScenario(
            family="patternOnly", changed_user=0,
            pre_profiles=(_cont(base=50.0, lo=37.0, hi=62.0, jitter=0.05),
                          _U1_STEADY),
            post_profile=_onoff(base=59.5, duty=0.84, lo=37.0, hi=62.0,
                                jitter=0.04)),
        "patternOnly_u1": DriftScenario(
            family="patternOnly", changed_user=1,
            pre_profiles=(_U0_BURSTY,
                          _onoff(base=1.733, duty=0.75, hi=2.5)),
            post_profile=_onoff(base=2.364, duty=0.55, hi=2.5, jitter=0.05)),
        "patternDemand_u0": DriftScenario(
            family="patternDemand", changed_user=0,
            pre_profiles=(_onoff(base=12.0, duty=0.4, hi=14.0), _U1_STEADY),
            post_profile=_cont(base=10.0, lo=5.6, hi=14.0)),
        "patternDemand_u1": DriftScenario(
            family="patternDemand", changed_user=1,
            pre_profiles=(_U0_BURSTY, _cont(base=3.2, lo=1.0, hi=6.0)),
            post_profile=_onoff(base=10.8, duty=0.6, hi=12.0, jitter=0.05)),
    }


def _label_for_profile(p: DemandProfile) -> str:
    """Nominal regime label whose bounds contain the profile base."""
    for label in ("small", "light", "medium", "heavy"):
        lo, hi = REGIME_BOUNDS[label]
        if lo <= p.base_mbps <= hi:
            return label
    return "heavy"


def grid_regime(capacity_mbps: float, scenario: DriftScenario,
                length_windows: int) -> RegimeSpec:
    pre = scenario.pre_profiles
    return RegimeSpec(
        capacity_base_mbps=capacity_mbps,
        demand_regime=tuple(_label_for_profile(p) for p in pre),
        pattern=tuple(p.pattern for p in pre),
        length_windows=length_windows,
        drift=scenario,
    )


def build_test_grid(consts: SimConstants, cfg: RegimeConfig,
                    root_seed: int) -> list[Trace]:
    """Capacity x scenario x replicate traces, each with one mid-trace drift."""
    traces = []
    scenarios = drift_scenarios()
    for ci, cap in enumerate(cfg.grid_capacities):
        for si, (name, scen) in enumerate(scenarios.items()):
            spec = grid_regime(cap, scen, cfg.length_windows)
            for rep in range(cfg.grid_replicates):
                seed = mix64(root_seed, DOM_GRID, ci, si, rep)
                traces.append(synthesize_trace(spec, seed, consts, cfg))
    return traces


def calibration_bands(cfg: RegimeConfig) -> np.ndarray:
    """Log-spaced capacity band edges over the training capacity range."""
    return np.geomspace(cfg.capacity_min_mbps, cfg.capacity_max_mbps,
                        cfg.calib_bands + 1)


def build_calibration_set(consts: SimConstants, cfg: RegimeConfig,
                          root_seed: int) -> list[Trace]:
    """Stratified fixed set: capacity bands x demand regimes x pattern pairs."""
    edges = calibration_bands(cfg)
    pattern_pairs = [(a, b) for a in PATTERNS for b in PATTERNS]
    traces = []
    for b in range(cfg.calib_bands):
        for ri, regime in enumerate(DEMAND_REGIMES):
            for pi, (p0, p1) in enumerate(pattern_pairs):
                for rep in range(cfg.calib_traces_per_cell):
                    sid = mix64(root_seed, DOM_CALIB, b, ri, pi, rep)
                    cap = derive_stream(sid, DOM_REGIME).gen.uniform(
                        edges[b], edges[b + 1])
                    spec = RegimeSpec(
                        capacity_base_mbps=float(cap),
                        demand_regime=(regime, regime),
                        pattern=(p0, p1),
                        length_windows=cfg.length_windows)
                    traces.append(synthesize_trace(spec, sid, consts, cfg))
    return traces


def build_single_capacity_corpus(capacity_mbps: float, n_traces: int,
                                 rng: RngStream, consts: SimConstants,
                                 cfg: RegimeConfig) -> list[Trace]:
    """Constant-band corpus at one capacity with randomized regimes."""
    if not (cfg.capacity_min_mbps <= capacity_mbps <= cfg.capacity_max_mbps):
        raise ValueError(f"capacity {capacity_mbps} outside "
                         f"[{cfg.capacity_min_mbps}, {cfg.capacity_max_mbps}]")
    traces = []
    for i in range(n_traces):
        sid = mix64(rng.root_seed, rng.stream_id, DOM_CORPUS, i)
        reg = sample_regime(derive_stream(sid, DOM_REGIME), cfg)
        spec = RegimeSpec(capacity_base_mbps=capacity_mbps,
                          demand_regime=reg.demand_regime,
                          pattern=reg.pattern,
                          length_windows=cfg.length_windows)
        traces.append(synthesize_trace(spec, sid, consts, cfg))
    return traces


def build_training_round(root_seed: int, round_id: int, n_traces: int,
                         consts: SimConstants, cfg: RegimeConfig,
                         regime_sampler=None) -> list[Trace]:
    """Fresh randomized corpus for one refresh round."""
    sampler = regime_sampler or sample_regime
    traces = []
    for i in range(n_traces):
        sid = mix64(root_seed, DOM_ROUND, round_id, i)
        spec = sampler(derive_stream(sid, DOM_REGIME), cfg)
        traces.append(synthesize_trace(spec, sid, consts, cfg))
    return traces
