"""Shared domain types: simulation constants, traces, regimes, drift.

Units are fixed package-wide: rates in Mbps, volumes in megabits,
times in seconds.  Conversions happen only at ingestion.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

DEMAND_REGIMES = ("small", "light", "medium", "heavy")
PATTERNS = ("continuous", "on_off")
DRIFT_FAMILIES = ("demandOnly", "patternOnly", "patternDemand")

# Per-regime base-rate sampling bounds in Mbps.
REGIME_BOUNDS = {
    "small": (1.0, 5.0),
    "light": (1.0, 8.0),
    "medium": (3.0, 20.0),
    "heavy": (10.0, 80.0),
}


@dataclass(frozen=True)
class SimConstants:
    """Window length and the queueing caps/floors used by the forward map."""

    dt_s: float = 0.2
    n_users: int = 2
    b_max_mb: float = 5.0
    tau_max_s: float = 2.0
    loss_max_frac: float = 0.5
    a_min_mbps: float = 0.01

    def __post_init__(self) -> None:
        if not self.dt_s > 0:
            raise ValueError("dt_s must be positive")
        if self.n_users < 2:
            raise ValueError("n_users must be at least 2")
        if not self.b_max_mb > 0:
            raise ValueError("b_max_mb must be positive")
        if not self.tau_max_s > 0:
            raise ValueError("tau_max_s must be positive")
        if not 0 < self.loss_max_frac <= 1:
            raise ValueError("loss_max_frac must be in (0, 1]")
        if not self.a_min_mbps > 0:
            raise ValueError("a_min_mbps must be positive")


@dataclass(frozen=True)
class DemandProfile:
    """Generator law for one user's demand series.

    ``base_mbps`` is the level around which AR(1) jitter wanders;
    rates are clipped to [lo_mbps, hi_mbps] (active windows only for
    on_off).  The analytic mean is base for continuous and duty*base
    for on_off.
    """

    pattern: str
    base_mbps: float
    lo_mbps: float = 0.0
    hi_mbps: float = float("inf")
    duty: float = 0.5
    jitter_frac: float = 0.1

    def __post_init__(self) -> None:
        if self.pattern not in PATTERNS:
            raise ValueError(f"unknown pattern {self.pattern!r}")
        if self.base_mbps < 0:
            raise ValueError("base_mbps must be >= 0")
        if self.lo_mbps > self.hi_mbps:
            raise ValueError("empty range [lo_mbps, hi_mbps]")
        if not 0 < self.duty < 1:
            raise ValueError("duty must be in (0, 1)")

    def mean_mbps(self) -> float:
        """Analytic (clip-free) mean of the generated series."""
        if self.pattern == "on_off":
            return self.duty * self.base_mbps
        return self.base_mbps


@dataclass(frozen=True)
class DriftScenario:
    """A single mid-trace change of one user's generator parameters.

    Each user runs ``pre_profiles[u]`` for the first half of the trace;
    from window floor(T/2) on, the changed user switches to
    ``post_profile`` while the other user's series is untouched.
    """

    family: str
    changed_user: int
    pre_profiles: tuple[DemandProfile, ...]
    post_profile: DemandProfile

    def __post_init__(self) -> None:
        if self.family not in DRIFT_FAMILIES:
            raise ValueError(f"unknown drift family {self.family!r}")
        if not 0 <= self.changed_user < len(self.pre_profiles):
            raise ValueError("changed_user out of range")


@dataclass(frozen=True)
class RegimeSpec:
    """One sampled operating condition for trace synthesis."""

    capacity_base_mbps: float
    demand_regime: tuple[str, ...]
    pattern: tuple[str, ...]
    length_windows: int
    capacity_law: str = "slow-walk"
    drift: Optional[DriftScenario] = None
    # Explicit per-user profiles override regime/pattern sampling
    # (used by the fixed test grid; None means sample from the labels).
    profiles: Optional[tuple[DemandProfile, ...]] = None

    def __post_init__(self) -> None:
        if self.capacity_law != "slow-walk":
            raise ValueError(f"unknown capacity law {self.capacity_law!r}")
        for r in self.demand_regime:
            if r not in DEMAND_REGIMES:
                raise ValueError(f"unknown demand regime {r!r}")
        for p in self.pattern:
            if p not in PATTERNS:
                raise ValueError(f"unknown pattern {p!r}")
        if len(self.demand_regime) != len(self.pattern):
            raise ValueError("demand_regime and pattern lengths differ")
        if self.length_windows < 2:
            raise ValueError("length_windows must be >= 2")

    @property
    def n_users(self) -> int:
        return len(self.demand_regime)


@dataclass(frozen=True)
class WindowObservation:
    """Observables for one window: shared capacity plus per-user QoS."""

    t_index: int
    capacity_mbps: float
    throughput_mbps: np.ndarray
    buffer_mb: np.ndarray          # occupancy at window start
    delay_s: np.ndarray
    loss_frac: np.ndarray
    demand_true_mbps: Optional[np.ndarray] = None


@dataclass
class Trace:
    """A time-ordered run of window observations (column storage).

    ``seed`` is the 64-bit trace seed; regenerating from (meta, seed)
    reproduces the trace bit-exactly.
    """

    capacity_mbps: np.ndarray       # (T,)
    throughput_mbps: np.ndarray     # (T, U)
    buffer_mb: np.ndarray           # (T, U), at window start
    delay_s: np.ndarray             # (T, U)
    loss_frac: np.ndarray           # (T, U)
    demand_true_mbps: Optional[np.ndarray] = None   # (T, U) generator-only
    meta: Optional[RegimeSpec] = None
    seed: int = 0

    def __post_init__(self) -> None:
        T, U = self.throughput_mbps.shape
        for name in ("buffer_mb", "delay_s", "loss_frac"):
            if getattr(self, name).shape != (T, U):
                raise ValueError(f"{name} shape mismatch")
        if self.capacity_mbps.shape != (T,):
            raise ValueError("capacity_mbps shape mismatch")
        if self.demand_true_mbps is not None and self.demand_true_mbps.shape != (T, U):
            raise ValueError("demand_true_mbps shape mismatch")

    @property
    def n_windows(self) -> int:
        return self.throughput_mbps.shape[0]

    @property
    def n_users(self) -> int:
        return self.throughput_mbps.shape[1]

    @property
    def has_truth(self) -> bool:
        return self.demand_true_mbps is not None

    def window(self, t: int) -> WindowObservation:
        return WindowObservation(
            t_index=t,
            capacity_mbps=float(self.capacity_mbps[t]),
            throughput_mbps=self.throughput_mbps[t],
            buffer_mb=self.buffer_mb[t],
            delay_s=self.delay_s[t],
            loss_frac=self.loss_frac[t],
            demand_true_mbps=None if self.demand_true_mbps is None
            else self.demand_true_mbps[t],
        )


def profile_to_dict(p: DemandProfile) -> dict:
    return asdict(p)


def profile_from_dict(d: dict) -> DemandProfile:
    return DemandProfile(**d)


def regime_to_dict(spec: RegimeSpec) -> dict:
    d = {
        "capacity_base_mbps": spec.capacity_base_mbps,
        "capacity_law": spec.capacity_law,
        "demand_regime": list(spec.demand_regime),
        "pattern": list(spec.pattern),
        "length_windows": spec.length_windows,
        "drift": None,
        "profiles": None,
    }
    if spec.drift is not None:
        d["drift"] = {
            "family": spec.drift.family,
            "changed_user": spec.drift.changed_user,
            "pre_profiles": [profile_to_dict(p) for p in spec.drift.pre_profiles],
            "post_profile": profile_to_dict(spec.drift.post_profile),
        }
    if spec.profiles is not None:
        d["profiles"] = [profile_to_dict(p) for p in spec.profiles]
    return d


def regime_from_dict(d: dict) -> RegimeSpec:
    drift = None
    if d.get("drift") is not None:
        dd = d["drift"]
        drift = DriftScenario(
            family=dd["family"],
            changed_user=int(dd["changed_user"]),
            pre_profiles=tuple(profile_from_dict(p) for p in dd["pre_profiles"]),
            post_profile=profile_from_dict(dd["post_profile"]),
        )
    profiles = None
    if d.get("profiles") is not None:
        profiles = tuple(profile_from_dict(p) for p in d["profiles"])
    return RegimeSpec(
        capacity_base_mbps=float(d["capacity_base_mbps"]),
        capacity_law=d.get("capacity_law", "slow-walk"),
        demand_regime=tuple(d["demand_regime"]),
        pattern=tuple(d["pattern"]),
        length_windows=int(d["length_windows"]),
        drift=drift,
        profiles=profiles,
    )
