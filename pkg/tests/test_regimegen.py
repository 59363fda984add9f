"""Generator statistics, drift semantics, and the trace-level oracle."""

import numpy as np
import pytest

from tgdin.config import RegimeConfig
from tgdin.core import DemandProfile, RegimeSpec, SimConstants
from tgdin.regimegen import (apply_drift, build_calibration_set,
                             build_single_capacity_corpus, build_test_grid,
                             calibration_bands, drift_scenarios,
                             gen_capacity_series, gen_demand_series,
                             gen_profile_series, grid_regime, sample_regime,
                             synthesize_trace)
from tgdin.rng import derive_stream

CFG = RegimeConfig()


def resim_scalar(trace, consts):
    """Independent pure-Python re-simulation of the recorded trace from
    its stored capacity and true demand series."""
    T, U = trace.throughput_mbps.shape
    B = [0.0] * U
    thr = np.zeros((T, U))
    buf = np.zeros((T, U))
    delay = np.zeros((T, U))
    loss = np.zeros((T, U))
    dt = consts.dt_s
    for t in range(T):
        d = [float(x) for x in trace.demand_true_mbps[t]]
        C = float(trace.capacity_mbps[t])
        dem = [(B[i] + d[i] * dt) / dt for i in range(U)]
        tot = sum(dem)
        if tot <= C:
            alloc = list(dem)
        elif tot == 0:
            alloc = [0.0] * U
        else:
            alloc = [C * dem[i] / tot for i in range(U)]
        for i in range(U):
            arr = B[i] + d[i] * dt
            s = min(arr, alloc[i] * dt)
            q = arr - s
            buf[t, i] = B[i]
            thr[t, i] = s / dt
            delay[t, i] = min(consts.tau_max_s,
                              B[i] / max(alloc[i], consts.a_min_mbps))
            loss[t, i] = min(consts.loss_max_frac,
                             max(q - consts.b_max_mb, 0.0) / max(arr, 1e-9))
            B[i] = min(q, consts.b_max_mb)
    return thr, buf, delay, loss


class TestSampleRegime:
    def test_capacity_range_and_label_frequencies(self):
        labels = {"small": 0, "light": 0, "medium": 0, "heavy": 0}
        n = 10_000
        for i in range(n):
            spec = sample_regime(derive_stream(7, i), CFG)
            assert 20.0 <= spec.capacity_base_mbps <= 600.0
            labels[spec.demand_regime[0]] += 1
        for count in labels.values():
            assert 0.22 <= count / n <= 0.28

    def test_deterministic(self):
        a = sample_regime(derive_stream(7, 5), CFG)
        b = sample_regime(derive_stream(7, 5), CFG)
        assert a == b


class TestCapacitySeries:
    def spec(self, base):
        return RegimeSpec(capacity_base_mbps=base,
                          demand_regime=("light", "light"),
                          pattern=("continuous", "continuous"),
                          length_windows=600)

    def test_bounds(self):
        c = gen_capacity_series(self.spec(100.0), derive_stream(1, 0), 600, CFG)
        assert np.all(c >= 80.0) and np.all(c <= 120.0)

    def test_step_bound(self):
        c = gen_capacity_series(self.spec(100.0), derive_stream(1, 1), 600, CFG)
        assert np.max(np.abs(np.diff(c))) <= 0.5 + 1e-12

    def test_ensemble_mean_near_base(self):
        # Monte-Carlo across seeds: 50 series x 200 windows
        means = [gen_capacity_series(self.spec(100.0), derive_stream(2, i),
                                     200, CFG).mean() for i in range(50)]
        assert abs(np.mean(means) - 100.0) <= 5.0

    def test_never_below_one(self):
        c = gen_capacity_series(self.spec(1.2), derive_stream(1, 2), 500, CFG)
        assert np.all(c >= 1.0)


class TestDemandSeries:
    def test_light_continuous_envelope(self):
        spec = RegimeSpec(capacity_base_mbps=100,
                          demand_regime=("light", "light"),
                          pattern=("continuous", "continuous"),
                          length_windows=400)
        d = gen_demand_series(spec, derive_stream(3, 0), 400, CFG)
        assert np.all(d >= 0.0) and np.all(d <= 8.0 * 1.1 + 1e-12)

    def test_onoff_has_both_phases(self):
        for i in range(20):
            spec = RegimeSpec(capacity_base_mbps=100,
                              demand_regime=("medium", "medium"),
                              pattern=("on_off", "on_off"),
                              length_windows=60)
            d = gen_demand_series(spec, derive_stream(4, i), 60, CFG)
            for u in range(2):
                assert np.any(d[:, u] <= 0.05)
                assert np.any(d[:, u] > 0.05)

    def test_deterministic(self):
        spec = RegimeSpec(capacity_base_mbps=100,
                          demand_regime=("heavy", "small"),
                          pattern=("on_off", "continuous"),
                          length_windows=200)
        a = gen_demand_series(spec, derive_stream(5, 0), 200, CFG)
        b = gen_demand_series(spec, derive_stream(5, 0), 200, CFG)
        assert np.array_equal(a, b)


class TestDrift:
    def _series_means(self, name, n_seeds=25, T=4000):
        scen = drift_scenarios()[name]
        spec = grid_regime(100.0, scen, T)
        pre, post = [], []
        for s in range(n_seeds):
            root = derive_stream(s, 77)
            base = gen_demand_series(spec, root, T, CFG)
            drifted = apply_drift(spec, base, root, CFG)
            u = scen.changed_user
            pre.append(drifted[:T // 2, u].mean())
            post.append(drifted[T // 2:, u].mean())
        return float(np.mean(pre)), float(np.mean(post))

    def test_demand_only_u0_mean_shift(self):
        pre, post = self._series_means("demandOnly_u0")
        assert pre == pytest.approx(2.6, rel=0.10)
        assert post == pytest.approx(2.9, rel=0.10)
        assert post > pre

    def test_pattern_only_u1_duty_changes_mean_stays(self):
        scen = drift_scenarios()["patternOnly_u1"]
        assert scen.pre_profiles[1].duty != scen.post_profile.duty
        pre, post = self._series_means("patternOnly_u1")
        assert post == pytest.approx(pre, rel=0.10)

    def test_family_semantics(self):
        scens = drift_scenarios()
        for name, sc in scens.items():
            pre = sc.pre_profiles[sc.changed_user]
            post = sc.post_profile
            if sc.family == "demandOnly":
                assert pre.pattern == post.pattern
                assert pre.mean_mbps() != post.mean_mbps()
            elif sc.family == "patternOnly":
                assert post.mean_mbps() == pytest.approx(pre.mean_mbps(),
                                                         rel=0.10)
            else:
                assert pre.pattern != post.pattern
                assert abs(post.mean_mbps() - pre.mean_mbps()) \
                    > 0.1 * pre.mean_mbps()

    def test_unchanged_user_bit_identical(self):
        scen = drift_scenarios()["demandOnly_u0"]
        spec = grid_regime(60.0, scen, 400)
        root = derive_stream(9, 1)
        base = gen_demand_series(spec, root, 400, CFG)
        drifted = apply_drift(spec, base, root, CFG)
        assert np.array_equal(base[:, 1], drifted[:, 1])
        # and the changed user's pre-drift half is untouched too
        assert np.array_equal(base[:200, 0], drifted[:200, 0])
        assert np.any(base[200:, 0] != drifted[200:, 0])

    def test_drift_required(self):
        spec = RegimeSpec(capacity_base_mbps=50,
                          demand_regime=("small", "small"),
                          pattern=("continuous", "continuous"),
                          length_windows=100)
        with pytest.raises(ValueError):
            apply_drift(spec, np.zeros((100, 2)), derive_stream(1, 1), CFG)


class TestSynthesizeTrace:
    def test_unconstrained_identity(self, consts):
        spec = RegimeSpec(capacity_base_mbps=500.0,
                          demand_regime=("light", "small"),
                          pattern=("continuous", "continuous"),
                          length_windows=300)
        tr = synthesize_trace(spec, 11, consts, CFG)
        assert np.all(tr.demand_true_mbps.sum(axis=1) <= 0.5 * tr.capacity_mbps)
        # r == d up to one rounding through dt; buffers exactly empty
        assert np.allclose(tr.throughput_mbps, tr.demand_true_mbps,
                           rtol=1e-12, atol=1e-12)
        assert np.all(tr.buffer_mb == 0.0)
        assert np.all(tr.delay_s == 0.0)
        assert np.all(tr.loss_frac == 0.0)

    def test_per_window_feasibility(self, consts):
        spec = RegimeSpec(capacity_base_mbps=25.0,
                          demand_regime=("heavy", "heavy"),
                          pattern=("on_off", "continuous"),
                          length_windows=400)
        tr = synthesize_trace(spec, 12, consts, CFG)
        assert np.all(tr.throughput_mbps.sum(axis=1)
                      <= tr.capacity_mbps + 1e-9)
        assert np.any(tr.buffer_mb > 0)       # congestion actually happened
        assert np.all(tr.loss_frac <= consts.loss_max_frac)

    def test_matches_scalar_resimulation(self, consts):
        for seed, cap, regimes in ((1, 30.0, ("heavy", "medium")),
                                   (2, 150.0, ("medium", "small")),
                                   (3, 45.0, ("heavy", "heavy"))):
            spec = RegimeSpec(capacity_base_mbps=cap,
                              demand_regime=regimes,
                              pattern=("on_off", "continuous"),
                              length_windows=250)
            tr = synthesize_trace(spec, seed, consts, CFG)
            thr, buf, delay, loss = resim_scalar(tr, consts)
            assert np.allclose(tr.throughput_mbps, thr, atol=1e-12, rtol=0)
            assert np.allclose(tr.buffer_mb, buf, atol=1e-12, rtol=0)
            assert np.allclose(tr.delay_s, delay, atol=1e-12, rtol=0)
            assert np.allclose(tr.loss_frac, loss, atol=1e-12, rtol=0)

    def test_deterministic(self, consts):
        spec = RegimeSpec(capacity_base_mbps=80.0,
                          demand_regime=("medium", "light"),
                          pattern=("on_off", "on_off"),
                          length_windows=200)
        a = synthesize_trace(spec, 99, consts, CFG)
        b = synthesize_trace(spec, 99, consts, CFG)
        assert np.array_equal(a.throughput_mbps, b.throughput_mbps)
        assert np.array_equal(a.capacity_mbps, b.capacity_mbps)


SMALL = RegimeConfig(length_windows=100, grid_replicates=3)


class TestGrids:
    def test_test_grid_shape(self, consts):
        cfg = RegimeConfig(length_windows=60, grid_replicates=1)
        grid = build_test_grid(consts, cfg, 7)
        assert len(grid) == 7 * 6          # default capacities x scenarios
        caps = sorted({t.meta.capacity_base_mbps for t in grid})
        assert caps == [20, 40, 60, 120, 200, 280, 360]
        for tr in grid:
            assert tr.meta.drift is not None
            mid = tr.n_windows // 2
            assert mid == 30

    def test_grid_deterministic(self, consts):
        cfg = RegimeConfig(length_windows=60, grid_replicates=2,
                           grid_capacities=(20.0, 60.0))
        a = build_test_grid(consts, cfg, 7)
        b = build_test_grid(consts, cfg, 7)
        assert len(a) == len(b) == 2 * 6 * 2
        for x, y in zip(a, b):
            assert np.array_equal(x.throughput_mbps, y.throughput_mbps)

    def test_calibration_set(self, consts):
        cfg = RegimeConfig(length_windows=40)
        cal = build_calibration_set(consts, cfg, 7)
        assert len(cal) == 8 * 4 * 4
        edges = calibration_bands(cfg)
        # first cell sits inside band 0
        assert edges[0] <= cal[0].meta.capacity_base_mbps <= edges[1]
        again = build_calibration_set(consts, cfg, 7)
        assert np.array_equal(cal[0].throughput_mbps, again[0].throughput_mbps)

    def test_single_capacity_corpus(self, consts):
        cfg = RegimeConfig(length_windows=50)
        corpus = build_single_capacity_corpus(60.0, 5, derive_stream(7, 0),
                                              consts, cfg)
        assert len(corpus) == 5
        for tr in corpus:
            assert np.all(tr.capacity_mbps >= 0.8 * 60.0 - 1e-9)
            assert np.all(tr.capacity_mbps <= 1.2 * 60.0 + 1e-9)
        again = build_single_capacity_corpus(60.0, 5, derive_stream(7, 0),
                                             consts, cfg)
        assert np.array_equal(corpus[2].throughput_mbps,
                              again[2].throughput_mbps)

    def test_corpus_capacity_range_checked(self, consts):
        with pytest.raises(ValueError):
            build_single_capacity_corpus(700.0, 2, derive_stream(7, 0),
                                         consts, CFG)
