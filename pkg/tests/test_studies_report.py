"""Study orchestration, pooling consistency, report emission."""

import hashlib
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from tgdin.baselines import train_direct
from tgdin.config import validate_config
from tgdin.metrics import rmse
from tgdin.models import init_params
from tgdin.regimegen import build_single_capacity_corpus, build_test_grid
from tgdin.report import emit_report, read_metrics_csv, records_to_csv
from tgdin.rng import derive_stream
from tgdin.studies import POOLED, run_cross_capacity, run_finetune_study
from tgdin.checkpoint import ModelCheckpoint
from tgdin.training import tgdin_spec, train_tgdin


def tiny_config():
    return validate_config({
        "seed": 29,
        "regimes": {"length_windows": 60, "grid_replicates": 2,
                    "grid_capacities": [20.0, 60.0], "calib_bands": 2},
        "train": {"traces_per_round": 5, "refresh_every_epochs": 5,
                  "max_epochs": 1, "batch_size": 64,
                  "hidden_dims": [8, 8, 8]},
        "baselines": {"max_epochs": 1, "corpus_traces": 4, "gru_hidden": 8,
                      "head_hidden": 8, "attn_proj": 8, "attn_heads": 2,
                      "attn_ff": 8, "finetune_epochs": 1},
    })


@pytest.fixture(scope="module")
def world():
    cfg = tiny_config()
    grid = build_test_grid(cfg.sim, cfg.regimes, cfg.seed)
    tgdin = train_tgdin(cfg)
    corpus = build_single_capacity_corpus(
        60.0, 4, derive_stream(cfg.seed, 5), cfg.sim, cfg.regimes)
    gru = train_direct("gru_lstm", corpus, cfg)
    return cfg, grid, tgdin, gru


def trace_digest(traces):
    h = hashlib.sha256()
    for t in traces:
        h.update(t.throughput_mbps.tobytes())
        h.update(t.buffer_mb.tobytes())
    return h.hexdigest()


class TestCrossCapacity:
    def test_records_cover_grid(self, world):
        cfg, grid, tgdin, gru = world
        records = run_cross_capacity({"tgdin": tgdin, "gru_lstm (C=60)": gru},
                                     grid, cfg.sim)
        caps = {20.0, 60.0}
        for model in ("tgdin", "gru_lstm (C=60)"):
            pooled = [r for r in records
                      if r.model == model and r.scenario == POOLED]
            assert {r.target_capacity_mbps for r in pooled} == caps
            cells = [r for r in records
                     if r.model == model and r.scenario != POOLED]
            assert len(cells) == 2 * 6

    def test_pooled_equals_concatenated_cells(self, world):
        cfg, grid, tgdin, _ = world
        records = run_cross_capacity({"tgdin": tgdin}, grid, cfg.sim)
        for cap in (20.0, 60.0):
            cells = [r for r in records if r.scenario != POOLED
                     and r.target_capacity_mbps == cap]
            pooled = [r for r in records if r.scenario == POOLED
                      and r.target_capacity_mbps == cap][0]
            total_n = sum(r.n_windows for r in cells)
            assert pooled.n_windows == total_n
            weighted = sum(r.n_windows * r.rmse_mbps ** 2 for r in cells) \
                / total_n
            assert pooled.rmse_mbps ** 2 == pytest.approx(weighted, rel=1e-9)

    def test_trace_order_invariance(self, world):
        cfg, grid, tgdin, _ = world
        a = run_cross_capacity({"tgdin": tgdin}, grid, cfg.sim)
        b = run_cross_capacity({"tgdin": tgdin}, list(reversed(grid)), cfg.sim)
        pa = sorted((r.target_capacity_mbps, r.scenario, r.rmse_mbps)
                    for r in a)
        pb = sorted((r.target_capacity_mbps, r.scenario, r.rmse_mbps)
                    for r in b)
        assert pa == pb

    def test_evaluation_is_pure(self, world):
        cfg, grid, tgdin, gru = world
        before_traces = trace_digest(grid)
        before_params = tgdin.params.values.copy()
        run_cross_capacity({"tgdin": tgdin, "gru": gru}, grid, cfg.sim)
        assert trace_digest(grid) == before_traces
        assert np.array_equal(tgdin.params.values, before_params)


class TestFinetuneStudy:
    def test_rows_present(self, world):
        cfg, grid, tgdin, gru = world
        records = run_finetune_study({"gru_lstm": gru}, tgdin, grid,
                                     budgets=(0.05,), modes=("full",),
                                     config=cfg)
        models = {r.model for r in records}
        assert "tgdin (no-adapt)" in models
        assert "gru_lstm (C=60) no-adapt" in models
        # adapted only at the non-source capacity
        adapted = [m for m in models if "+5% full" in m]
        assert adapted
        adapted_caps = {r.target_capacity_mbps for r in records
                        if "+5% full" in r.model}
        assert adapted_caps == {20.0}

    def test_zero_budget_reproduces_no_adapt(self, world):
        cfg, grid, tgdin, gru = world
        records = run_finetune_study({"gru_lstm": gru}, tgdin, grid,
                                     budgets=(0.0,), modes=("full",),
                                     config=cfg)
        base = {(r.target_capacity_mbps, r.scenario): r.rmse_mbps
                for r in records if r.model == "gru_lstm (C=60) no-adapt"}
        adapted = {(r.target_capacity_mbps, r.scenario): r.rmse_mbps
                   for r in records if "+0% full" in r.model}
        for key, v in adapted.items():
            assert v == pytest.approx(base[key], rel=1e-12)


class TestReport:
    def test_emit_deterministic_and_wellformed(self, world, tmp_path):
        cfg, grid, tgdin, gru = world
        records = run_cross_capacity({"tgdin": tgdin, "gru": gru}, grid,
                                     cfg.sim)
        files1 = emit_report({"cross": records}, tmp_path / "r1")
        files2 = emit_report({"cross": records}, tmp_path / "r2")
        by_name1 = {p.name: p.read_bytes() for p in files1}
        by_name2 = {p.name: p.read_bytes() for p in files2}
        assert by_name1.keys() == by_name2.keys()
        for name in by_name1:
            assert by_name1[name] == by_name2[name]
        csv_path = tmp_path / "r1" / "metrics_cross.csv"
        lines = csv_path.read_text().splitlines()
        assert len(lines) == len(records) + 1
        svg = tmp_path / "r1" / "fig_cross_rmse_mbps.svg"
        root = ET.parse(svg).getroot()
        polylines = root.findall(".//{http://www.w3.org/2000/svg}polyline")
        assert len(polylines) == 2      # one per model

    def test_csv_round_trip(self, world, tmp_path):
        cfg, grid, tgdin, _ = world
        records = run_cross_capacity({"tgdin": tgdin}, grid, cfg.sim)
        p = tmp_path / "metrics_x.csv"
        p.write_text(records_to_csv(records))
        back = read_metrics_csv(p)
        assert len(back) == len(records)
        assert back[0].rmse_mbps == records[0].rmse_mbps

    def test_empty_tables_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            emit_report({}, tmp_path)
