"""Cross-capacity and fine-tuning studies over the fixed test grid."""

from __future__ import annotations

import logging
from collections import defaultdict

import numpy as np

from .baselines import FinetuneSpec, finetune_direct, predict_direct, scenario_key
from .checkpoint import ModelCheckpoint
from .config import Config
from .core import SimConstants, Trace
from .metrics import MetricRecord, cell_record
from .training import predict_observables

log = logging.getLogger(__name__)

POOLED = "pooled"


def _predict(model: ModelCheckpoint, trace: Trace,
             consts: SimConstants) -> np.ndarray:
    if model.spec.kind == "tgdin_mlp":
        return predict_observables(model, trace, consts).throughput_mbps
    return predict_direct(model, trace)


def _grid_cells(grid: list[Trace]) -> dict[tuple[float, str], list[Trace]]:
    cells: dict[tuple[float, str], list[Trace]] = defaultdict(list)
    for tr in grid:
        if tr.meta is None:
            raise ValueError("grid trace lacks metadata")
        key = (float(tr.meta.capacity_base_mbps), scenario_key(tr) or "none")
        cells[key].append(tr)
    return cells


def evaluate_models(models: dict[str, ModelCheckpoint], grid: list[Trace],
                    consts: SimConstants, source_of: dict[str, str],
                    exclude_windows=None) -> list[MetricRecord]:
    """Per-cell and per-capacity pooled records for each model.

    ``exclude_windows`` maps (model, capacity, scenario, trace seed) ->
    t indices to drop (used to hold calibration windows out).
    """
    cells = _grid_cells(grid)
    capacities = sorted({cap for cap, _ in cells})
    records: list[MetricRecord] = []
    for name, model in models.items():
        k = model.spec.k_windows
        per_cap_pred: dict[float, list] = defaultdict(list)
        per_cap_true: dict[float, list] = defaultdict(list)
        per_cap_series: dict[float, tuple[list, list]] = defaultdict(
            lambda: ([], []))
        for (cap, scenario), traces in sorted(cells.items()):
            preds, trues = [], []
            s_pred, s_true = [], []
            for tr in traces:
                try:
                    p = _predict(model, tr, consts)
                except Exception as exc:   # report the gap, keep evaluating
                    log.warning("cell (%s, %s, %s) failed: %s",
                                name, cap, scenario, exc)
                    continue
                t = tr.throughput_mbps[k - 1:]
                keep = np.ones(p.shape[0], dtype=bool)
                if exclude_windows:
                    drop = exclude_windows.get((name, cap, scenario, tr.seed))
                    if drop is not None:
                        keep[np.asarray(drop) - (k - 1)] = False
                p, t = p[keep], t[keep]
                preds.append(p)
                trues.append(t)
                for u in range(p.shape[1]):
                    s_pred.append(p[:, u])
                    s_true.append(t[:, u])
            if not preds:
                log.warning("missing cell (%s, %s, %s)", name, cap, scenario)
                continue
            pool_p = np.concatenate([p.ravel() for p in preds])
            pool_t = np.concatenate([t.ravel() for t in trues])
            records.append(cell_record(name, source_of.get(name, ""), cap,
                                       scenario, pool_p, pool_t, s_pred, s_true))
            per_cap_pred[cap].append(pool_p)
            per_cap_true[cap].append(pool_t)
            per_cap_series[cap][0].extend(s_pred)
            per_cap_series[cap][1].extend(s_true)
        for cap in capacities:
            if not per_cap_pred[cap]:
                continue
            records.append(cell_record(
                name, source_of.get(name, ""), cap, POOLED,
                np.concatenate(per_cap_pred[cap]),
                np.concatenate(per_cap_true[cap]),
                per_cap_series[cap][0], per_cap_series[cap][1]))
    return records


def run_cross_capacity(models: dict[str, ModelCheckpoint], grid: list[Trace],
                       consts: SimConstants) -> list[MetricRecord]:
    """Evaluate every model on every grid cell without adaptation."""
    source_of = {name: _source_label(m) for name, m in models.items()}
    return evaluate_models(models, grid, consts, source_of)


def _source_label(model: ModelCheckpoint) -> str:
    src = model.provenance.get("source_capacity_mbps")
    if isinstance(src, (int, float)):
        return f"C={src:g}"
    return "randomized"


def run_finetune_study(source_ckpts: dict[str, ModelCheckpoint],
                       tgdin_ckpt: ModelCheckpoint, grid: list[Trace],
                       budgets: tuple[float, ...], modes: tuple[str, ...],
                       config: Config) -> list[MetricRecord]:
    """Adapt each source baseline to each grid capacity and evaluate.

    Calibration windows are excluded from evaluation (configurable).
    The unadapted baselines and the no-adapt demand-inference model are
    included for reference.
    """
    consts = config.sim
    cells = _grid_cells(grid)
    capacities = sorted({cap for cap, _ in cells})
    records: list[MetricRecord] = []

    models: dict[str, ModelCheckpoint] = {"tgdin (no-adapt)": tgdin_ckpt}
    source_of = {"tgdin (no-adapt)": "randomized"}
    for kind, ckpt in source_ckpts.items():
        label = f"{kind} ({_source_label(ckpt)})"
        models[f"{label} no-adapt"] = ckpt
        source_of[f"{label} no-adapt"] = _source_label(ckpt)
    records.extend(evaluate_models(models, grid, consts, source_of))

    exclude = {}
    for kind, ckpt in source_ckpts.items():
        src_cap = ckpt.provenance.get("source_capacity_mbps")
        label = f"{kind} ({_source_label(ckpt)})"
        for cap in capacities:
            if isinstance(src_cap, (int, float)) and abs(cap - src_cap) < 1e-9:
                continue
            target = [tr for tr in grid
                      if abs(float(tr.meta.capacity_base_mbps) - cap) < 1e-9]
            for budget in budgets:
                for mode in modes:
                    ft = FinetuneSpec(budget_frac=budget, mode=mode,
                                      target_capacity_mbps=cap,
                                      source_checkpoint_id=label)
                    adapted, calib_windows = finetune_direct(
                        ckpt, ft, target, config, return_calibration=True)
                    name = f"{label} +{budget:.0%} {mode}"
                    excl = {}
                    if config.eval.exclude_calibration_windows:
                        for tr in target:
                            key = scenario_key(tr)
                            if key in calib_windows and _is_calib_trace(
                                    tr, target, key):
                                excl[(name, cap, key, tr.seed)] = \
                                    calib_windows[key]
                    rec = evaluate_models(
                        {name: adapted},
                        target, consts, {name: _source_label(ckpt)},
                        exclude_windows=excl)
                    records.extend(rec)
                    exclude.update(excl)
    return records


def _is_calib_trace(trace: Trace, target: list[Trace], key: str) -> bool:
    """Calibration uses the first trace of each scenario in grid order."""
    for tr in target:
        if scenario_key(tr) == key:
            return tr.seed == trace.seed
    return False
