"""Direct-prediction baselines: single-capacity training, target-adapted
fine-tuning, and prediction.

The two families map the same windowed features straight to per-user
throughput with no latent-demand variable and no theory layer, so their
outputs may exceed capacity.  Fine-tuning draws small calibration
budgets from the target-capacity drift scenarios, either updating all
parameters or only the output head.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .checkpoint import ModelCheckpoint
from .config import Config
from .core import Trace
from .features import build_dataset, take
from .losses import direct_loss_graph
from .models import ModelSpec, init_params, model_forward, model_gradient
from .optim import adam_step, init_adam, set_lr
from .rng import derive_stream, mix64
from .training import split_traces

DOM_BASE_INIT = 301
DOM_BASE_SPLIT = 302
DOM_BASE_SHUFFLE = 303
DOM_FT_SHUFFLE = 304
DOM_FT_SAMPLE = 305

FINETUNE_MODES = ("full", "last_layer")

# Stable per-kind stream tags (never use hash(): it is salted per process).
_KIND_TAG = {"tgdin_mlp": 1, "gru_lstm": 2, "attn_direct": 3}


@dataclass(frozen=True)
class FinetuneSpec:
    budget_frac: float
    mode: str
    target_capacity_mbps: float
    source_checkpoint_id: str = ""

    def __post_init__(self) -> None:
        if not 0 <= self.budget_frac < 1:
            raise ValueError("budget_frac must be in [0, 1)")
        if self.mode not in FINETUNE_MODES:
            raise ValueError(f"mode must be one of {FINETUNE_MODES}")


class PlateauScheduler:
    """Halve-on-plateau: after ``patience+1`` consecutive epochs without
    improvement the learning rate is multiplied by ``factor``."""

    def __init__(self, lr: float, factor: float, patience: int):
        self.lr = lr
        self.factor = factor
        self.patience = patience
        self.best = math.inf
        self.bad_epochs = 0

    def step(self, metric: float) -> float:
        if metric < self.best:
            self.best = metric
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs > self.patience:
                self.lr *= self.factor
                self.bad_epochs = 0
        return self.lr


def baseline_spec(kind: str, config: Config) -> ModelSpec:
    bc = config.baselines
    U = config.sim.n_users
    per_step = 4 * U + 1
    if kind == "gru_lstm":
        return ModelSpec(kind="gru_lstm", input_dim=per_step,
                         hidden_dims=(bc.gru_hidden, bc.head_hidden),
                         output_dim=U, k_windows=config.train.k_windows)
    if kind == "attn_direct":
        return ModelSpec(kind="attn_direct", input_dim=per_step,
                         hidden_dims=(bc.attn_proj, bc.attn_ff),
                         output_dim=U, n_heads=bc.attn_heads,
                         k_windows=config.train.k_windows)
    raise ValueError(f"unknown baseline kind {kind!r}")


def clip_grad(grad: np.ndarray, max_norm: float) -> np.ndarray:
    norm = float(np.linalg.norm(grad))
    if norm > max_norm:
        return grad * (max_norm / norm)
    return grad


def _val_loss(pvec, spec, data, lambda_lin) -> float:
    out = model_forward(pvec, spec, data["x"])
    d = np.log1p(out) - np.log1p(data["r"])
    e = out - data["r"]
    lin = np.where(np.abs(e) < 1.0, 0.5 * e * e, np.abs(e) - 0.5)
    return float((d * d).mean() + lambda_lin * lin.mean())


def train_direct(kind: str, corpus: list[Trace], config: Config,
                 history_out: list | None = None) -> ModelCheckpoint:
    """Train one direct predictor on a single-capacity corpus.

    Throughput loss only; ReduceLROnPlateau on validation loss, L2
    gradient clipping, best-validation checkpoint with early stopping.
    """
    if not corpus:
        raise ValueError("empty corpus")
    bc = config.baselines
    tc = config.train
    spec = baseline_spec(kind, config)
    root = mix64(config.seed, _KIND_TAG[kind])

    tr_idx, val_idx, _ = split_traces(
        len(corpus), (1.0 - bc.val_frac, bc.val_frac, 0.0),
        derive_stream(root, DOM_BASE_SPLIT))
    train_data = build_dataset([corpus[i] for i in tr_idx], tc.k_windows)
    val_data = build_dataset([corpus[i] for i in val_idx], tc.k_windows) \
        if len(val_idx) else train_data

    pvec = init_params(spec, derive_stream(root, DOM_BASE_INIT))
    adam = init_adam(pvec.size, bc.lr)
    sched = PlateauScheduler(bc.lr, bc.plateau_factor, bc.plateau_patience)

    best_val = math.inf
    best_params = pvec.copy()
    best_epoch = -1
    n = train_data["x"].shape[0]
    for epoch in range(bc.max_epochs):
        order = derive_stream(root, mix64(DOM_BASE_SHUFFLE, epoch)).gen.permutation(n)
        n_batches = (n + bc.batch_size - 1) // bc.batch_size
        ep_losses = []
        for b in range(n_batches):
            batch = take(train_data, order[b * bc.batch_size:(b + 1) * bc.batch_size])
            loss, grad = model_gradient(
                pvec, spec, batch,
                lambda out, bt: direct_loss_graph(out, bt, tc.lambda_lin))
            grad = clip_grad(grad, bc.grad_clip)
            pvec, adam = adam_step(pvec, grad, adam)
            ep_losses.append(loss)
        val = _val_loss(pvec, spec, val_data, tc.lambda_lin)
        adam = set_lr(adam, sched.step(val))
        if val < best_val:
            best_val = val
            best_params = pvec.copy()
            best_epoch = epoch
        if history_out is not None:
            history_out.append({"epoch": epoch, "train_loss": float(np.mean(ep_losses)),
                                "val_loss": val, "lr": adam.lr})
        if epoch - best_epoch >= bc.patience:
            break

    caps = sorted({float(t.meta.capacity_base_mbps) for t in corpus if t.meta})
    return ModelCheckpoint(
        spec=spec, params=best_params, adam=adam,
        provenance={"model": kind, "seed": config.seed,
                    "source_capacity_mbps": caps[0] if len(caps) == 1 else caps,
                    "selected_epoch": best_epoch,
                    "val_loss": best_val})


def scenario_key(trace: Trace) -> str | None:
    if trace.meta is None or trace.meta.drift is None:
        return None
    d = trace.meta.drift
    return f"{d.family}_u{d.changed_user}"


def head_param_names(spec: ModelSpec) -> tuple[str, ...]:
    """Names of the final output layer's tensors (last-layer fine-tuning)."""
    if spec.kind == "tgdin_mlp":
        return ("w3", "b3")
    return ("head_w1", "head_b1")


def calibration_budget(n_valid_windows: int, budget_frac: float) -> int:
    """Samples drawn per scenario trace: ceil(budget * valid windows)."""
    return math.ceil(budget_frac * n_valid_windows)


def select_calibration(traces: list[Trace], budget_frac: float, k: int,
                       prefix: bool, stream) -> tuple[list, dict[int, np.ndarray]]:
    """Pick calibration windows per scenario trace.

    Returns (list of (trace, t-index array), map trace-list-index ->
    chosen t indices) so evaluation can exclude them later.
    """
    chosen: dict[int, np.ndarray] = {}
    picks = []
    for i, tr in enumerate(traces):
        n_valid = tr.n_windows - (k - 1)
        n_cal = calibration_budget(n_valid, budget_frac)
        if n_cal == 0:
            continue
        valid_t = np.arange(k - 1, tr.n_windows)
        if prefix:
            t_sel = valid_t[:n_cal]
        else:
            t_sel = np.sort(stream.gen.choice(valid_t, size=n_cal, replace=False))
        chosen[i] = t_sel
        picks.append((tr, t_sel))
    return picks, chosen


def finetune_direct(ckpt: ModelCheckpoint, ft: FinetuneSpec,
                    target_traces: list[Trace], config: Config,
                    return_calibration: bool = False):
    """Adapt a trained baseline on a small target-capacity calibration set.

    ``target_traces`` must cover all six drift scenarios; one trace per
    scenario (the first) supplies calibration windows.  ``last_layer``
    mode updates only the output head.  A zero budget returns the
    checkpoint unchanged.
    """
    bc = config.baselines
    k = ckpt.spec.k_windows
    from .regimegen import drift_scenarios
    needed = set(drift_scenarios().keys())
    by_scenario: dict[str, Trace] = {}
    for tr in target_traces:
        key = scenario_key(tr)
        if key is not None and key not in by_scenario:
            by_scenario[key] = tr
    missing = sorted(needed - set(by_scenario))
    if missing:
        raise ValueError(f"target traces missing drift scenarios: {missing}")

    cal_traces = [by_scenario[key] for key in sorted(by_scenario)]
    run_id = mix64(_KIND_TAG[ckpt.spec.kind], ft.mode == "full",
                   int(ft.budget_frac * 10000),
                   int(ft.target_capacity_mbps * 1000))
    stream = derive_stream(config.seed, mix64(DOM_FT_SAMPLE, run_id))
    picks, chosen = select_calibration(cal_traces, ft.budget_frac, k,
                                       bc.calib_prefix, stream)
    calib_windows = {scenario_key(cal_traces[i]): t_sel
                     for i, t_sel in chosen.items()}
    if not picks:
        result = ModelCheckpoint(ckpt.spec, ckpt.params.copy(), ckpt.adam,
                                 dict(ckpt.provenance, finetune=_ft_dict(ft, 0)))
        return (result, calib_windows) if return_calibration else result

    rows_x, rows_r = [], []
    for tr, t_sel in picks:
        data = build_dataset([tr], k)
        pos = t_sel - (k - 1)
        rows_x.append(data["x"][pos])
        rows_r.append(data["r"][pos])
    x = np.concatenate(rows_x)
    r = np.concatenate(rows_r)
    n = x.shape[0]

    perm = derive_stream(config.seed,
                         mix64(DOM_FT_SHUFFLE, run_id, 0)).gen.permutation(n)
    n_val = max(1, int(bc.finetune_val_frac * n)) if n > 1 else 0
    val_idx, tr_idx = perm[:n_val], perm[n_val:]
    if tr_idx.size == 0:
        tr_idx = perm
    train = {"x": x[tr_idx], "r": r[tr_idx]}
    val = {"x": x[val_idx], "r": r[val_idx]} if n_val else train

    pvec = ckpt.params.copy()
    adam = init_adam(pvec.size, bc.finetune_lr)
    mask = np.zeros(pvec.size, dtype=bool)
    if ft.mode == "last_layer":
        for name in head_param_names(ckpt.spec):
            off, shape = pvec.layout[name]
            mask[off:off + int(np.prod(shape))] = True
    else:
        mask[:] = True

    best_val = math.inf
    best_params = pvec.copy()
    best_epoch = -1
    lam = config.train.lambda_lin
    for epoch in range(bc.finetune_epochs):
        order = derive_stream(config.seed,
                              mix64(DOM_FT_SHUFFLE, run_id,
                                    epoch + 1)).gen.permutation(tr_idx.size)
        n_batches = (tr_idx.size + bc.batch_size - 1) // bc.batch_size
        for b in range(n_batches):
            batch = take(train, order[b * bc.batch_size:(b + 1) * bc.batch_size])
            _, grad = model_gradient(
                pvec, ckpt.spec, batch,
                lambda out, bt: direct_loss_graph(out, bt, lam))
            grad = clip_grad(grad, bc.grad_clip)
            grad = np.where(mask, grad, 0.0)
            pvec, adam = adam_step(pvec, grad, adam)
        v = _val_loss(pvec, ckpt.spec, val, lam)
        if v < best_val:
            best_val = v
            best_params = pvec.copy()
            best_epoch = epoch
        if epoch - best_epoch >= bc.finetune_patience:
            break

    result = ModelCheckpoint(
        spec=ckpt.spec, params=best_params, adam=adam,
        provenance=dict(ckpt.provenance, finetune=_ft_dict(ft, n)))
    return (result, calib_windows) if return_calibration else result


def _ft_dict(ft: FinetuneSpec, n_samples: int) -> dict:
    return {"budget_frac": ft.budget_frac, "mode": ft.mode,
            "target_capacity_mbps": ft.target_capacity_mbps,
            "source_checkpoint_id": ft.source_checkpoint_id,
            "n_calibration_samples": n_samples}


def predict_direct(ckpt: ModelCheckpoint, trace: Trace) -> np.ndarray:
    """Direct per-user throughput predictions for t >= K-1."""
    if ckpt.spec.kind not in ("gru_lstm", "attn_direct"):
        raise ValueError(f"not a direct-prediction checkpoint: {ckpt.spec.kind}")
    k = ckpt.spec.k_windows
    if trace.n_windows < k:
        raise ValueError("trace shorter than the history window")
    data = build_dataset([trace], k)
    return model_forward(ckpt.params, ckpt.spec, data["x"])
