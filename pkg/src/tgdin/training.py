"""Demand-inference training loop, plus the inference entry points.

The loop regenerates its trace corpus every ``refresh_every_epochs``
epochs, splits it 80/10/10 at trace level, and trains with user-swap
augmentation.  Checkpoint selection and early stopping follow pooled
throughput RMSE on a fixed stratified calibration set built once at
start, not the per-round validation split.
"""

from __future__ import annotations

import json
import logging
import math
from pathlib import Path

import numpy as np

from .checkpoint import ModelCheckpoint, save_checkpoint
from .config import Config
from .core import SimConstants, Trace
from .features import build_dataset, feature_dim, take, user_swap
from .losses import LossWeights, total_loss_grad
from .models import ModelSpec, init_params, model_forward
from .optim import init_adam, adam_step
from .regimegen import build_calibration_set, build_training_round
from .rng import derive_stream, mix64
from .theory import theory_forward

log = logging.getLogger(__name__)

# Stream-id domains for the training loop.
DOM_INIT = 201
DOM_SPLIT = 202
DOM_SHUFFLE = 203
DOM_SWAP = 204
DOM_CALIB_SET = 205


def tgdin_spec(config: Config) -> ModelSpec:
    U = config.sim.n_users
    return ModelSpec(kind="tgdin_mlp",
                     input_dim=feature_dim(config.train.k_windows, U),
                     hidden_dims=config.train.hidden_dims,
                     output_dim=U,
                     k_windows=config.train.k_windows)


def split_traces(n: int, split: tuple[float, float, float],
                 stream) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Trace-level shuffle split; remainder goes to the training part."""
    perm = stream.gen.permutation(n)
    n_val = int(split[1] * n)
    n_test = int(split[2] * n)
    n_train = n - n_val - n_test
    return (perm[:n_train], perm[n_train:n_train + n_val],
            perm[n_train + n_val:])


def _pooled_rmse_tgdin(pvec, spec, data, consts) -> float:
    d_hat = model_forward(pvec, spec, data["x"])
    out = theory_forward(d_hat, data["capacity"], data["buffer"],
                         consts.dt_s, consts)
    err = out.throughput_mbps - data["r"]
    return float(np.sqrt(np.mean(err * err)))


def train_tgdin(config: Config, out_dir: str | Path | None = None,
                regime_sampler=None) -> ModelCheckpoint:
    """Train the demand-inference model; returns the best checkpoint.

    ``regime_sampler`` overrides per-round regime sampling (used by the
    identifiability study to build restricted corpora).  The run is a
    pure function of the configuration and seed.
    """
    consts = config.sim
    tc = config.train
    weights = LossWeights(tc.lambda_lin, tc.lambda_delay, tc.lambda_loss)
    spec = tgdin_spec(config)
    root = config.seed

    calib_traces = build_calibration_set(consts, config.regimes,
                                         mix64(root, DOM_CALIB_SET))
    calib = build_dataset(calib_traces, tc.k_windows)

    pvec = init_params(spec, derive_stream(root, DOM_INIT))
    adam = init_adam(pvec.size, tc.lr, tc.weight_decay)

    best_rmse = math.inf
    best_params = pvec.copy()
    best_epoch = -1
    history: list[dict] = []
    train_data = val_data = None
    round_id = -1

    for epoch in range(tc.max_epochs):
        if epoch % tc.refresh_every_epochs == 0:
            round_id = epoch // tc.refresh_every_epochs
            corpus = build_training_round(root, round_id, tc.traces_per_round,
                                          consts, config.regimes,
                                          regime_sampler)
            if not corpus:
                raise ValueError("empty training corpus")
            tr_idx, val_idx, _ = split_traces(
                len(corpus), tc.split,
                derive_stream(root, mix64(DOM_SPLIT, round_id)))
            train_data = build_dataset([corpus[i] for i in tr_idx], tc.k_windows)
            val_data = build_dataset([corpus[i] for i in val_idx],
                                     tc.k_windows) if len(val_idx) else None

        n = train_data["x"].shape[0]
        order = derive_stream(root, mix64(DOM_SHUFFLE, epoch)).gen.permutation(n)
        losses = []
        n_batches = (n + tc.batch_size - 1) // tc.batch_size
        for b in range(n_batches):
            idx = order[b * tc.batch_size:(b + 1) * tc.batch_size]
            batch = take(train_data, idx)
            batch = user_swap(batch, derive_stream(root, mix64(DOM_SWAP, epoch, b)),
                              tc.swap_prob, tc.k_windows)
            try:
                loss, _, grad = total_loss_grad(pvec, spec, batch, consts, weights)
            except FloatingPointError as exc:
                raise FloatingPointError(
                    f"{exc} (epoch {epoch}, batch {b}, round {round_id}, "
                    f"seed {root})") from exc
            pvec, adam = adam_step(pvec, grad, adam)
            losses.append(loss)

        calib_rmse = _pooled_rmse_tgdin(pvec, spec, calib, consts)
        val_rmse = (_pooled_rmse_tgdin(pvec, spec, val_data, consts)
                    if val_data is not None else float("nan"))
        if calib_rmse < best_rmse:
            best_rmse = calib_rmse
            best_params = pvec.copy()
            best_epoch = epoch
        record = {"epoch": epoch, "round": round_id,
                  "train_loss": float(np.mean(losses)),
                  "val_rmse": val_rmse, "calib_rmse": calib_rmse,
                  "best_rmse": best_rmse}
        history.append(record)
        log.info("epoch %d round %d loss %.5f calib %.4f best %.4f",
                 epoch, round_id, record["train_loss"], calib_rmse, best_rmse)
        if epoch - best_epoch >= tc.patience:
            break

    ckpt = ModelCheckpoint(
        spec=spec, params=best_params, adam=adam,
        provenance={"model": "tgdin", "seed": root, "epochs_run": len(history),
                    "selected_epoch": best_epoch,
                    "calibration_rmse_mbps": best_rmse})
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(ckpt, out_dir / "tgdin.ckpt")
        with open(out_dir / "train_log.jsonl", "w") as fh:
            for rec in history:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
    ckpt.provenance["history"] = history
    return ckpt


def infer_demand(ckpt: ModelCheckpoint, trace: Trace) -> np.ndarray:
    """Per-window demand estimates for t >= K-1, shape (T-K+1, U)."""
    if ckpt.spec.kind != "tgdin_mlp":
        raise ValueError(f"expected a tgdin_mlp checkpoint, got {ckpt.spec.kind}")
    k = ckpt.spec.k_windows
    if trace.n_windows < k:
        raise ValueError("trace shorter than the history window")
    data = build_dataset([trace], k)
    return model_forward(ckpt.params, ckpt.spec, data["x"])


def predict_observables(ckpt: ModelCheckpoint, trace: Trace,
                        consts: SimConstants):
    """Theory-layer QoS predictions on the trace's observed buffers/capacity.

    Returns the TheoryOutput over valid windows t >= K-1; evaluation
    metrics read ``throughput_mbps`` from it.
    """
    k = ckpt.spec.k_windows
    d_hat = infer_demand(ckpt, trace)
    return theory_forward(d_hat, trace.capacity_mbps[k - 1:],
                          trace.buffer_mb[k - 1:], consts.dt_s, consts)
