"""Training objective: log-space throughput MSE, linear calibration
penalty, and optional delay/loss supervision.

The log-space term dominates; the smooth-L1 linear term (weight
lambda_lin) keeps absolute scale calibrated, and the auxiliary terms
attach to whatever QoS series are enabled.  Smooth-L1 uses a unit
transition: 0.5 e^2 for |e| < 1, |e| - 0.5 beyond.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .core import SimConstants
from .models import ModelSpec, ParamVector, forward_graph


@dataclass(frozen=True)
class LossWeights:
    lambda_lin: float = 0.01
    lambda_delay: float = 0.1
    lambda_loss: float = 0.1


@dataclass(frozen=True)
class LossBreakdown:
    log_thr: float
    lin_thr: float
    delay_term: float
    loss_term: float
    total: float


def smooth_l1_mean(pred: np.ndarray, target: np.ndarray) -> float:
    e = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    out = np.where(np.abs(e) < 1.0, 0.5 * e * e, np.abs(e) - 0.5)
    return float(out.mean())


def log_mse(pred: np.ndarray, target: np.ndarray) -> float:
    d = np.log1p(np.asarray(pred, dtype=np.float64)) \
        - np.log1p(np.asarray(target, dtype=np.float64))
    return float((d * d).mean())


def throughput_loss(r_hat: np.ndarray, r: np.ndarray,
                    lambda_lin: float) -> tuple[float, dict[str, float]]:
    """Log-space MSE plus lambda_lin * smooth-L1, mean-reduced."""
    r_hat = np.asarray(r_hat, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    if r_hat.shape != r.shape:
        raise ValueError("shape mismatch")
    if np.any(r_hat < 0) or np.any(r < 0):
        raise ValueError("throughput values must be nonnegative")
    log_term = log_mse(r_hat, r)
    lin_term = smooth_l1_mean(r_hat, r)
    return log_term + lambda_lin * lin_term, \
        {"log_thr": log_term, "lin_thr": lin_term}


def aux_loss(pred: dict[str, np.ndarray], obs: dict[str, np.ndarray],
             weights: dict[str, float]) -> float:
    """Weighted smooth-L1 over the enabled auxiliary QoS variables."""
    total = 0.0
    for name, w in weights.items():
        if name not in ("delay", "loss"):
            raise ValueError(f"unknown auxiliary metric {name!r}")
        total += w * smooth_l1_mean(pred[name], obs[name])
    return total


def _throughput_terms_var(r_hat: Var, r: np.ndarray) -> tuple[Var, Var]:
    diff = ad.log1p(r_hat) - np.log1p(r)
    log_term = (diff * diff).mean()
    lin_term = ad.smooth_l1(r_hat, r).mean()
    return log_term, lin_term


def tgdin_loss_graph(pvec: ParamVector, spec: ModelSpec,
                     batch: dict[str, np.ndarray], consts: SimConstants,
                     weights: LossWeights):
    """Predictor -> theory layer -> composite loss, on the tape.

    Returns (total Var, LossBreakdown, binder); call ``ad.backward`` on
    the total and read the flat gradient off the binder.
    """
    d_hat, binder = forward_graph(pvec, spec, batch["x"])
    r_hat, tau_hat, loss_hat = ad.theory_node(
        d_hat, batch["capacity"], batch["buffer"], consts.dt_s, consts)
    log_term, lin_term = _throughput_terms_var(r_hat, batch["r"])
    delay_term = ad.smooth_l1(tau_hat, batch["tau"]).mean()
    loss_term = ad.smooth_l1(loss_hat, batch["loss"]).mean()
    total = log_term + weights.lambda_lin * lin_term \
        + weights.lambda_delay * delay_term + weights.lambda_loss * loss_term
    breakdown = LossBreakdown(
        log_thr=float(log_term.value), lin_thr=float(lin_term.value),
        delay_term=float(delay_term.value), loss_term=float(loss_term.value),
        total=float(log_term.value) + weights.lambda_lin * float(lin_term.value)
        + weights.lambda_delay * float(delay_term.value)
        + weights.lambda_loss * float(loss_term.value))
    return total, breakdown, binder


def total_loss(pvec: ParamVector, spec: ModelSpec, batch: dict[str, np.ndarray],
               consts: SimConstants,
               weights: LossWeights) -> tuple[float, LossBreakdown]:
    total, breakdown, _ = tgdin_loss_graph(pvec, spec, batch, consts, weights)
    return float(total.value), breakdown


def total_loss_grad(pvec: ParamVector, spec: ModelSpec,
                    batch: dict[str, np.ndarray], consts: SimConstants,
                    weights: LossWeights):
    """(total, breakdown, flat gradient) for one batch."""
    total, breakdown, binder = tgdin_loss_graph(pvec, spec, batch, consts,
                                                weights)
    if not np.isfinite(breakdown.total):
        raise FloatingPointError("non-finite training loss")
    ad.backward(total)
    return breakdown.total, breakdown, binder.grad_flat()


def direct_loss_graph(out: Var, batch: dict[str, np.ndarray],
                      lambda_lin: float) -> Var:
    """Throughput-only loss for the direct predictors (no theory layer)."""
    log_term, lin_term = _throughput_terms_var(out, batch["r"])
    return log_term + lambda_lin * lin_term
