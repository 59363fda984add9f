"""Model families: demand-inference MLP and the two direct predictors.

All models consume the flat windowed feature vector (see
:mod:`tgdin.features`) and emit one nonnegative rate per user through a
final softplus.  Parameters live in a single flat float64 vector with a
named layout; forwards build tape graphs so gradients come from
:mod:`tgdin.autodiff`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .rng import RngStream

MODEL_KINDS = ("tgdin_mlp", "gru_lstm", "attn_direct")


@dataclass(frozen=True)
class ModelSpec:
    """Architecture descriptor.

    ``input_dim`` is the full flat feature length for ``tgdin_mlp`` and
    the per-window feature count for the sequence models, which view the
    flat vector as ``k_windows`` steps.
    """

    kind: str
    input_dim: int
    hidden_dims: tuple[int, ...]
    output_dim: int = 2
    n_heads: int = 0
    k_windows: int = 5
    skip_encoder: bool = False   # attn only: test configuration without LSTM

    def __post_init__(self) -> None:
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("dims must be >= 1")
        if any(h < 1 for h in self.hidden_dims):
            raise ValueError("hidden dims must be >= 1")
        if self.kind == "tgdin_mlp" and len(self.hidden_dims) != 3:
            raise ValueError("tgdin_mlp takes exactly three hidden layers")
        if self.kind == "gru_lstm" and len(self.hidden_dims) != 2:
            raise ValueError("gru_lstm takes (rnn_hidden, head_hidden)")
        if self.kind == "attn_direct":
            if len(self.hidden_dims) != 2:
                raise ValueError("attn_direct takes (proj_dim, ff_hidden)")
            if self.n_heads < 1:
                raise ValueError("attn_direct needs n_heads >= 1")
            if self.hidden_dims[0] % self.n_heads != 0:
                raise ValueError("proj_dim must divide evenly across heads")
        if self.kind != "tgdin_mlp" and self.k_windows < 1:
            raise ValueError("k_windows must be >= 1")


def param_shapes(spec: ModelSpec) -> dict[str, tuple[int, ...]]:
    """Ordered name -> shape map defining the flat layout."""
    shapes: dict[str, tuple[int, ...]] = {}
    if spec.kind == "tgdin_mlp":
        h1, h2, h3 = spec.hidden_dims
        dims = [spec.input_dim, h1, h2, h3, spec.output_dim]
        for i in range(4):
            shapes[f"w{i}"] = (dims[i], dims[i + 1])
            shapes[f"b{i}"] = (dims[i + 1],)
    elif spec.kind == "gru_lstm":
        H, head = spec.hidden_dims
        shapes["gru_wi"] = (spec.input_dim, 3 * H)
        shapes["gru_wh"] = (H, 3 * H)
        shapes["gru_bi"] = (3 * H,)
        shapes["gru_bh"] = (3 * H,)
        shapes["lstm_wi"] = (H, 4 * H)
        shapes["lstm_wh"] = (H, 4 * H)
        shapes["lstm_b"] = (4 * H,)
        shapes["head_w0"] = (H, head)
        shapes["head_b0"] = (head,)
        shapes["head_w1"] = (head, spec.output_dim)
        shapes["head_b1"] = (spec.output_dim,)
    else:  # attn_direct
        P, ff = spec.hidden_dims
        shapes["proj_w"] = (spec.input_dim, P)
        shapes["proj_b"] = (P,)
        shapes["lstm_wi"] = (P, 4 * P)
        shapes["lstm_wh"] = (P, 4 * P)
        shapes["lstm_b"] = (4 * P,)
        for name in ("wq", "wk", "wv", "wo"):
            shapes[name] = (P, P)
            shapes[f"b{name[1]}"] = (P,)
        shapes["head_w0"] = (P, ff)
        shapes["head_b0"] = (ff,)
        shapes["head_w1"] = (ff, spec.output_dim)
        shapes["head_b1"] = (spec.output_dim,)
    return shapes


@dataclass
class ParamVector:
    """Flat parameter array plus the layout that carves it into tensors."""

    values: np.ndarray
    layout: dict[str, tuple[int, tuple[int, ...]]]

    @property
    def size(self) -> int:
        return self.values.size

    def tensor(self, name: str) -> np.ndarray:
        off, shape = self.layout[name]
        return self.values[off:off + int(np.prod(shape))].reshape(shape)

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.layout)


def build_layout(spec: ModelSpec) -> dict[str, tuple[int, tuple[int, ...]]]:
    layout = {}
    off = 0
    for name, shape in param_shapes(spec).items():
        layout[name] = (off, shape)
        off += int(np.prod(shape))
    return layout


def init_params(spec: ModelSpec, stream: RngStream) -> ParamVector:
    """Fan-in-scaled uniform init; recurrent tensors use 1/sqrt(H) bounds.

    Biases start at zero except the LSTM forget gate, which starts at 1.
    """
    layout = build_layout(spec)
    total = sum(int(np.prod(shape)) for _, shape in layout.values())
    values = np.zeros(total, dtype=np.float64)
    gen = stream.gen
    for name, (off, shape) in layout.items():
        size = int(np.prod(shape))
        if name.startswith("b") or name.endswith("_b") or "_b" in name:
            continue
        if len(shape) == 2:
            fan_in = shape[0]
            if name in ("gru_wh", "lstm_wh"):
                bound = 1.0 / np.sqrt(fan_in)
            else:
                bound = np.sqrt(6.0 / fan_in)
            values[off:off + size] = gen.uniform(-bound, bound, size)
    pvec = ParamVector(values, layout)
    if spec.kind in ("gru_lstm", "attn_direct"):
        H = spec.hidden_dims[0] if spec.kind == "attn_direct" else spec.hidden_dims[0]
        b = pvec.tensor("lstm_b")
        b[H:2 * H] = 1.0   # forget gate bias
    return pvec


class _Binder:
    """Creates leaf Vars for each tensor and gathers their grads back."""

    def __init__(self, pvec: ParamVector):
        self.pvec = pvec
        self.vars: dict[str, Var] = {
            name: Var(pvec.tensor(name)) for name in pvec.layout
        }

    def __getitem__(self, name: str) -> Var:
        return self.vars[name]

    def grad_flat(self) -> np.ndarray:
        g = np.zeros_like(self.pvec.values)
        for name, (off, shape) in self.pvec.layout.items():
            vg = self.vars[name].grad
            if vg is not None:
                g[off:off + int(np.prod(shape))] = vg.ravel()
        return g


def _check_input(spec: ModelSpec, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    flat_dim = spec.input_dim if spec.kind == "tgdin_mlp" \
        else spec.k_windows * spec.input_dim
    if x.ndim != 2 or x.shape[1] != flat_dim:
        raise ValueError(
            f"expected features of length {flat_dim}, got shape {x.shape}")
    return x


def _mlp_graph(p: _Binder, spec: ModelSpec, x: np.ndarray) -> Var:
    h = Var(x)
    for i in range(3):
        h = ad.relu(h @ p[f"w{i}"] + p[f"b{i}"])
    return ad.softplus(h @ p["w3"] + p["b3"])


def _gru_lstm_graph(p: _Binder, spec: ModelSpec, x: np.ndarray) -> Var:
    N = x.shape[0]
    K, F = spec.k_windows, spec.input_dim
    H = spec.hidden_dims[0]
    seq = Var(x.reshape(N, K, F))
    h = Var(np.zeros((N, H)))
    gru_states = []
    for t in range(K):
        xt = ad.select(seq, 1, t)
        gi = xt @ p["gru_wi"] + p["gru_bi"]
        gh = h @ p["gru_wh"] + p["gru_bh"]
        r = ad.sigmoid(_part(gi, 0, H) + _part(gh, 0, H))
        z = ad.sigmoid(_part(gi, 1, H) + _part(gh, 1, H))
        n = ad.tanh(_part(gi, 2, H) + r * _part(gh, 2, H))
        h = n + z * (h - n)
        gru_states.append(h)
    h2 = Var(np.zeros((N, H)))
    c = Var(np.zeros((N, H)))
    for t in range(K):
        h2, c = _lstm_step(p, "lstm", gru_states[t], h2, c, H)
    hidden = ad.relu(h2 @ p["head_w0"] + p["head_b0"])
    return ad.softplus(hidden @ p["head_w1"] + p["head_b1"])


def _lstm_step(p: _Binder, prefix: str, xt: Var, h: Var, c: Var, H: int):
    g = xt @ p[f"{prefix}_wi"] + h @ p[f"{prefix}_wh"] + p[f"{prefix}_b"]
    i = ad.sigmoid(_part(g, 0, H))
    f = ad.sigmoid(_part(g, 1, H))
    gg = ad.tanh(_part(g, 2, H))
    o = ad.sigmoid(_part(g, 3, H))
    c_new = f * c + i * gg
    return o * ad.tanh(c_new), c_new


def _part(v: Var, idx: int, H: int) -> Var:
    """Slice gate block idx of width H from the last axis."""
    N = v.shape[0]
    n_blocks = v.shape[1] // H
    return ad.select(v.reshape(N, n_blocks, H), 1, idx)


def _attn_graph(p: _Binder, spec: ModelSpec, x: np.ndarray,
                collect: dict | None = None) -> Var:
    N = x.shape[0]
    K, F = spec.k_windows, spec.input_dim
    P, ff = spec.hidden_dims
    heads = spec.n_heads
    dh = P // heads

    flat = Var(x.reshape(N * K, F))
    proj = (flat @ p["proj_w"] + p["proj_b"]).reshape(N, K, P)

    if spec.skip_encoder:
        enc = proj
    else:
        h = Var(np.zeros((N, P)))
        c = Var(np.zeros((N, P)))
        states = []
        for t in range(K):
            h, c = _lstm_step(p, "lstm", ad.select(proj, 1, t), h, c, P)
            states.append(h)
        enc = ad.stack(states, axis=1)

    def heads_view(w, b):
        y = (enc.reshape(N * K, P) @ p[w] + p[b]).reshape(N, K, heads, dh)
        return y.transpose((0, 2, 1, 3)).reshape(N * heads, K, dh)

    q = heads_view("wq", "bq")
    k = heads_view("wk", "bk")
    v = heads_view("wv", "bv")
    scores = (q @ k.transpose((0, 2, 1))) * (1.0 / np.sqrt(dh))
    attn = ad.softmax(scores, axis=-1)
    if collect is not None:
        collect["attn_weights"] = attn.value.reshape(N, heads, K, K)
    ctx = (attn @ v).reshape(N, heads, K, dh).transpose((0, 2, 1, 3))
    out = ctx.reshape(N * K, P) @ p["wo"] + p["bo"]
    pooled = out.reshape(N, K, P).sum(axis=1) * (1.0 / K)
    hidden = ad.relu(pooled @ p["head_w0"] + p["head_b0"])
    return ad.softplus(hidden @ p["head_w1"] + p["head_b1"])


def forward_graph(pvec: ParamVector, spec: ModelSpec, x: np.ndarray,
                  collect: dict | None = None) -> tuple[Var, _Binder]:
    """Build the tape graph for a batch; returns (output Var, binder)."""
    x = _check_input(spec, x)
    binder = _Binder(pvec)
    if spec.kind == "tgdin_mlp":
        out = _mlp_graph(binder, spec, x)
    elif spec.kind == "gru_lstm":
        out = _gru_lstm_graph(binder, spec, x)
    else:
        out = _attn_graph(binder, spec, x, collect)
    return out, binder


def model_forward(pvec: ParamVector, spec: ModelSpec, x: np.ndarray) -> np.ndarray:
    """Plain forward pass: features -> per-user nonnegative rates."""
    squeeze = np.asarray(x).ndim == 1
    out, _ = forward_graph(pvec, spec, x)
    return out.value[0] if squeeze else out.value


def mlp_forward(pvec: ParamVector, spec: ModelSpec, x: np.ndarray) -> np.ndarray:
    """Demand estimate from the three-hidden-layer ReLU MLP head."""
    if spec.kind != "tgdin_mlp":
        raise ValueError("mlp_forward expects a tgdin_mlp spec")
    return model_forward(pvec, spec, x)


def recurrent_forward(pvec: ParamVector, spec: ModelSpec, x_seq: np.ndarray) -> np.ndarray:
    """Direct throughput prediction from the stacked GRU+LSTM model."""
    if spec.kind != "gru_lstm":
        raise ValueError("recurrent_forward expects a gru_lstm spec")
    return model_forward(pvec, spec, x_seq)


def attn_forward(pvec: ParamVector, spec: ModelSpec, x_seq: np.ndarray,
                 return_attn: bool = False):
    """Direct throughput prediction from the attention model."""
    if spec.kind != "attn_direct":
        raise ValueError("attn_forward expects an attn_direct spec")
    squeeze = np.asarray(x_seq).ndim == 1
    collect: dict = {}
    out, _ = forward_graph(pvec, spec, x_seq, collect)
    val = out.value[0] if squeeze else out.value
    if return_attn:
        return val, collect["attn_weights"]
    return val


def model_gradient(pvec: ParamVector, spec: ModelSpec, batch,
                   loss_fn) -> tuple[float, np.ndarray]:
    """Reverse-mode gradient of ``loss_fn(outputs, batch)`` w.r.t. params.

    ``loss_fn`` must compose registered tape primitives and return a
    scalar Var.  Raises on non-finite loss.
    """
    out, binder = forward_graph(pvec, spec, batch["x"])
    loss = loss_fn(out, batch)
    loss_val = float(loss.value)
    if not np.isfinite(loss_val):
        raise FloatingPointError(f"non-finite loss on batch: {loss_val}")
    ad.backward(loss)
    return loss_val, binder.grad_flat()
