"""Feedforward evaluation of an LSTM + dense stack stored as one flat vector.

Parameter layout (canonical, stable across runs and platforms)
---------------------------------------------------------------
Layers are laid out in stack order. Within a layer:

* ``lstm(hidden)``: four gate blocks in the order input ``i``, forget ``f``,
  cell candidate ``g``, output ``o``. Each gate block is
  ``[w_x (in, hidden) | w_h (hidden, hidden) | bias (hidden,)]``,
  matrices flattened row-major.
* ``dense(out)``: ``[w (in, out) | bias (out,)]``.
* ``batchnorm(dim)``: ``[gamma (dim,) | beta (dim,)]``.
* ``dropout``: no parameters.

The recurrence is the standard LSTM with forget gate and no peepholes:
``i, f, o = sigmoid(w [x_t; h] + b)``, ``g = tanh(...)``,
``c <- f * c + i * g``, ``h <- o * tanh(c)``, with ``h_0 = c_0 = 0``.
Dense, batchnorm and dropout layers are applied independently at every
time step, so the stack maps a ``(T, input_dim)`` sequence to a
``(T, output_dim)`` sequence.

Batch-normalization running statistics are auxiliary per-member state
(``NetworkAux``), not part of the flat parameter vector: only gamma and
beta are trainable. Train mode normalizes with current-batch statistics
(population variance) and folds them into the running averages with
momentum 0.9; infer mode normalizes with the running statistics.
Dropout is inverted (train-time scaling by ``1 / (1 - rate)``), so infer
mode is the identity.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

BN_EPS = 1e-5
BN_MOMENTUM = 0.9

GATE_ORDER = ("i", "f", "g", "o")


class NumericalBlowup(RuntimeError):
    """Raised when a layer produces a non-finite activation."""

    def __init__(self, layer_index: int):
        super().__init__(f"numerical blow-up at layer {layer_index}")
        self.layer_index = layer_index


@dataclass(frozen=True)
class Lstm:
    hidden: int

    def __post_init__(self):
        if self.hidden < 1:
            raise ValueError("lstm hidden size must be >= 1")


@dataclass(frozen=True)
class Dense:
    out: int
    activation: str = "linear"

    def __post_init__(self):
        if self.out < 1:
            raise ValueError("dense width must be >= 1")
        if self.activation not in ("tanh", "linear"):
            raise ValueError(f"unknown activation '{self.activation}'")


@dataclass(frozen=True)
class BatchNorm:
    dim: int

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("batchnorm dim must be >= 1")


@dataclass(frozen=True)
class Dropout:
    rate: float

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise ValueError("dropout rate must be in [0, 1)")


LayerSpec = Lstm | Dense | BatchNorm | Dropout


@dataclass(frozen=True)
class NetworkSpec:
    """Layer stack with a deterministic flat parameter layout."""

    input_dim: int
    layers: tuple[LayerSpec, ...]

    def __post_init__(self):
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if not self.layers:
            raise ValueError("at least one layer required")
        object.__setattr__(self, "layers", tuple(self.layers))
        width = self.input_dim
        trainable = False
        for idx, layer in enumerate(self.layers):
            if isinstance(layer, Lstm):
                width = layer.hidden
                trainable = True
            elif isinstance(layer, Dense):
                width = layer.out
                trainable = True
            elif isinstance(layer, BatchNorm):
                if layer.dim != width:
                    raise ValueError(
                        f"batchnorm dim {layer.dim} does not match incoming width "
                        f"{width} at layer {idx}"
                    )
                trainable = True
            elif isinstance(layer, Dropout):
                pass
            else:
                raise ValueError(f"unknown layer kind {layer!r}")
        if not trainable:
            raise ValueError("network has no trainable layers")

    @property
    def output_dim(self) -> int:
        width = self.input_dim
        for layer in self.layers:
            if isinstance(layer, Lstm):
                width = layer.hidden
            elif isinstance(layer, Dense):
                width = layer.out
        return width


@dataclass(frozen=True)
class NetworkTemplate:
    """Default stack: lstm -> dropout -> dense(tanh) -> batchnorm -> dense(linear)."""

    lstm_hidden: int = 30
    dense_hidden: int = 15
    dropout: float = 0.3
    batchnorm: bool = True

    def build(self, input_dim: int, output_dim: int) -> NetworkSpec:
        layers: list[LayerSpec] = [Lstm(self.lstm_hidden)]
        if self.dropout > 0:
            layers.append(Dropout(self.dropout))
        layers.append(Dense(self.dense_hidden, "tanh"))
        if self.batchnorm:
            layers.append(BatchNorm(self.dense_hidden))
        layers.append(Dense(output_dim, "linear"))
        return NetworkSpec(input_dim, tuple(layers))


@dataclass(frozen=True)
class Block:
    name: str
    start: int
    stop: int
    shape: tuple[int, ...]


@dataclass(frozen=True)
class LayerLayout:
    index: int
    blocks: tuple[Block, ...]

    @property
    def start(self) -> int:
        return self.blocks[0].start if self.blocks else 0

    @property
    def stop(self) -> int:
        return self.blocks[-1].stop if self.blocks else 0


def layout(spec: NetworkSpec) -> tuple[LayerLayout, ...]:
    """Offset map of every weight block in the flat parameter vector."""
    layers = []
    offset = 0
    width = spec.input_dim
    for idx, layer in enumerate(spec.layers):
        blocks: list[Block] = []

        def add(name: str, shape: tuple[int, ...]):
            nonlocal offset
            size = math.prod(shape)
            blocks.append(Block(name, offset, offset + size, shape))
            offset += size

        if isinstance(layer, Lstm):
            for gate in GATE_ORDER:
                add(f"w_x_{gate}", (width, layer.hidden))
                add(f"w_h_{gate}", (layer.hidden, layer.hidden))
                add(f"b_{gate}", (layer.hidden,))
            width = layer.hidden
        elif isinstance(layer, Dense):
            add("w", (width, layer.out))
            add("b", (layer.out,))
            width = layer.out
        elif isinstance(layer, BatchNorm):
            add("gamma", (layer.dim,))
            add("beta", (layer.dim,))
        layers.append(LayerLayout(idx, tuple(blocks)))
    return tuple(layers)


def param_count(spec: NetworkSpec) -> int:
    lay = layout(spec)
    return lay[-1].stop if lay else 0


class NetworkAux:
    """Per-member batch-normalization running statistics."""

    def __init__(self, mean: dict[int, np.ndarray], var: dict[int, np.ndarray]):
        self.mean = mean
        self.var = var

    @classmethod
    def initial(cls, spec: NetworkSpec, n_ens: int) -> "NetworkAux":
        mean = {}
        var = {}
        for idx, layer in enumerate(spec.layers):
            if isinstance(layer, BatchNorm):
                mean[idx] = np.zeros((n_ens, layer.dim))
                var[idx] = np.ones((n_ens, layer.dim))
        return cls(mean, var)

    @property
    def n_ens(self) -> int:
        for arr in self.mean.values():
            return arr.shape[0]
        return 0

    def copy(self) -> "NetworkAux":
        return NetworkAux(
            {k: v.copy() for k, v in self.mean.items()},
            {k: v.copy() for k, v in self.var.items()},
        )

    def update_from(self, other: "NetworkAux") -> None:
        for k in self.mean:
            self.mean[k][...] = other.mean[k]
            self.var[k][...] = other.var[k]

    def select(self, sl: slice) -> "NetworkAux":
        return NetworkAux(
            {k: v[sl] for k, v in self.mean.items()},
            {k: v[sl] for k, v in self.var.items()},
        )

    @staticmethod
    def concatenate(parts: list["NetworkAux"]) -> "NetworkAux":
        first = parts[0]
        return NetworkAux(
            {k: np.concatenate([p.mean[k] for p in parts]) for k in first.mean},
            {k: np.concatenate([p.var[k] for p in parts]) for k in first.var},
        )


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form: stable on both tails, one transcendental pass
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _check_finite(arr: np.ndarray, layer_index: int) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericalBlowup(layer_index)


def _gather_lstm(members, blocks, in_dim, hidden):
    n_ens = members.shape[0]
    w_x = np.empty((n_ens, in_dim, 4 * hidden))
    w_h = np.empty((n_ens, hidden, 4 * hidden))
    bias = np.empty((n_ens, 4 * hidden))
    for k in range(4):
        bx, bh, bb = blocks[3 * k], blocks[3 * k + 1], blocks[3 * k + 2]
        cols = slice(k * hidden, (k + 1) * hidden)
        w_x[:, :, cols] = members[:, bx.start:bx.stop].reshape(n_ens, in_dim, hidden)
        w_h[:, :, cols] = members[:, bh.start:bh.stop].reshape(n_ens, hidden, hidden)
        bias[:, cols] = members[:, bb.start:bb.stop]
    return w_x, w_h, bias


def _run_lstm(cur, w_x, w_h, bias):
    # cur: (b, t, w) shared across members, or (n_ens, b, t, w) per member.
    # All four gate nonlinearities collapse into one fused tanh per step:
    # sigmoid(z) = 0.5 * (1 + tanh(0.5 z)), so scaling the i/f/o blocks by
    # one half lets a single np.tanh pass cover the whole gate vector.
    n_ens = w_x.shape[0]
    hidden = w_h.shape[1]
    shared = cur.ndim == 3
    bsz, steps = (cur.shape[0], cur.shape[1]) if shared else (cur.shape[1], cur.shape[2])
    gate_scale = np.full(4 * hidden, 0.5)
    gate_scale[2 * hidden:3 * hidden] = 1.0
    scaled_bias = (bias * gate_scale)[:, None, :]
    w_x = w_x * gate_scale
    w_h = w_h * gate_scale

    h = np.zeros((n_ens, bsz, hidden))
    c = np.zeros((n_ens, bsz, hidden))
    out = np.empty((n_ens, bsz, steps, hidden))
    for t in range(steps):
        x_t = cur[:, t] if shared else cur[:, :, t]
        z = np.matmul(x_t, w_x)
        z += np.matmul(h, w_h)
        z += scaled_bias
        np.tanh(z, out=z)
        i = z[..., :hidden]
        f = z[..., hidden:2 * hidden]
        g = z[..., 2 * hidden:3 * hidden]
        o = z[..., 3 * hidden:]
        c *= 0.5 * (1.0 + f)
        c += 0.5 * (1.0 + i) * g
        h = 0.5 * (1.0 + o) * np.tanh(c)
        out[:, :, t] = h
    return out


def _run_dense(cur, members, blocks, activation):
    n_ens = members.shape[0]
    wb, bb = blocks
    w = members[:, wb.start:wb.stop].reshape((n_ens,) + wb.shape)
    b = members[:, bb.start:bb.stop]
    if cur.ndim == 3:
        bsz, steps, win = cur.shape
        out = np.matmul(cur.reshape(bsz * steps, win), w)
    else:
        _, bsz, steps, win = cur.shape
        out = np.matmul(cur.reshape(n_ens, bsz * steps, win), w)
    out += b[:, None, :]
    out = out.reshape(n_ens, bsz, steps, -1)
    if activation == "tanh":
        out = np.tanh(out)
    return out


def _run_batchnorm(cur, members, blocks, train, aux_mean, aux_var):
    n_ens = members.shape[0]
    gb, bb = blocks
    gamma = members[:, gb.start:gb.stop]
    beta = members[:, bb.start:bb.stop]
    if train:
        # Current-batch statistics over all windows and time steps.
        if cur.ndim == 3:
            mu = cur.mean(axis=(0, 1))
            var = cur.var(axis=(0, 1))
            mu_e = np.broadcast_to(mu, (n_ens, mu.shape[0]))
            var_e = np.broadcast_to(var, (n_ens, var.shape[0]))
        else:
            mu_e = cur.mean(axis=(1, 2))
            var_e = cur.var(axis=(1, 2))
        new_mean = BN_MOMENTUM * aux_mean + (1 - BN_MOMENTUM) * mu_e
        new_var = BN_MOMENTUM * aux_var + (1 - BN_MOMENTUM) * var_e
    else:
        mu_e, var_e = aux_mean, aux_var
        new_mean, new_var = aux_mean, aux_var
    if cur.ndim == 3:
        norm = (cur[None] - mu_e[:, None, None, :]) / np.sqrt(var_e[:, None, None, :] + BN_EPS)
    else:
        norm = (cur - mu_e[:, None, None, :]) / np.sqrt(var_e[:, None, None, :] + BN_EPS)
    out = gamma[:, None, None, :] * norm + beta[:, None, None, :]
    return out, new_mean, new_var


def _draw_masks(spec, rng, n_batch, n_steps):
    """Pre-draw one mask per dropout layer, shared by every member.

    A mask common to the whole ensemble perturbs the network the same way
    for each member, so it does not corrupt the member-to-member
    covariances the update step relies on.
    """
    masks = {}
    width = spec.input_dim
    for li, layer in enumerate(spec.layers):
        if isinstance(layer, Lstm):
            width = layer.hidden
        elif isinstance(layer, Dense):
            width = layer.out
        elif isinstance(layer, Dropout):
            if layer.rate > 0:
                masks[li] = rng.random((n_batch, n_steps, width)) < 1.0 - layer.rate
    return masks


def _run_dropout(cur, rate, mask):
    keep = 1.0 - rate
    if cur.ndim == 4:
        mask = mask[None]
    return np.where(mask, cur, 0.0) / keep


def _run_stack(spec, members, xs, train, masks, aux):
    with np.errstate(over="ignore", invalid="ignore"):
        return _run_stack_unchecked(spec, members, xs, train, masks, aux)


def _run_stack_unchecked(spec, members, xs, train, masks, aux):
    lay = layout(spec)
    n_ens = members.shape[0]
    new_aux = aux.copy()
    cur = xs
    width = spec.input_dim
    for li, layer in enumerate(spec.layers):
        blocks = lay[li].blocks
        if isinstance(layer, Lstm):
            w_x, w_h, bias = _gather_lstm(members, blocks, width, layer.hidden)
            cur = _run_lstm(cur, w_x, w_h, bias)
            width = layer.hidden
        elif isinstance(layer, Dense):
            cur = _run_dense(cur, members, blocks, layer.activation)
            width = layer.out
        elif isinstance(layer, BatchNorm):
            cur, nm, nv = _run_batchnorm(
                cur, members, blocks, train, aux.mean[li], aux.var[li]
            )
            new_aux.mean[li] = np.array(nm)
            new_aux.var[li] = np.array(nv)
        elif isinstance(layer, Dropout):
            if train and layer.rate > 0:
                cur = _run_dropout(cur, layer.rate, masks[li])
        _check_finite(cur, li)
    if cur.ndim == 3:
        cur = np.broadcast_to(cur, (n_ens,) + cur.shape).copy()
    return cur, new_aux


def forward_ensemble(
    spec: NetworkSpec,
    members: np.ndarray,
    xs: np.ndarray,
    mode: str = "infer",
    dropout_seed: int = 0,
    aux: NetworkAux | None = None,
    threads: int = 1,
) -> tuple[np.ndarray, NetworkAux]:
    """Evaluate every member over a batch of sequences.

    Parameters
    ----------
    members : (n_ens, param_count) array
    xs : (n_batch, n_steps, input_dim) array, shared by all members
    mode : "train" or "infer"
    dropout_seed : seed of the per-call dropout masks; masks are shared
        by every member so they perturb the ensemble common-mode
    aux : running batchnorm statistics (fresh ones if omitted)
    threads : worker cap (0 = automatic); members are evaluated
        independently, so the cap never changes results

    Returns
    -------
    (outputs, new_aux) : outputs is (n_ens, n_batch, n_steps, output_dim);
    the input aux is not mutated.
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"unknown mode '{mode}'")
    members = np.asarray(members, dtype=np.float64)
    xs = np.asarray(xs, dtype=np.float64)
    if members.ndim != 2 or members.shape[1] != param_count(spec):
        raise ValueError("parameter matrix does not match the network layout")
    if xs.ndim != 3 or xs.shape[2] != spec.input_dim:
        raise ValueError(
            f"input width {xs.shape[-1] if xs.ndim else '?'} does not match "
            f"spec input_dim {spec.input_dim}"
        )
    if not np.all(np.isfinite(xs)):
        raise ValueError("inputs must be finite")
    n_ens = members.shape[0]
    if aux is None:
        aux = NetworkAux.initial(spec, n_ens)
    train = mode == "train"
    masks = None
    if train:
        rng = np.random.default_rng(dropout_seed)
        masks = _draw_masks(spec, rng, xs.shape[0], xs.shape[1])

    n_chunks = max(1, min(int(threads), n_ens)) if threads else 1
    if n_chunks == 1:
        return _run_stack(spec, members, xs, train, masks, aux)

    # Member chunks are independent computations over identical per-member
    # operations, so the chunk count cannot change any member's result.
    bounds = np.linspace(0, n_ens, n_chunks + 1).astype(int)
    slices = [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    with ThreadPoolExecutor(max_workers=len(slices)) as pool:
        results = list(
            pool.map(lambda sl: _run_stack(spec, members[sl], xs, train, masks,
                                           aux.select(sl)), slices)
        )
    outs = np.concatenate([r[0] for r in results])
    new_aux = NetworkAux.concatenate([r[1] for r in results])
    return outs, new_aux


def forward(
    spec: NetworkSpec,
    params: np.ndarray,
    x: np.ndarray,
    mode: str = "infer",
    dropout_seed=0,
    aux: NetworkAux | None = None,
) -> np.ndarray:
    """Evaluate one parameter vector over one sequence.

    ``x`` is (n_steps, input_dim); the result is (n_steps, output_dim).
    In train mode, dropout masks come from ``dropout_seed`` and, when an
    ``aux`` is supplied, its running batchnorm statistics are updated in
    place. Infer mode never touches ``aux``.
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"unknown mode '{mode}'")
    params = np.asarray(params, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("input sequence must be 2-d (steps, input_dim)")
    members = params.reshape(1, -1)
    use_aux = aux if aux is not None else NetworkAux.initial(spec, 1)
    train = mode == "train"
    if members.shape[1] != param_count(spec):
        raise ValueError("parameter vector does not match the network layout")
    if x.shape[1] != spec.input_dim:
        raise ValueError(
            f"input width {x.shape[1]} does not match spec input_dim {spec.input_dim}"
        )
    if not np.all(np.isfinite(x)):
        raise ValueError("inputs must be finite")
    masks = None
    if train:
        rng = np.random.default_rng(dropout_seed)
        masks = _draw_masks(spec, rng, 1, x.shape[0])
    out, new_aux = _run_stack(spec, members, x[None], train, masks, use_aux)
    if train and aux is not None:
        aux.update_from(new_aux)
    return out[0, 0]


def spec_to_dict(spec: NetworkSpec) -> dict:
    layers = []
    for layer in spec.layers:
        if isinstance(layer, Lstm):
            layers.append({"kind": "lstm", "hidden": layer.hidden})
        elif isinstance(layer, Dense):
            layers.append({"kind": "dense", "out": layer.out, "activation": layer.activation})
        elif isinstance(layer, BatchNorm):
            layers.append({"kind": "batchnorm", "dim": layer.dim})
        elif isinstance(layer, Dropout):
            layers.append({"kind": "dropout", "rate": layer.rate})
    return {"input_dim": spec.input_dim, "layers": layers}


def spec_from_dict(data: dict) -> NetworkSpec:
    layers: list[LayerSpec] = []
    for entry in data["layers"]:
        kind = entry["kind"]
        if kind == "lstm":
            layers.append(Lstm(int(entry["hidden"])))
        elif kind == "dense":
            layers.append(Dense(int(entry["out"]), entry.get("activation", "linear")))
        elif kind == "batchnorm":
            layers.append(BatchNorm(int(entry["dim"])))
        elif kind == "dropout":
            layers.append(Dropout(float(entry["rate"])))
        else:
            raise ValueError(f"unknown layer kind '{kind}'")
    return NetworkSpec(int(data["input_dim"]), tuple(layers))
