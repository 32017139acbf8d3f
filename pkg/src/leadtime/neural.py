"""Minimal differentiable numeric core: recurrent cells, MLP, fusion head, MSE loss.

Everything is float64 numpy. The model family is fixed, so gradients are
hand-derived rather than taped: each forward saves exactly the intermediates
its backward needs, and backwards accumulate into a ParameterStore.

Cell recurrences (per step, elementwise products):

  LSTM   i,f,o = sigmoid of their pre-activation rows, g = tanh of its row,
         pre-activations stacked as ``W x + U h_prev + b`` with row blocks
         packed in gate order [input, forget, output, candidate];
         c = f * c_prev + i * g;  h = o * tanh(c).
  GRU    packed order [update, reset, candidate]:
         z = sigmoid(...), r = sigmoid(...),
         n = tanh(W_n x + U_n (r * h_prev) + b_n);
         h = z * h_prev + (1 - z) * n   (update gate saturated at 1 keeps h).
  RNN    h = tanh(W x + U h_prev + b).

Batched kernels carry a leading batch axis (B, ...); the single-vector API
used by the contracts and tests wraps them with B == 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import GradientGuardError, ShapeError

CELL_GATE_ROWS = {"rnn": 1, "lstm": 4, "gru": 3}


def sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form is overflow-safe for saturated gates
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


@dataclass
class CellState:
    """Recurrent state pair; ``c`` stays zero for GRU/RNN cells."""

    h: np.ndarray
    c: np.ndarray

    @staticmethod
    def zeros(hidden_dim: int) -> "CellState":
        return CellState(h=np.zeros(hidden_dim), c=np.zeros(hidden_dim))


class ParameterStore:
    """Named float64 parameters, each paired with a same-shape gradient accumulator."""

    def __init__(self):
        self._values: dict[str, np.ndarray] = {}
        self._grads: dict[str, np.ndarray] = {}
        self.generation = 0  # bumped by zero_grads; lets tapes detect double accumulation

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self._values:
            raise ShapeError(f"parameter {name!r} already registered")
        arr = np.asarray(value, dtype=np.float64)
        self._values[name] = arr
        self._grads[name] = np.zeros_like(arr)

    def names(self) -> list[str]:
        return list(self._values)

    def value(self, name: str) -> np.ndarray:
        return self._values[name]

    def grad(self, name: str) -> np.ndarray:
        return self._grads[name]

    def zero_grads(self) -> None:
        for g in self._grads.values():
            g[...] = 0.0
        self.generation += 1

    def copy_values(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self._values.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for name, arr in values.items():
            target = self._values[name]
            if target.shape != np.asarray(arr).shape:
                raise ShapeError(f"parameter {name!r}: shape {np.asarray(arr).shape} != {target.shape}")
            target[...] = arr


def _check_cell_shapes(cell_type: str, d_in: int, W: np.ndarray, U: np.ndarray, b: np.ndarray) -> int:
    rows = CELL_GATE_ROWS[cell_type]
    hidden = U.shape[1]
    if U.shape != (rows * hidden, hidden) or W.shape != (rows * hidden, d_in) or b.shape != (rows * hidden,):
        raise ShapeError(
            f"{cell_type} cell: W{W.shape} U{U.shape} b{b.shape} inconsistent with input dim {d_in}")
    return hidden


# ---------------------------------------------------------------------------
# Batched cell kernels (x: (B, d), h/c: (B, hidden))


def lstm_forward_batch(x, h_prev, c_prev, W, U, b):
    hidden = h_prev.shape[1]
    a = x @ W.T + h_prev @ U.T + b
    i = sigmoid(a[:, :hidden])
    f = sigmoid(a[:, hidden:2 * hidden])
    o = sigmoid(a[:, 2 * hidden:3 * hidden])
    g = np.tanh(a[:, 3 * hidden:])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    return h, c, (x, h_prev, c_prev, i, f, o, g, tc)


def lstm_backward_batch(dh, dc, cache, U, dW, dU, db):
    x, h_prev, c_prev, i, f, o, g, tc = cache
    do = dh * tc
    dcc = dc + dh * o * (1.0 - tc * tc)
    da = np.concatenate([
        dcc * g * i * (1.0 - i),
        dcc * c_prev * f * (1.0 - f),
        do * o * (1.0 - o),
        dcc * i * (1.0 - g * g),
    ], axis=1)
    dW += da.T @ x
    dU += da.T @ h_prev
    db += da.sum(axis=0)
    return da @ U, dcc * f


def gru_forward_batch(x, h_prev, c_prev, W, U, b):
    hidden = h_prev.shape[1]
    ax = x @ W.T + b
    z = sigmoid(ax[:, :hidden] + h_prev @ U[:hidden].T)
    r = sigmoid(ax[:, hidden:2 * hidden] + h_prev @ U[hidden:2 * hidden].T)
    rh = r * h_prev
    n = np.tanh(ax[:, 2 * hidden:] + rh @ U[2 * hidden:].T)
    h = z * h_prev + (1.0 - z) * n
    return h, c_prev, (x, h_prev, z, r, n, rh)


def gru_backward_batch(dh, dc, cache, U, dW, dU, db):
    x, h_prev, z, r, n, rh = cache
    hidden = h_prev.shape[1]
    dz = dh * (h_prev - n)
    dan = dh * (1.0 - z) * (1.0 - n * n)
    dh_prev = dh * z
    drh = dan @ U[2 * hidden:]
    dh_prev = dh_prev + drh * r
    daz = dz * z * (1.0 - z)
    dar = drh * h_prev * r * (1.0 - r)
    da = np.concatenate([daz, dar, dan], axis=1)
    dW += da.T @ x
    db += da.sum(axis=0)
    dU[:hidden] += daz.T @ h_prev
    dU[hidden:2 * hidden] += dar.T @ h_prev
    dU[2 * hidden:] += dan.T @ rh
    dh_prev = dh_prev + daz @ U[:hidden] + dar @ U[hidden:2 * hidden]
    return dh_prev, dc


def rnn_forward_batch(x, h_prev, c_prev, W, U, b):
    h = np.tanh(x @ W.T + h_prev @ U.T + b)
    return h, c_prev, (x, h_prev, h)


def rnn_backward_batch(dh, dc, cache, U, dW, dU, db):
    x, h_prev, h = cache
    da = dh * (1.0 - h * h)
    dW += da.T @ x
    dU += da.T @ h_prev
    db += da.sum(axis=0)
    return da @ U, dc


_FORWARD = {"lstm": lstm_forward_batch, "gru": gru_forward_batch, "rnn": rnn_forward_batch}
_BACKWARD = {"lstm": lstm_backward_batch, "gru": gru_backward_batch, "rnn": rnn_backward_batch}


def run_sequence_batch(cell_type: str, xs: np.ndarray, W, U, b, reverse: bool = False):
    """Run one direction over a (B, n, d) batch; returns (h_final, c_final, caches).

    ``reverse=True`` consumes rows n..1; caches are stored in consumption order.
    """
    fwd = _FORWARD[cell_type]
    batch, n_steps, _ = xs.shape
    hidden = U.shape[1]
    h = np.zeros((batch, hidden))
    c = np.zeros((batch, hidden))
    caches = []
    order = range(n_steps - 1, -1, -1) if reverse else range(n_steps)
    for t in order:
        h, c, cache = fwd(xs[:, t, :], h, c, W, U, b)
        caches.append(cache)
    return h, c, caches


def run_sequence_backward_batch(cell_type: str, d_h_final: np.ndarray, caches, U, dW, dU, db):
    """Backpropagate through time from the final consumed state to the first."""
    bwd = _BACKWARD[cell_type]
    dh = d_h_final
    dc = np.zeros_like(d_h_final)
    for cache in reversed(caches):
        dh, dc = bwd(dh, dc, cache, U, dW, dU, db)


# ---------------------------------------------------------------------------
# Single-vector API (contract surface used directly by tests and small tools)


def _single(cell_type: str, x, state: CellState, W, U, b):
    x = np.asarray(x, dtype=np.float64)
    _check_cell_shapes(cell_type, x.shape[0], W, U, b)
    h, c, cache = _FORWARD[cell_type](x[None, :], state.h[None, :], state.c[None, :], W, U, b)
    return CellState(h=h[0], c=c[0]), cache


def lstm_cell_forward(x, state: CellState, W, U, b):
    """One LSTM step; returns (new state, intermediates dict with gates i/f/o and candidate g)."""
    new_state, cache = _single("lstm", x, state, W, U, b)
    _, _, _, i, f, o, g, _ = cache
    return new_state, {"i": i[0], "f": f[0], "o": o[0], "g": g[0]}


def gru_cell_forward(x, state: CellState, W, U, b):
    """One GRU step; intermediates expose update gate z, reset gate r, candidate n."""
    new_state, cache = _single("gru", x, state, W, U, b)
    _, _, z, r, n, _ = cache
    return new_state, {"z": z[0], "r": r[0], "n": n[0]}


def rnn_cell_forward(x, state: CellState, W, U, b):
    new_state, _cache = _single("rnn", x, state, W, U, b)
    return new_state, {}


def run_direction(steps: np.ndarray, W, U, b, cell_type: str = "lstm",
                  direction: str = "forward") -> list[CellState]:
    """Consume a (n, d) step matrix in the given direction from the zero state.

    Returns states in consumption order: ``backward`` consumes rows n..1, and
    its result equals a forward run over the reversed matrix exactly.
    """
    steps = np.asarray(steps, dtype=np.float64)
    if steps.ndim != 2 or steps.shape[0] == 0:
        raise ShapeError("run_direction requires a non-empty (n, d) step matrix")
    if direction not in ("forward", "backward"):
        raise ShapeError(f"unknown direction {direction!r}")
    _check_cell_shapes(cell_type, steps.shape[1], W, U, b)
    fwd = _FORWARD[cell_type]
    hidden = U.shape[1]
    h = np.zeros((1, hidden))
    c = np.zeros((1, hidden))
    states = []
    order = range(len(steps) - 1, -1, -1) if direction == "backward" else range(len(steps))
    for t in order:
        h, c, _ = fwd(steps[t][None, :], h, c, W, U, b)
        states.append(CellState(h=h[0].copy(), c=c[0].copy()))
    return states


# ---------------------------------------------------------------------------
# MLP / fusion head

Layer = tuple[np.ndarray, np.ndarray]  # (W: (out, in), b: (out,))


def mlp_forward_batch(x: np.ndarray, layers: Sequence[Layer], final_relu: bool = False):
    """Affine layers with ReLU between them.

    The static representation branch sets ``final_relu=True`` (its output is a
    rectified representation); the fusion head leaves the last layer affine so
    the scalar prediction is unbounded.
    """
    h = x
    caches = []
    for k, (W, b) in enumerate(layers):
        a = h @ W.T + b
        caches.append((h, a))
        h = a if (k == len(layers) - 1 and not final_relu) else relu(a)
    return h, caches


def mlp_backward_batch(d_out: np.ndarray, layers: Sequence[Layer], caches,
                       grads: Sequence[Layer], final_relu: bool = False) -> np.ndarray:
    d = d_out
    for k in range(len(layers) - 1, -1, -1):
        W, _b = layers[k]
        h_in, a = caches[k]
        if k != len(layers) - 1 or final_relu:
            d = d * (a > 0)
        dW, db = grads[k]
        dW += d.T @ h_in
        db += d.sum(axis=0)
        d = d @ W
    return d


def mlp_forward(x: np.ndarray, layers: Sequence[Layer], final_relu: bool = True) -> np.ndarray:
    """Static-branch MLP: every layer is affine + ReLU (rectified representation out)."""
    x = np.asarray(x, dtype=np.float64)
    if layers and layers[0][0].shape[1] != x.shape[0]:
        raise ShapeError(f"mlp input dim {x.shape[0]} != first layer {layers[0][0].shape}")
    out, _ = mlp_forward_batch(x[None, :], layers, final_relu=final_relu)
    return out[0]


def fusion_forward(h_s: np.ndarray, h_fwd: np.ndarray | None, h_bwd: np.ndarray | None,
                   fc_layers: Sequence[Layer]) -> float:
    """Scalar prediction from the fixed concatenation [h_s | h_fwd | h_bwd]."""
    parts = [p for p in (h_s, h_fwd, h_bwd) if p is not None]
    z = np.concatenate(parts)
    out = mlp_forward(z, fc_layers, final_relu=False)
    if out.shape != (1,):
        raise ShapeError(f"fusion head must end in a single output, got shape {out.shape}")
    return float(out[0])


def mse_loss(pred: np.ndarray, truth: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error and its gradient with respect to the predictions."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.ndim != 1 or pred.size == 0:
        raise ShapeError(f"mse_loss needs matching non-empty 1-D arrays, got {pred.shape} vs {truth.shape}")
    diff = pred - truth
    return float(np.mean(diff * diff)), 2.0 * diff / pred.size


class BackwardGuard:
    """Lets a tape run backward once per gradient generation."""

    def __init__(self, store: ParameterStore):
        self._store = store
        self._last_generation: int | None = None

    def check_and_mark(self) -> None:
        if self._last_generation == self._store.generation:
            raise GradientGuardError(
                "backward called twice without zero_grads; gradients would double-accumulate")
        self._last_generation = self._store.generation
