"""Single-step neural primitives on float32 numpy arrays.

Conventions shared by every cell here:

- Stacked gate weights. A cell with hidden size H stores one (G*H, d_in)
  input matrix and one (G*H, H) hidden matrix, G gates stacked along rows.
  GRU gate order is update, reset, candidate; LSTM gate order is input,
  forget, cell, output.
- Two bias vectors per stack, one applied after the input matvec and one
  after the hidden matvec. The candidate gate needs the split (the reset
  gate scales only the hidden-side half), and the parameter count of the
  speech encoder is defined under this convention.
- All state and outputs are float32. Intermediate sums stay in float32;
  a float64 accumulator kicks in only for dot products longer than 4096
  terms, which none of the shipped models reach.

Cells are pure functions over explicit weight/state values so that a step
can be replayed or tested in isolation; streaming state lives in the model
classes that own these weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError

# Beyond this many terms a float32 dot product accumulates enough rounding
# to matter, so the matvec upcasts. Kept as a named constant for tests.
F64_ACCUM_THRESHOLD = 4096


def matvec(w: np.ndarray, x: np.ndarray) -> np.ndarray:
    """w @ x with shape checking and wide accumulation for long rows."""
    if w.ndim != 2 or x.ndim != 1 or w.shape[1] != x.shape[0]:
        raise DimensionError(f"matvec shapes {w.shape} @ {x.shape} do not align")
    if w.shape[1] > F64_ACCUM_THRESHOLD:
        return (w.astype(np.float64) @ x.astype(np.float64)).astype(np.float32)
    return w @ x


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function, float32 in, float32 out."""
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, np.float32(0.0))


def linear_forward(w: np.ndarray, b: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Affine map w @ x + b."""
    if b.shape != (w.shape[0],):
        raise DimensionError(f"bias shape {b.shape} does not match rows {w.shape[0]}")
    return matvec(w, x) + b


@dataclass
class GruWeights:
    """One GRU layer. Rows stack gates in order: update, reset, candidate."""

    w_ih: np.ndarray  # (3H, d_in)
    w_hh: np.ndarray  # (3H, H)
    b_ih: np.ndarray  # (3H,)
    b_hh: np.ndarray  # (3H,)

    def __post_init__(self) -> None:
        rows = self.w_ih.shape[0]
        h = self.hidden_size
        if rows != 3 * h or self.w_hh.shape != (3 * h, h):
            raise DimensionError(
                f"GRU weight shapes inconsistent: w_ih {self.w_ih.shape}, "
                f"w_hh {self.w_hh.shape}"
            )
        if self.b_ih.shape != (rows,) or self.b_hh.shape != (rows,):
            raise DimensionError("GRU bias shapes do not match gate rows")

    @property
    def hidden_size(self) -> int:
        return self.w_hh.shape[1]

    @property
    def input_size(self) -> int:
        return self.w_ih.shape[1]

    def parameter_count(self) -> int:
        return self.w_ih.size + self.w_hh.size + self.b_ih.size + self.b_hh.size


def gru_cell_step(w: GruWeights, x: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Advance one GRU step, returning the new hidden state.

    update z and reset r use the logistic function; the candidate mixes the
    reset-scaled hidden half before tanh; the new state is a z-weighted blend
    that keeps the previous state where z is 1.
    """
    if x.shape != (w.input_size,):
        raise DimensionError(f"GRU input shape {x.shape}, expected ({w.input_size},)")
    if h.shape != (w.hidden_size,):
        raise DimensionError(f"GRU state shape {h.shape}, expected ({w.hidden_size},)")
    hs = w.hidden_size
    gi = matvec(w.w_ih, x) + w.b_ih
    gh = matvec(w.w_hh, h) + w.b_hh
    z = sigmoid(gi[:hs] + gh[:hs])
    r = sigmoid(gi[hs:2 * hs] + gh[hs:2 * hs])
    n = np.tanh(gi[2 * hs:] + r * gh[2 * hs:])
    return (1.0 - z) * n + z * h


@dataclass
class LstmWeights:
    """One LSTM layer. Rows stack gates in order: input, forget, cell, output."""

    w_ih: np.ndarray  # (4H, d_in)
    w_hh: np.ndarray  # (4H, H)
    b_ih: np.ndarray  # (4H,)
    b_hh: np.ndarray  # (4H,)

    def __post_init__(self) -> None:
        rows = self.w_ih.shape[0]
        h = self.hidden_size
        if rows != 4 * h or self.w_hh.shape != (4 * h, h):
            raise DimensionError(
                f"LSTM weight shapes inconsistent: w_ih {self.w_ih.shape}, "
                f"w_hh {self.w_hh.shape}"
            )
        if self.b_ih.shape != (rows,) or self.b_hh.shape != (rows,):
            raise DimensionError("LSTM bias shapes do not match gate rows")

    @property
    def hidden_size(self) -> int:
        return self.w_hh.shape[1]

    @property
    def input_size(self) -> int:
        return self.w_ih.shape[1]

    def parameter_count(self) -> int:
        return self.w_ih.size + self.w_hh.size + self.b_ih.size + self.b_hh.size


def lstm_cell_step(
    w: LstmWeights, x: np.ndarray, h: np.ndarray, c: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Advance one LSTM step, returning (new hidden, new cell)."""
    if x.shape != (w.input_size,):
        raise DimensionError(f"LSTM input shape {x.shape}, expected ({w.input_size},)")
    if h.shape != (w.hidden_size,) or c.shape != (w.hidden_size,):
        raise DimensionError(
            f"LSTM state shapes {h.shape}/{c.shape}, expected ({w.hidden_size},)"
        )
    hs = w.hidden_size
    g = matvec(w.w_ih, x) + w.b_ih + matvec(w.w_hh, h) + w.b_hh
    i = sigmoid(g[:hs])
    f = sigmoid(g[hs:2 * hs])
    cand = np.tanh(g[2 * hs:3 * hs])
    o = sigmoid(g[3 * hs:])
    c_new = f * c + i * cand
    h_new = o * np.tanh(c_new)
    return h_new, c_new


class RingBuffer:
    """Fixed-capacity history of float32 vectors for dilated convolutions.

    at_back(0) is the most recent push; at_back(k) looks k steps into the
    past and returns zeros for steps before the stream started, so a causal
    layer sees zero padding without special-casing warmup.
    """

    def __init__(self, capacity: int, dim: int):
        if capacity < 1:
            raise DimensionError(f"ring capacity must be >= 1, got {capacity}")
        self._buf = np.zeros((capacity, dim), dtype=np.float32)
        self._next = 0
        self._count = 0

    @property
    def capacity(self) -> int:
        return self._buf.shape[0]

    def push(self, x: np.ndarray) -> None:
        if x.shape != (self._buf.shape[1],):
            raise DimensionError(
                f"ring push shape {x.shape}, expected ({self._buf.shape[1]},)"
            )
        self._buf[self._next] = x
        self._next = (self._next + 1) % self.capacity
        self._count += 1

    def at_back(self, k: int) -> np.ndarray:
        if not 0 <= k < self.capacity:
            raise DimensionError(f"lookback {k} outside ring capacity {self.capacity}")
        if k >= self._count:
            return np.zeros(self._buf.shape[1], dtype=np.float32)
        return self._buf[(self._next - 1 - k) % self.capacity]

    def reset(self) -> None:
        self._buf.fill(0.0)
        self._next = 0
        self._count = 0


@dataclass
class GatedConvWeights:
    """One causal dilated layer: gated unit plus residual and skip projections.

    The kernel has width 2 (current step and one step ``dilation`` back).
    Filter and gate branches each see the current input, the delayed input,
    and a 1x1 projection of the conditioning vector. The gated output feeds
    a residual projection added back onto the input and a skip projection
    collected by the post-net. Gated branches carry no biases.
    """

    filter_curr: np.ndarray  # (C, C_in)
    filter_prev: np.ndarray  # (C, C_in)
    filter_cond: np.ndarray  # (C, d_cond)
    gate_curr: np.ndarray    # (C, C_in)
    gate_prev: np.ndarray    # (C, C_in)
    gate_cond: np.ndarray    # (C, d_cond)
    res_w: np.ndarray        # (C_in, C)
    skip_w: np.ndarray       # (C_skip, C)

    def parameter_count(self) -> int:
        return sum(
            a.size
            for a in (
                self.filter_curr, self.filter_prev, self.filter_cond,
                self.gate_curr, self.gate_prev, self.gate_cond,
                self.res_w, self.skip_w,
            )
        )


def gated_conv_step(
    w: GatedConvWeights,
    history: RingBuffer,
    cond: np.ndarray,
    dilation: int,
) -> tuple[np.ndarray, np.ndarray]:
    """One causal step of a gated dilated layer.

    ``history`` must already contain the current input at at_back(0); the
    delayed tap reads at_back(dilation). Returns (residual output, skip
    output) where the residual output is current input + projected gate.
    """
    if dilation < 1:
        raise DimensionError(f"dilation must be >= 1, got {dilation}")
    x_curr = history.at_back(0)
    x_prev = history.at_back(dilation)
    f = matvec(w.filter_curr, x_curr) + matvec(w.filter_prev, x_prev)
    f += matvec(w.filter_cond, cond)
    g = matvec(w.gate_curr, x_curr) + matvec(w.gate_prev, x_prev)
    g += matvec(w.gate_cond, cond)
    z = np.tanh(f) * sigmoid(g)
    return x_curr + matvec(w.res_w, z), matvec(w.skip_w, z)
