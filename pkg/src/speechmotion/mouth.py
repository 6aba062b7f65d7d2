"""Mouth displacement predictor: LSTM stack plus MLP decoder, with lookahead.

The model consumes one 512-dim projected representation per video frame. It
deliberately runs ``delay`` frames ahead of its output: the displacement for
video frame t is produced by the network state after consuming frames
0..t+delay, so each prediction has seen ``delay`` future frames of context.
Concretely, the (0-based) k-th call to step() returns None while k < delay
and afterwards returns the displacement for frame k - delay, computed from
the stack's current output. Nothing is buffered beyond the recurrent state;
the lookahead is pure relabeling of when outputs are released.

Architecture: 3 LSTM layers (512 -> 256 -> 256 -> 256) followed by a decoder
MLP 256 -> 256 -> 512 -> 75 (ReLU on the hidden layers, linear output),
reshaped to 25 mouth landmark displacements in millimeters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, DimensionError
from .nn import LstmWeights, linear_forward, lstm_cell_step, relu
from .weights import WeightStore

INPUT_DIM = 512
LSTM_HIDDEN = 256
MLP_DIMS = (256, 512, 75)
NUM_POINTS = 25
DEFAULT_DELAY = 18


@dataclass
class MouthDisplacement:
    delta: np.ndarray   # (25, 3) float32, millimeters
    frame_index: int    # video frame this displacement belongs to


class MouthPredictor:
    """Streaming predictor; owns LSTM state and the call/emission counters."""

    def __init__(
        self,
        lstm_layers: list[LstmWeights],
        mlp: list[tuple[np.ndarray, np.ndarray]],
        delay: int = DEFAULT_DELAY,
    ):
        if delay < 0:
            raise DataError(f"delay must be >= 0, got {delay}")
        if len(mlp) != 3:
            raise DimensionError(f"decoder needs 3 linear layers, got {len(mlp)}")
        if mlp[-1][0].shape[0] != NUM_POINTS * 3:
            raise DimensionError(
                f"decoder must end in {NUM_POINTS * 3} outputs, "
                f"got {mlp[-1][0].shape[0]}"
            )
        self.lstm_layers = lstm_layers
        self.mlp = mlp
        self.delay = delay
        self._h = [np.zeros(l.hidden_size, np.float32) for l in lstm_layers]
        self._c = [np.zeros(l.hidden_size, np.float32) for l in lstm_layers]
        self._calls = 0

    @property
    def input_size(self) -> int:
        return self.lstm_layers[0].input_size

    def reset(self) -> None:
        for h, c in zip(self._h, self._c):
            h.fill(0.0)
            c.fill(0.0)
        self._calls = 0

    def parameter_count(self) -> int:
        total = sum(l.parameter_count() for l in self.lstm_layers)
        total += sum(w.size + b.size for w, b in self.mlp)
        return total

    def step(self, representation: np.ndarray) -> MouthDisplacement | None:
        """Consume one representation; release the displacement that is now
        ``delay`` frames behind the input, or None during warmup."""
        x = np.asarray(representation, dtype=np.float32).reshape(-1)
        if x.shape != (self.input_size,):
            raise DataError(
                f"predictor expects {self.input_size}-dim input, got {x.shape[0]}"
            )
        for i, layer in enumerate(self.lstm_layers):
            self._h[i], self._c[i] = lstm_cell_step(layer, x, self._h[i], self._c[i])
            x = self._h[i]
        call_index = self._calls
        self._calls += 1
        if call_index < self.delay:
            return None
        y = x
        for w, b in self.mlp[:-1]:
            y = relu(linear_forward(w, b, y))
        w, b = self.mlp[-1]
        y = linear_forward(w, b, y)
        return MouthDisplacement(
            delta=y.reshape(NUM_POINTS, 3),
            frame_index=call_index - self.delay,
        )

    @classmethod
    def random_init(
        cls, rng: np.random.Generator, delay: int = DEFAULT_DELAY
    ) -> MouthPredictor:
        layers = []
        d_in = INPUT_DIM
        for _ in range(3):
            layers.append(_random_lstm(rng, d_in, LSTM_HIDDEN))
            d_in = LSTM_HIDDEN
        mlp = []
        for d_out in MLP_DIMS:
            w = (rng.standard_normal((d_out, d_in)) / np.sqrt(d_in)).astype(np.float32)
            mlp.append((w, np.zeros(d_out, dtype=np.float32)))
            d_in = d_out
        return cls(layers, mlp, delay)

    @classmethod
    def from_store(cls, store: WeightStore, delay: int = DEFAULT_DELAY) -> MouthPredictor:
        layers = []
        for i in range(1, 4):
            prefix = f"mouth.lstm{i}"
            layers.append(
                LstmWeights(
                    w_ih=store.get(f"{prefix}.w_ih"),
                    w_hh=store.get(f"{prefix}.w_hh"),
                    b_ih=store.get(f"{prefix}.b_ih"),
                    b_hh=store.get(f"{prefix}.b_hh"),
                )
            )
        mlp = [
            (store.get(f"mouth.mlp{i}.w"), store.get(f"mouth.mlp{i}.b"))
            for i in range(1, 4)
        ]
        return cls(layers, mlp, delay)

    def to_store(self, store: WeightStore) -> None:
        for i, layer in enumerate(self.lstm_layers, start=1):
            prefix = f"mouth.lstm{i}"
            store.add(f"{prefix}.w_ih", layer.w_ih)
            store.add(f"{prefix}.w_hh", layer.w_hh)
            store.add(f"{prefix}.b_ih", layer.b_ih)
            store.add(f"{prefix}.b_hh", layer.b_hh)
        for i, (w, b) in enumerate(self.mlp, start=1):
            store.add(f"mouth.mlp{i}.w", w)
            store.add(f"mouth.mlp{i}.b", b)


def _random_lstm(rng: np.random.Generator, d_in: int, hidden: int) -> LstmWeights:
    def scaled(shape: tuple[int, ...]) -> np.ndarray:
        return (rng.standard_normal(shape) / np.sqrt(shape[-1])).astype(np.float32)

    return LstmWeights(
        w_ih=scaled((4 * hidden, d_in)),
        w_hh=scaled((4 * hidden, hidden)),
        b_ih=np.zeros(4 * hidden, dtype=np.float32),
        b_hh=np.zeros(4 * hidden, dtype=np.float32),
    )


def mouth_l2_loss(predicted: np.ndarray, target: np.ndarray) -> float:
    """Sum over frames and points of squared Euclidean displacement error.

    Inputs are (T, 25, 3) stacks (or anything broadcast-identical in shape).
    """
    p = np.asarray(predicted, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise DataError(f"loss inputs must share a shape, got {p.shape} vs {t.shape}")
    if p.ndim != 3 or p.shape[-1] != 3:
        raise DataError(f"expected (T, P, 3) displacement stacks, got {p.shape}")
    return float(((p - t) ** 2).sum())
