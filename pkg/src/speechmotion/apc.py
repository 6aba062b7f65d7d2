"""Streaming speech encoder: a 3-layer unidirectional GRU over log-mel frames.

Each 80-dim frame advances the stack one step; the top layer's hidden state
is the 512-dim deep representation handed to the downstream models. A linear
80-dim head exists for the predictive training objective and is optional at
inference time (loading it is supported, running it is not on the hot path).

With the default sizes the stack holds exactly 4,064,256 parameters:
912,384 for layer 1 (3 gates x (512x80 + 512x512 + 512 + 512)) and
1,575,936 for each of layers 2 and 3.
"""

from __future__ import annotations

import numpy as np

from .errors import DataError, DimensionError
from .nn import GruWeights, gru_cell_step, linear_forward
from .weights import WeightStore

INPUT_DIM = 80
HIDDEN_DIM = 512
NUM_LAYERS = 3


class ApcEncoder:
    """Owns the GRU weights and the running hidden state of each layer."""

    def __init__(
        self,
        layers: list[GruWeights],
        head_w: np.ndarray | None = None,
        head_b: np.ndarray | None = None,
    ):
        if not layers:
            raise DimensionError("encoder needs at least one GRU layer")
        for prev, nxt in zip(layers, layers[1:]):
            if nxt.input_size != prev.hidden_size:
                raise DimensionError(
                    f"layer input {nxt.input_size} does not match previous "
                    f"hidden {prev.hidden_size}"
                )
        if (head_w is None) != (head_b is None):
            raise DimensionError("prediction head needs both weight and bias")
        self.layers = layers
        self.head_w = head_w
        self.head_b = head_b
        self._hidden = [
            np.zeros(l.hidden_size, dtype=np.float32) for l in layers
        ]

    @property
    def input_size(self) -> int:
        return self.layers[0].input_size

    @property
    def output_size(self) -> int:
        return self.layers[-1].hidden_size

    def gru_parameter_count(self) -> int:
        """Parameters in the recurrent stack, excluding the optional head."""
        return sum(l.parameter_count() for l in self.layers)

    def reset(self) -> None:
        for h in self._hidden:
            h.fill(0.0)

    def step(self, frame: np.ndarray) -> np.ndarray:
        """Consume one mel frame, return the top-layer hidden state (copy)."""
        x = np.asarray(frame, dtype=np.float32).reshape(-1)
        if x.shape != (self.input_size,):
            raise DataError(
                f"encoder expects {self.input_size}-dim frames, got {x.shape[0]}"
            )
        for i, layer in enumerate(self.layers):
            self._hidden[i] = gru_cell_step(layer, x, self._hidden[i])
            x = self._hidden[i]
        return x.copy()

    def forward(self, frames: np.ndarray) -> np.ndarray:
        """Encode a (T, 80) sequence from a fresh state; returns (T, 512)."""
        self.reset()
        out = [self.step(f) for f in np.asarray(frames, dtype=np.float32)]
        return np.stack(out) if out else np.zeros((0, self.output_size), np.float32)

    def predict_frame(self, representation: np.ndarray) -> np.ndarray:
        """Apply the training head to one representation (training utility)."""
        if self.head_w is None or self.head_b is None:
            raise DataError("this encoder was built without a prediction head")
        return linear_forward(self.head_w, self.head_b, representation)

    @classmethod
    def random_init(cls, rng: np.random.Generator, with_head: bool = False) -> ApcEncoder:
        """Fresh encoder with scale-controlled random weights."""
        layers = []
        d_in = INPUT_DIM
        for _ in range(NUM_LAYERS):
            layers.append(_random_gru(rng, d_in, HIDDEN_DIM))
            d_in = HIDDEN_DIM
        head_w = head_b = None
        if with_head:
            head_w = _scaled(rng, (INPUT_DIM, HIDDEN_DIM))
            head_b = np.zeros(INPUT_DIM, dtype=np.float32)
        return cls(layers, head_w, head_b)

    @classmethod
    def from_store(cls, store: WeightStore) -> ApcEncoder:
        layers = []
        for i in range(1, NUM_LAYERS + 1):
            prefix = f"apc.gru{i}"
            layers.append(
                GruWeights(
                    w_ih=store.get(f"{prefix}.w_ih"),
                    w_hh=store.get(f"{prefix}.w_hh"),
                    b_ih=store.get(f"{prefix}.b_ih"),
                    b_hh=store.get(f"{prefix}.b_hh"),
                )
            )
        head_w = head_b = None
        if "apc.head.w" in store:
            head_w = store.get("apc.head.w")
            head_b = store.get("apc.head.b")
        return cls(layers, head_w, head_b)

    def to_store(self, store: WeightStore) -> None:
        for i, layer in enumerate(self.layers, start=1):
            prefix = f"apc.gru{i}"
            store.add(f"{prefix}.w_ih", layer.w_ih)
            store.add(f"{prefix}.w_hh", layer.w_hh)
            store.add(f"{prefix}.b_ih", layer.b_ih)
            store.add(f"{prefix}.b_hh", layer.b_hh)
        if self.head_w is not None and self.head_b is not None:
            store.add("apc.head.w", self.head_w)
            store.add("apc.head.b", self.head_b)


def _scaled(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    fan_in = shape[-1]
    return (rng.standard_normal(shape) / np.sqrt(fan_in)).astype(np.float32)


def _random_gru(rng: np.random.Generator, d_in: int, hidden: int) -> GruWeights:
    return GruWeights(
        w_ih=_scaled(rng, (3 * hidden, d_in)),
        w_hh=_scaled(rng, (3 * hidden, hidden)),
        b_ih=np.zeros(3 * hidden, dtype=np.float32),
        b_hh=np.zeros(3 * hidden, dtype=np.float32),
    )


def apc_l1_loss(inputs: np.ndarray, predictions: np.ndarray, shift: int = 3) -> float:
    """Sum of absolute errors between inputs shifted ``shift`` frames ahead
    and the aligned predictions: prediction i is scored against input i+shift.
    """
    x = np.asarray(inputs, dtype=np.float64)
    y = np.asarray(predictions, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 2:
        raise DataError(f"loss inputs must share a (T, D) shape, got {x.shape} vs {y.shape}")
    if shift < 1:
        raise DataError(f"prediction shift must be >= 1, got {shift}")
    t = x.shape[0]
    if t <= shift:
        raise DataError(f"sequence length {t} must exceed prediction shift {shift}")
    return float(np.abs(x[shift:] - y[: t - shift]).sum())
