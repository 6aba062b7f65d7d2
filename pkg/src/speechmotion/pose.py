"""Probabilistic head pose generator: gated dilated convolutions over the
pose history, conditioned on the current speech representation.

The pose state per frame is a 12-vector: 3 rotation angles (radians), 3
translation components (millimeters), and their 6 frame-to-frame velocities.
The network is autoregressive with causal kernel width 2 per layer and
dilations 1, 2, 4, ..., 64 repeated over 2 blocks, so the prediction for
frame t depends on exactly the previous 255 pose vectors (zeros before the
stream starts) and on the conditioning vector of frame t.

Each step yields an independent Gaussian over the 12 dims parameterized as
(mu, s) where s is the negative log standard deviation: sigma = exp(-s).
Sampling draws x = mu + exp(-s) * eps with eps from the caller's Generator
(one standard_normal(12) call per frame). Only the 6 pose dims of the draw
are kept; feedback velocity is recomputed as p_t - p_{t-1} so the history
stays kinematically consistent. force_pose() drives the same feedback path
with an externally supplied pose (ground-truth playback, tests).
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import DataError, DimensionError
from .nn import (
    GatedConvWeights,
    RingBuffer,
    gated_conv_step,
    linear_forward,
    relu,
)
from .scene import HeadPose
from .weights import WeightStore

POSE_DIMS = 6
STATE_DIMS = 12
COND_DIM = 512
RESIDUAL_CHANNELS = 64
SKIP_CHANNELS = 128
DILATIONS = (1, 2, 4, 8, 16, 32, 64) * 2
RECEPTIVE_FIELD = 1 + sum(DILATIONS)  # 255 previous frames
HALF_LOG_TWO_PI = 0.5 * math.log(2.0 * math.pi)


@dataclass
class PoseDistribution:
    mu: np.ndarray             # (12,) float32
    neg_log_sigma: np.ndarray  # (12,) float32; sigma = exp(-neg_log_sigma)


class PoseGenerator:
    """Streaming generator owning conv rings and the pose feedback history."""

    def __init__(
        self,
        input_w: np.ndarray,   # (C_r, 12)
        input_b: np.ndarray,   # (C_r,)
        cond_w: np.ndarray,    # (C_r, cond_dim)
        layers: list[GatedConvWeights],
        post1_w: np.ndarray, post1_b: np.ndarray,   # (C_s, C_s)
        post2_w: np.ndarray, post2_b: np.ndarray,   # (C_s, C_s)
        mu_w: np.ndarray, mu_b: np.ndarray,         # (12, C_s)
        s_w: np.ndarray, s_b: np.ndarray,           # (12, C_s)
        dilations: tuple[int, ...] = DILATIONS,
    ):
        if len(layers) != len(dilations):
            raise DimensionError(
                f"pose net with dilations {dilations} needs {len(dilations)} "
                f"layers, got {len(layers)}"
            )
        self.dilations = tuple(dilations)
        self.receptive_field = 1 + sum(self.dilations)
        self.input_w = input_w
        self.input_b = input_b
        self.cond_w = cond_w
        self.layers = layers
        self.post1_w, self.post1_b = post1_w, post1_b
        self.post2_w, self.post2_b = post2_w, post2_b
        self.mu_w, self.mu_b = mu_w, mu_b
        self.s_w, self.s_b = s_w, s_b
        self._channels = input_w.shape[0]
        self._cond_dim = cond_w.shape[1]
        self._rings = [
            RingBuffer(capacity=d + 1, dim=self._channels) for d in self.dilations
        ]
        self._prev_pose = np.zeros(POSE_DIMS, dtype=np.float32)
        self._prev_state = np.zeros(STATE_DIMS, dtype=np.float32)
        self._history: deque[np.ndarray] = deque(maxlen=self.receptive_field)
        self._steps = 0

    @property
    def cond_dim(self) -> int:
        return self._cond_dim

    @property
    def steps(self) -> int:
        return self._steps

    def history_states(self) -> list[np.ndarray]:
        """The last min(steps, receptive_field) accepted states, oldest first."""
        return [s.copy() for s in self._history]

    def reset(self) -> None:
        for ring in self._rings:
            ring.reset()
        self._prev_pose.fill(0.0)
        self._prev_state.fill(0.0)
        self._history.clear()
        self._steps = 0

    def parameter_count(self) -> int:
        total = self.input_w.size + self.input_b.size + self.cond_w.size
        total += sum(l.parameter_count() for l in self.layers)
        for arr in (
            self.post1_w, self.post1_b, self.post2_w, self.post2_b,
            self.mu_w, self.mu_b, self.s_w, self.s_b,
        ):
            total += arr.size
        return total

    def step(self, condition: np.ndarray) -> PoseDistribution:
        """Advance one frame: consume the conditioning vector, return the
        Gaussian for this frame's pose state. The caller must then feed back
        a pose via sample_pose() or force_pose() before the next step."""
        cond = np.asarray(condition, dtype=np.float32).reshape(-1)
        if cond.shape != (self._cond_dim,):
            raise DataError(
                f"pose net expects {self._cond_dim}-dim conditioning, "
                f"got {cond.shape[0]}"
            )
        x = linear_forward(self.input_w, self.input_b, self._prev_state)
        x = x + self.cond_w @ cond
        skip_total = np.zeros(self.post1_w.shape[1], dtype=np.float32)
        for ring, w, dilation in zip(self._rings, self.layers, self.dilations):
            ring.push(x)
            x, skip = gated_conv_step(w, ring, cond, dilation)
            skip_total += skip
        y = linear_forward(self.post1_w, self.post1_b, relu(skip_total))
        y = linear_forward(self.post2_w, self.post2_b, relu(y))
        return PoseDistribution(
            mu=linear_forward(self.mu_w, self.mu_b, y),
            neg_log_sigma=linear_forward(self.s_w, self.s_b, y),
        )

    def sample_pose(
        self, dist: PoseDistribution, rng: np.random.Generator
    ) -> tuple[np.ndarray, HeadPose]:
        """Draw a pose state from the distribution and feed it back.

        Returns (accepted 12-dim state, HeadPose view of its pose half).
        The sampled velocity half is discarded; the fed-back velocity is
        recomputed from consecutive accepted poses.
        """
        draw = sample_state(dist, rng)
        return self._feed(draw[:POSE_DIMS].astype(np.float32))

    def force_pose(self, pose: np.ndarray) -> tuple[np.ndarray, HeadPose]:
        """Feed back an externally chosen 6-dim pose (playback mode).

        Velocity is recomputed against the previously accepted pose, same as
        the sampling path. The returned HeadPose carries the caller's values
        unrounded; only the network history entry is cast to float32.
        """
        p64 = np.asarray(pose, dtype=np.float64).reshape(-1)
        if p64.shape != (POSE_DIMS,):
            raise DataError(f"pose must have {POSE_DIMS} dims, got {p64.shape[0]}")
        state, _ = self._feed(p64.astype(np.float32))
        return state, HeadPose(rotation=p64[:3].copy(), translation=p64[3:].copy())

    def force_state(self, state: np.ndarray) -> tuple[np.ndarray, HeadPose]:
        """Feed back a complete 12-dim pose state verbatim.

        Unlike force_pose, the velocity half is taken as given rather than
        recomputed, so a substituted history entry perturbs exactly one
        network input position. This is the hook for receptive-field probes
        and for replaying recorded pose features.
        """
        s = np.asarray(state, dtype=np.float32).reshape(-1)
        if s.shape != (STATE_DIMS,):
            raise DataError(f"pose state must have {STATE_DIMS} dims, got {s.shape[0]}")
        return self._commit(s)

    def _feed(self, pose: np.ndarray) -> tuple[np.ndarray, HeadPose]:
        velocity = pose - self._prev_pose
        return self._commit(np.concatenate([pose, velocity]))

    def _commit(self, state: np.ndarray) -> tuple[np.ndarray, HeadPose]:
        pose = state[:POSE_DIMS]
        self._history.append(state)
        self._prev_pose = pose
        self._prev_state = state
        self._steps += 1
        head = HeadPose(
            rotation=pose[:3].astype(np.float64),
            translation=pose[3:].astype(np.float64),
        )
        return state, head

    @classmethod
    def random_init(
        cls,
        rng: np.random.Generator,
        cond_dim: int = COND_DIM,
        residual_channels: int = RESIDUAL_CHANNELS,
        skip_channels: int = SKIP_CHANNELS,
        head_scale: float = 0.01,
        s_bias: float = 6.0,
        dilations: tuple[int, ...] = DILATIONS,
    ) -> PoseGenerator:
        """Random weights with a tame default head.

        The default head keeps untrained autoregressive rollouts bounded:
        small mu weights and a positive s bias (sigma = exp(-6) ~= 2.5e-3)
        so hours of sampling cannot random-walk the head out of frame.
        Tests that probe sensitivity pass head_scale=1/sqrt(C_s), s_bias=0.
        """
        c_r, c_s = residual_channels, skip_channels

        def scaled(rows: int, cols: int, scale: float | None = None) -> np.ndarray:
            s = (1.0 / np.sqrt(cols)) if scale is None else scale
            return (rng.standard_normal((rows, cols)) * s).astype(np.float32)

        layers = [
            GatedConvWeights(
                filter_curr=scaled(c_r, c_r),
                filter_prev=scaled(c_r, c_r),
                filter_cond=scaled(c_r, cond_dim),
                gate_curr=scaled(c_r, c_r),
                gate_prev=scaled(c_r, c_r),
                gate_cond=scaled(c_r, cond_dim),
                res_w=scaled(c_r, c_r),
                skip_w=scaled(c_s, c_r),
            )
            for _ in dilations
        ]
        return cls(
            input_w=scaled(c_r, STATE_DIMS),
            input_b=np.zeros(c_r, dtype=np.float32),
            cond_w=scaled(c_r, cond_dim),
            layers=layers,
            post1_w=scaled(c_s, c_s),
            post1_b=np.zeros(c_s, dtype=np.float32),
            post2_w=scaled(c_s, c_s),
            post2_b=np.zeros(c_s, dtype=np.float32),
            mu_w=scaled(STATE_DIMS, c_s, scale=head_scale / np.sqrt(c_s)),
            mu_b=np.zeros(STATE_DIMS, dtype=np.float32),
            s_w=scaled(STATE_DIMS, c_s, scale=head_scale / np.sqrt(c_s)),
            s_b=np.full(STATE_DIMS, s_bias, dtype=np.float32),
            dilations=dilations,
        )

    @classmethod
    def from_store(cls, store: WeightStore) -> PoseGenerator:
        layers = []
        for block in (1, 2):
            for layer in range(1, 8):
                prefix = f"pose.block{block}.layer{layer}"
                layers.append(
                    GatedConvWeights(
                        filter_curr=store.get(f"{prefix}.filter.curr"),
                        filter_prev=store.get(f"{prefix}.filter.prev"),
                        filter_cond=store.get(f"{prefix}.filter.cond"),
                        gate_curr=store.get(f"{prefix}.gate.curr"),
                        gate_prev=store.get(f"{prefix}.gate.prev"),
                        gate_cond=store.get(f"{prefix}.gate.cond"),
                        res_w=store.get(f"{prefix}.res.w"),
                        skip_w=store.get(f"{prefix}.skip.w"),
                    )
                )
        return cls(
            input_w=store.get("pose.input.w"),
            input_b=store.get("pose.input.b"),
            cond_w=store.get("pose.cond.w"),
            layers=layers,
            post1_w=store.get("pose.post.conv1.w"),
            post1_b=store.get("pose.post.conv1.b"),
            post2_w=store.get("pose.post.conv2.w"),
            post2_b=store.get("pose.post.conv2.b"),
            mu_w=store.get("pose.post.mu.w"),
            mu_b=store.get("pose.post.mu.b"),
            s_w=store.get("pose.post.s.w"),
            s_b=store.get("pose.post.s.b"),
        )

    def to_store(self, store: WeightStore) -> None:
        if self.dilations != DILATIONS:
            raise DataError(
                "only the default 2-block x 7-layer schedule has a weight "
                f"file naming scheme; this model uses {self.dilations}"
            )
        store.add("pose.input.w", self.input_w)
        store.add("pose.input.b", self.input_b)
        store.add("pose.cond.w", self.cond_w)
        for i, w in enumerate(self.layers):
            block, layer = divmod(i, 7)
            prefix = f"pose.block{block + 1}.layer{layer + 1}"
            store.add(f"{prefix}.filter.curr", w.filter_curr)
            store.add(f"{prefix}.filter.prev", w.filter_prev)
            store.add(f"{prefix}.filter.cond", w.filter_cond)
            store.add(f"{prefix}.gate.curr", w.gate_curr)
            store.add(f"{prefix}.gate.prev", w.gate_prev)
            store.add(f"{prefix}.gate.cond", w.gate_cond)
            store.add(f"{prefix}.res.w", w.res_w)
            store.add(f"{prefix}.skip.w", w.skip_w)
        store.add("pose.post.conv1.w", self.post1_w)
        store.add("pose.post.conv1.b", self.post1_b)
        store.add("pose.post.conv2.w", self.post2_w)
        store.add("pose.post.conv2.b", self.post2_b)
        store.add("pose.post.mu.w", self.mu_w)
        store.add("pose.post.mu.b", self.mu_b)
        store.add("pose.post.s.w", self.s_w)
        store.add("pose.post.s.b", self.s_b)


def sample_state(dist: PoseDistribution, rng: np.random.Generator) -> np.ndarray:
    """Draw one 12-dim state x = mu + exp(-s) * eps, eps ~ N(0, I).

    Exactly one rng.standard_normal(12) call per draw, so a seeded Generator
    reproduces the sequence. Returns float64.
    """
    eps = rng.standard_normal(STATE_DIMS)
    return dist.mu.astype(np.float64) + np.exp(
        -dist.neg_log_sigma.astype(np.float64)
    ) * eps


def pose_nll(dist: PoseDistribution, state: np.ndarray) -> float:
    """Negative log likelihood of a 12-dim state under the distribution.

    With s the negative log sigma:
        nll = sum_d 0.5*ln(2*pi) - s_d + 0.5 * (x_d - mu_d)^2 * exp(2*s_d)
    """
    x = np.asarray(state, dtype=np.float64).reshape(-1)
    mu = np.asarray(dist.mu, dtype=np.float64)
    s = np.asarray(dist.neg_log_sigma, dtype=np.float64)
    if x.shape != mu.shape:
        raise DataError(f"state shape {x.shape} does not match mu {mu.shape}")
    return float(
        np.sum(HALF_LOG_TWO_PI - s + 0.5 * (x - mu) ** 2 * np.exp(2.0 * s))
    )
