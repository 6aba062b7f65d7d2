"""Streaming engine: audio in, posed facial-motion frames out.

Stage graph per video frame (60 fps), all strictly sequential per push:

    audio chunk -> mel frames (120 Hz) -> speech encoder (every mel frame)
    -> manifold projection (every second mel frame, the later of each pair)
    -> mouth predictor (delay d lookahead) -> pose generator -> scene
    composition and rasterization

Alignment: the representation driving video frame t is the encoder output at
mel index 2t + 1. Because the mel clock (sample_rate / hop = 120.30 Hz) runs
slightly faster than two mels per frame, consuming every odd mel unchecked
would overshoot the frame budget by about 0.3 % on long clips. Each video
step k is therefore gated on the input duration actually covering it: it
runs once samples * fps >= (k + 1) * sample_rate AND mel 2k + 1 is complete.
The mouth predictor runs d frames ahead of emission, so frame t becomes
available at max(hop * (2 * (t + d) + 1) + frame_len,
ceil((t + d + 1) * sample_rate / fps)) input samples. The mel term dominates
for roughly the first three seconds (and gives the 5188-sample first-frame
threshold at the defaults); past that the duration gate binds and the
steady-state lag settles at exactly d / fps = 300 ms of input.

Offline and live modes share this code path byte for byte. At end of input,
finish() zero-pads the mel tail (and drops surplus gated steps) so a clip of
S samples yields exactly floor(S * fps / sample_rate) - d emitted frames; a
live stream flushing at EOF does the identical padding, keeping the two
modes equivalent. The duration gate never emits a frame that finish() would
have to retract.

Live-mode memory is near constant: the mel buffer holds less than one frame
of samples, the representation queue at most d + 1 entries, and the pose
rings and history are fixed-size. The only growing structure is the queue of
duration-gated encoder outputs, which accrues the 0.3 % mel-versus-frame
clock difference (about 2 KB per streamed minute). The output queue is
drained by the caller's poll_frame loop.

Determinism: all randomness flows from one seeded Generator (model init in a
fixed order, then per-frame pose sampling), so identical audio, config, and
seed reproduce identical outputs bit for bit.
"""

from __future__ import annotations

import json
import os
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .apc import ApcEncoder
from .config import PipelineConfig
from .dsp import MelStream, read_wav
from .errors import ConfigError, DataError
from .manifold import ReprDatabase, database_from_store, lle_project
from .mouth import MouthDisplacement, MouthPredictor
from .pose import PoseGenerator
from .scene import (
    FeatureMap,
    HeadPose,
    compose_frame,
    demo_rig,
    load_rig,
    static_sample_for_frame,
    write_pgm,
)
from .weights import load_weights

STAGES = ("dsp", "apc", "manifold", "mouth", "pose", "scene")


@dataclass
class FrameOutput:
    frame_index: int
    pose: HeadPose
    mouth: MouthDisplacement
    points2d: np.ndarray          # (73 + M, 2) float64 projected points
    feature_map: FeatureMap
    stage_us: dict[str, float]    # accumulated per-stage time, microseconds


@dataclass
class TimingReport:
    frames: int
    wall_s: float
    fps_effective: float
    algorithmic_latency_ms: float
    stages: dict[str, dict[str, float]]   # stage -> {mean_us, p99_us, total_us}
    frame_total_p99_us: float
    per_frame_total_us: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "frames": self.frames,
            "wall_s": self.wall_s,
            "fps_effective": self.fps_effective,
            "algorithmic_latency_ms": self.algorithmic_latency_ms,
            "stages": self.stages,
            "frame_total_p99_us": self.frame_total_p99_us,
            "per_frame_total_us": self.per_frame_total_us,
        }


def first_frame_sample_threshold(config: PipelineConfig) -> int:
    """Samples needed before frame 0 can emit (frame 0 plus d lookahead).

    The later of the two emission conditions: the driving mel frame is
    complete, and the input duration covers d + 1 video frame periods. At
    the default delay the mel term dominates.
    """
    audio = config.audio
    mel_ready = audio.hop_len * (2 * config.delay_frames + 1) + audio.frame_len
    duration = -(-(config.delay_frames + 1) * audio.sample_rate // config.fps)
    return max(mel_ready, duration)


def target_frame_count(n_samples: int, config: PipelineConfig) -> int:
    """Video frames a clip of n_samples covers: floor(duration * fps)."""
    return n_samples * config.fps // config.audio.sample_rate


class Engine:
    """One streaming inference session. Single-owner; not thread-safe."""

    def __init__(self, config: PipelineConfig):
        self.config = config
        self._rng = np.random.default_rng(config.seed)

        store = None
        if config.weights_path is not None:
            store = load_weights(config.weights_path)
        # Model construction draws from the generator in a fixed order so a
        # seed fully determines the session even without a weight file.
        if store is not None:
            self.encoder = ApcEncoder.from_store(store)
            self.mouth = MouthPredictor.from_store(store, delay=config.delay_frames)
            self.pose = PoseGenerator.from_store(store)
        else:
            self.encoder = ApcEncoder.random_init(self._rng)
            self.mouth = MouthPredictor.random_init(self._rng, delay=config.delay_frames)
            self.pose = PoseGenerator.random_init(self._rng)
        if store is not None and "manifold.db" in store:
            self.database = database_from_store(store)
        else:
            rows = self._rng.standard_normal(
                (config.random_db_rows, self.encoder.output_size)
            ).astype(np.float32)
            self.database = ReprDatabase(rows)
        if config.k_neighbors > self.database.size:
            raise ConfigError(
                f"k_neighbors ({config.k_neighbors}) exceeds database size "
                f"({self.database.size})"
            )

        if config.rig_path is not None:
            self.rig, self.billboard = load_rig(config.rig_path)
        else:
            self.rig, self.billboard, _ = demo_rig()
        self.camera = config.camera

        self._pose_override: np.ndarray | None = None
        if config.pose_override_path is not None:
            self._pose_override = _load_pose_track(config.pose_override_path)

        self._mel = MelStream(config.audio)
        self._repr_queue: deque[np.ndarray] = deque()
        self._pending_steps: deque[np.ndarray] = deque()
        self._video_steps = 0
        self._out: deque[FrameOutput] = deque()
        self._acc = {name: 0.0 for name in STAGES}
        self._samples_pushed = 0
        self._frames_emitted = 0
        self._finished = False

    @property
    def samples_pushed(self) -> int:
        return self._samples_pushed

    @property
    def frames_emitted(self) -> int:
        return self._frames_emitted

    def push_audio(self, chunk: np.ndarray) -> None:
        """Feed samples in stream order. Completed frames queue for poll."""
        if self._finished:
            raise DataError("push_audio called after finish()")
        samples = np.asarray(chunk, dtype=np.float64).reshape(-1)
        self._samples_pushed += samples.size
        self._ingest(samples)

    def poll_frame(self) -> FrameOutput | None:
        """Next completed frame, or None. Never blocks."""
        return self._out.popleft() if self._out else None

    def finish(self) -> None:
        """Flush at end of input by zero-padding the mel tail.

        Pads up to the last mel frame needed by the final video frame of the
        clip's duration, so emitted frames total
        target_frame_count(samples) - delay_frames. Idempotent.
        """
        if self._finished:
            return
        self._finished = True
        target = target_frame_count(self._samples_pushed, self.config)
        needed_mels = 2 * target
        if needed_mels > 0:
            audio = self.config.audio
            needed_samples = (needed_mels - 1) * audio.hop_len + audio.frame_len
            pad = needed_samples - self._samples_pushed
            if pad > 0:
                self._ingest(np.zeros(pad, dtype=np.float64))
        # Steps still gated now belong past the clip's duration; drop them.
        self._pending_steps.clear()

    def _ingest(self, samples: np.ndarray) -> None:
        t0 = time.perf_counter_ns()
        mel_frames = self._mel.push(samples)
        self._acc["dsp"] += (time.perf_counter_ns() - t0) / 1000.0
        for mel in mel_frames:
            t0 = time.perf_counter_ns()
            rep = self.encoder.step(mel.values)
            self._acc["apc"] += (time.perf_counter_ns() - t0) / 1000.0
            # The later mel frame of each 120 Hz pair drives one video frame.
            if mel.frame_index % 2 == 1:
                self._pending_steps.append(rep)
                self._release_ready_steps()
        # A push can open the duration gate without completing any mel.
        self._release_ready_steps()

    def _release_ready_steps(self) -> None:
        # Video step k may run only once the pushed audio covers k + 1 frame
        # periods; the 120.30 Hz mel clock alone would run 0.3 % fast. Pad
        # samples from finish() do not advance the gate, so a flush never
        # releases steps past the clip's duration.
        fps = self.config.fps
        sample_rate = self.config.audio.sample_rate
        while (
            self._pending_steps
            and self._samples_pushed * fps >= (self._video_steps + 1) * sample_rate
        ):
            self._consume_video_step(self._pending_steps.popleft())
            self._video_steps += 1

    def _consume_video_step(self, rep: np.ndarray) -> None:
        t0 = time.perf_counter_ns()
        projected = lle_project(self.database, rep, self.config.k_neighbors)
        self._acc["manifold"] += (time.perf_counter_ns() - t0) / 1000.0
        self._repr_queue.append(projected.reconstructed)

        t0 = time.perf_counter_ns()
        displacement = self.mouth.step(projected.reconstructed)
        self._acc["mouth"] += (time.perf_counter_ns() - t0) / 1000.0
        if displacement is not None:
            self._emit(displacement)

    def _emit(self, displacement: MouthDisplacement) -> None:
        frame = displacement.frame_index
        rep = self._repr_queue.popleft()

        t0 = time.perf_counter_ns()
        dist = self.pose.step(rep)
        if self._pose_override is not None:
            if frame >= self._pose_override.shape[0]:
                raise DataError(
                    f"pose override track has {self._pose_override.shape[0]} "
                    f"entries, but frame {frame} was reached"
                )
            _, head = self.pose.force_pose(self._pose_override[frame])
        else:
            _, head = self.pose.sample_pose(dist, self._rng)
        self._acc["pose"] += (time.perf_counter_ns() - t0) / 1000.0

        t0 = time.perf_counter_ns()
        static_points = static_sample_for_frame(self.rig, frame)
        feature_map = compose_frame(
            self.rig, displacement.delta, static_points, head,
            self.billboard, self.camera,
        )
        self._acc["scene"] += (time.perf_counter_ns() - t0) / 1000.0

        stage_us = dict(self._acc)
        for name in self._acc:
            self._acc[name] = 0.0
        self._out.append(
            FrameOutput(
                frame_index=frame,
                pose=head,
                mouth=displacement,
                points2d=feature_map.points2d,
                feature_map=feature_map,
                stage_us=stage_us,
            )
        )
        self._frames_emitted += 1


def _load_pose_track(path: str) -> np.ndarray:
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except OSError as e:
        raise DataError(f"cannot read pose track {path}: {e}") from None
    except json.JSONDecodeError as e:
        raise DataError(f"invalid JSON in pose track {path}: {e}") from None
    arr = np.asarray(doc, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 6:
        raise DataError(
            f"pose track {path} must be a list of 6-vectors, got shape {arr.shape}"
        )
    if not np.all(np.isfinite(arr)):
        raise DataError(f"pose track {path} contains non-finite values")
    return arr


class OutputWriter:
    """Writes per-frame artifacts: frame_%06d.pgm, frames.jsonl, timings.json."""

    def __init__(self, out_dir: str):
        os.makedirs(out_dir, exist_ok=True)
        self.out_dir = out_dir
        self._jsonl = open(os.path.join(out_dir, "frames.jsonl"), "w", encoding="utf-8")

    def write_frame(self, fo: FrameOutput) -> None:
        write_pgm(
            os.path.join(self.out_dir, f"frame_{fo.frame_index:06d}.pgm"),
            fo.feature_map.pixels,
        )
        record = {
            "frame_index": fo.frame_index,
            "pose": {
                "rotation": fo.pose.rotation.tolist(),
                "translation": fo.pose.translation.tolist(),
            },
            "mouth_delta": fo.mouth.delta.tolist(),
            "points2d": fo.points2d.tolist(),
        }
        self._jsonl.write(json.dumps(record) + "\n")

    def finish(self, report: TimingReport) -> None:
        self._jsonl.close()
        path = os.path.join(self.out_dir, "timings.json")
        with open(path, "w", encoding="utf-8") as f:
            json.dump(report.to_dict(), f, indent=2)
            f.write("\n")


@dataclass
class OfflineResult:
    frame_count: int
    report: TimingReport
    frames: list[FrameOutput] | None = None


def build_timing_report(
    stage_records: list[dict[str, float]], wall_s: float, config: PipelineConfig
) -> TimingReport:
    frames = len(stage_records)
    stages: dict[str, dict[str, float]] = {}
    totals = np.zeros(frames, dtype=np.float64)
    for name in STAGES:
        series = np.array([rec[name] for rec in stage_records], dtype=np.float64)
        totals += series if frames else 0.0
        stages[name] = {
            "mean_us": float(series.mean()) if frames else 0.0,
            "p99_us": float(np.percentile(series, 99)) if frames else 0.0,
            "total_us": float(series.sum()) if frames else 0.0,
        }
    return TimingReport(
        frames=frames,
        wall_s=wall_s,
        fps_effective=frames / wall_s if wall_s > 0 else 0.0,
        algorithmic_latency_ms=config.delay_frames / config.fps * 1000.0,
        stages=stages,
        frame_total_p99_us=float(np.percentile(totals, 99)) if frames else 0.0,
        per_frame_total_us=[float(t) for t in totals],
    )


def run_offline(
    wav_path: str,
    config: PipelineConfig,
    out_dir: str | None = None,
    keep_frames: bool = False,
    chunk_samples: int = 16000,
) -> OfflineResult:
    """Run the whole pipeline over a WAV file.

    Writes artifacts when out_dir is given. keep_frames retains every
    FrameOutput in memory (tests on short clips); long clips should rely on
    the written artifacts instead. Chunk size cannot affect outputs, only
    scheduling granularity.
    """
    samples = read_wav(wav_path)
    engine = Engine(config)
    writer = OutputWriter(out_dir) if out_dir is not None else None
    kept: list[FrameOutput] | None = [] if keep_frames else None
    stage_records: list[dict[str, float]] = []

    def drain() -> None:
        while True:
            fo = engine.poll_frame()
            if fo is None:
                return
            stage_records.append(fo.stage_us)
            if writer is not None:
                writer.write_frame(fo)
            if kept is not None:
                kept.append(fo)

    wall0 = time.perf_counter()
    for start in range(0, samples.size, chunk_samples):
        engine.push_audio(samples[start:start + chunk_samples])
        drain()
    engine.finish()
    drain()
    wall = time.perf_counter() - wall0

    report = build_timing_report(stage_records, wall, config)
    if writer is not None:
        writer.finish(report)
    return OfflineResult(frame_count=len(stage_records), report=report, frames=kept)
