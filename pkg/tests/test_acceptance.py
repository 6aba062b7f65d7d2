"""Acceptance gate: one test per release criterion.

Run with -v to get one pass/fail line per criterion. Each test states its
claim and tolerance inline; the heavy reference implementations live in
reference_impls.py and share no code with the package.
"""

import dataclasses
import json
import math
import os
import time

import numpy as np
import pytest

from speechmotion.apc import ApcEncoder
from speechmotion.config import default_config
from speechmotion.dsp import AudioConfig, MelStream, write_wav
from speechmotion.manifold import ReprDatabase, lle_project
from speechmotion.metrics import image_metrics, pose_metrics
from speechmotion.pipeline import (
    Engine,
    OutputWriter,
    build_timing_report,
    first_frame_sample_threshold,
    run_offline,
    target_frame_count,
)
from speechmotion.pose import (
    DILATIONS,
    RECEPTIVE_FIELD,
    PoseDistribution,
    PoseGenerator,
    pose_nll,
    sample_state,
)
from speechmotion.scene import (
    Billboard,
    HeadPose,
    billboard_positions,
    compose_frame,
    demo_rig,
    line_pixels,
    project_points,
    rotation_matrix,
    static_sample_for_frame,
    write_pgm,
)

from reference_impls import gaussian_log_density, naive_log_mel, windowed_ssim

GOLDEN_DIR = os.path.join(os.path.dirname(__file__), "data")


def small_config(**overrides):
    cfg = dataclasses.replace(default_config(), random_db_rows=64, k_neighbors=6)
    return dataclasses.replace(cfg, **overrides) if overrides else cfg


def read_artifacts(out_dir):
    """All output bytes except timings.json, which holds wall-clock times."""
    artifacts = {}
    for name in sorted(os.listdir(out_dir)):
        if name == "timings.json":
            continue
        with open(os.path.join(out_dir, name), "rb") as f:
            artifacts[name] = f.read()
    return artifacts


def test_criterion_01_speech_encoder_parameter_count():
    # The 3-layer GRU stack (80 -> 512 -> 512 -> 512) holds exactly
    # 4,064,256 parameters.
    enc = ApcEncoder.random_init(np.random.default_rng(0))
    assert enc.gru_parameter_count() == 4_064_256


def test_criterion_02_pose_receptive_field_is_255():
    # A perturbation of the pose state 255 steps back changes the output;
    # one step further back it cannot (max difference below 1e-7).
    assert RECEPTIVE_FIELD == 1 + sum(DILATIONS) == 255

    def probe(perturb_index):
        rng = np.random.default_rng(78)
        gen = PoseGenerator.random_init(rng, head_scale=1.0, s_bias=0.0)
        feed = np.random.default_rng(88)
        cond = feed.standard_normal(512).astype(np.float32)
        states = feed.standard_normal((300, 12)).astype(np.float32)
        if perturb_index is not None:
            states[perturb_index] += 10.0
        for k in range(300):
            gen.step(cond)
            gen.force_state(states[k])
        dist = gen.step(cond)
        return np.concatenate([dist.mu, dist.neg_log_sigma])

    started = time.perf_counter()
    base = probe(None)
    # After 300 committed states the output window is states 45..299. The
    # near-window probe shows the detector at full strength; the edge effect
    # is attenuated by fourteen gated layers but stays above the out-window
    # bound, and one step past the edge the replay is bit-identical.
    near = probe(299)
    inside = probe(300 - RECEPTIVE_FIELD)
    outside = probe(300 - RECEPTIVE_FIELD - 1)
    elapsed = time.perf_counter() - started

    assert np.max(np.abs(near - base)) > 1e-3
    assert np.max(np.abs(inside - base)) > 1e-7
    assert np.max(np.abs(outside - base)) < 1e-7
    assert np.array_equal(outside, base)
    assert np.max(np.abs(base)) > 1e-3  # the probe network must not be dead
    assert elapsed < 10.0


def test_criterion_03_latency_is_300_ms():
    # 18 frames of lookahead at 60 fps is exactly 300 ms; the first frame
    # emits at exactly 5188 input samples, never one sample earlier.
    cfg = small_config()
    assert cfg.delay_frames / cfg.fps * 1000.0 == 300.0
    assert first_frame_sample_threshold(cfg) == 133 * (2 * 18 + 1) + 267 == 5188

    engine = Engine(cfg)
    rng = np.random.default_rng(303)
    samples = 0.3 * rng.standard_normal(5188)
    engine.push_audio(samples[:5187])
    assert engine.poll_frame() is None
    engine.push_audio(samples[5187:])
    fo = engine.poll_frame()
    assert fo is not None and fo.frame_index == 0

    report = build_timing_report([fo.stage_us], 1.0, cfg)
    assert report.algorithmic_latency_ms == 300.0


def test_criterion_04_log_mel_matches_naive_dft_oracle():
    # 20 random 1 s signals: every log-mel bin within 1e-4 of a from-scratch
    # DFT reference, and the frame count follows the framing formula.
    for trial in range(20):
        rng = np.random.default_rng(400 + trial)
        signal = 0.5 * rng.standard_normal(16000)
        frames = MelStream(AudioConfig()).push(signal)
        assert len(frames) == (16000 - 267) // 133 + 1 == 119
        got = np.stack([f.values for f in frames])
        ref = naive_log_mel(signal)
        assert ref.shape == (119, 80)
        assert np.max(np.abs(got.astype(np.float64) - ref)) <= 1e-4


def test_criterion_05_manifold_projection_suite():
    # 1,000 random (database, query) pairs: weights sum to 1 within 1e-6 and
    # database members reconstruct within 1e-5 relative; the two-neighbor
    # collinear case matches the closed-form line projection within 1e-6.
    rng = np.random.default_rng(500)
    for trial in range(1000):
        dim = int(rng.integers(4, 24))
        rows = int(rng.integers(12, 40))
        db = ReprDatabase(rng.standard_normal((rows, dim)).astype(np.float32))
        k = min(10, rows)

        result = lle_project(db, rng.standard_normal(dim).astype(np.float32), k)
        assert abs(result.weights.sum() - 1.0) <= 1e-6

        member = db.features[int(rng.integers(rows))]
        back = lle_project(db, member, k)
        scale = max(float(np.linalg.norm(member)), 1e-12)
        assert np.linalg.norm(back.reconstructed - member) / scale <= 1e-5

    for trial in range(50):
        case = np.random.default_rng(550 + trial)
        a = case.standard_normal(8).astype(np.float32).astype(np.float64)
        b = case.standard_normal(8).astype(np.float32).astype(np.float64)
        q = case.standard_normal(8).astype(np.float32).astype(np.float64)
        t = float((q - a) @ (b - a) / ((b - a) @ (b - a)))

        db = ReprDatabase(np.stack([a, b]).astype(np.float32))
        result = lle_project(db, q.astype(np.float32), 2)
        by_row = dict(zip(result.indices.tolist(), result.weights.tolist()))
        assert by_row[0] == pytest.approx(1.0 - t, abs=1e-6)
        assert by_row[1] == pytest.approx(t, abs=1e-6)
        np.testing.assert_allclose(
            result.reconstructed, a + t * (b - a), atol=1e-6
        )


def test_criterion_06_gaussian_head_correctness():
    # NLL agrees with direct density evaluation within 1e-9 on 1,000 random
    # cases; 1e5 seeded draws at (mu=0, sigma=1) land within 0.0126 of zero
    # mean and within 2 % of unit standard deviation, per dimension.
    rng = np.random.default_rng(600)
    for _ in range(1000):
        mu = rng.standard_normal(12).astype(np.float32)
        s = (0.5 * rng.standard_normal(12)).astype(np.float32)
        x = rng.standard_normal(12).astype(np.float32)
        nll = pose_nll(PoseDistribution(mu=mu, neg_log_sigma=s), x)
        assert nll == pytest.approx(-gaussian_log_density(x, mu, s), abs=1e-9)

    dist = PoseDistribution(
        mu=np.zeros(12, dtype=np.float32),
        neg_log_sigma=np.zeros(12, dtype=np.float32),
    )
    draw_rng = np.random.default_rng(606)
    draws = np.empty((100_000, 12))
    for i in range(draws.shape[0]):
        draws[i] = sample_state(dist, draw_rng)
    assert np.max(np.abs(draws.mean(axis=0))) <= 0.0126
    assert np.max(np.abs(draws.std(axis=0) - 1.0)) <= 0.02


def test_criterion_07_determinism_and_live_offline_equality(tmp_path):
    # Same seed, same audio: byte-identical PGM and JSONL artifacts, and a
    # live push/poll session writes exactly what the offline runner writes.
    wav = str(tmp_path / "in.wav")
    rng = np.random.default_rng(700)
    write_wav(wav, 0.3 * rng.standard_normal(16000))
    cfg = small_config()

    out_a = str(tmp_path / "a")
    out_b = str(tmp_path / "b")
    run_offline(wav, cfg, out_dir=out_a)
    run_offline(wav, cfg, out_dir=out_b)
    assert read_artifacts(out_a) == read_artifacts(out_b)

    from speechmotion.dsp import read_wav

    out_live = str(tmp_path / "live")
    engine = Engine(cfg)
    writer = OutputWriter(out_live)
    records = []
    samples = read_wav(wav)
    for start in range(0, samples.size, 777):
        engine.push_audio(samples[start:start + 777])
        while True:
            fo = engine.poll_frame()
            if fo is None:
                break
            records.append(fo.stage_us)
            writer.write_frame(fo)
    engine.finish()
    while True:
        fo = engine.poll_frame()
        if fo is None:
            break
        records.append(fo.stage_us)
        writer.write_frame(fo)
    writer.finish(build_timing_report(records, 1.0, cfg))

    assert read_artifacts(out_live) == read_artifacts(out_a)


def test_criterion_08_throughput_on_30_s_clip(tmp_path):
    # Full-size models and a 12,000-row database: a 30 s clip must sustain
    # at least 60 emitted frames per second of wall clock, per-frame p99
    # stage-sum under 16 ms, and manifold projection under 5 ms per query.
    wav = str(tmp_path / "clip30.wav")
    rng = np.random.default_rng(800)
    write_wav(wav, 0.3 * rng.standard_normal(30 * 16000))
    cfg = dataclasses.replace(default_config(), random_db_rows=12000)

    result = run_offline(wav, cfg, out_dir=str(tmp_path / "frames"))
    report = result.report
    assert report.frames == target_frame_count(30 * 16000, cfg) - cfg.delay_frames
    assert report.frames == 1782
    assert report.fps_effective >= 60.0
    assert report.frame_total_p99_us < 16_000.0
    # One projection per video step; frame 0 carries the warmup queries, so
    # the per-query figure is total manifold time over the query count.
    queries = target_frame_count(30 * 16000, cfg)
    per_query_us = report.stages["manifold"]["total_us"] / queries
    assert per_query_us < 5_000.0


def test_criterion_09_geometry_closed_forms_and_golden_map(tmp_path):
    # Pinhole projection, rotation composition and inverse, billboard
    # half-translation, and the line rasterizer all match closed forms; the
    # zero-pose demo rig renders byte-identically to the checked-in golden.
    camera = default_config().camera
    np.testing.assert_allclose(
        project_points(np.array([[50.0, 100.0, 1200.0]]), camera),
        [[306.0, 356.0]],
        atol=1e-12,
    )

    rng = np.random.default_rng(900)
    for _ in range(20):
        rx, ry, rz = rng.uniform(-np.pi, np.pi, size=3)
        cx, sx = math.cos(rx), math.sin(rx)
        cy, sy = math.cos(ry), math.sin(ry)
        cz, sz = math.cos(rz), math.sin(rz)
        mx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
        my = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
        mz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
        rot = rotation_matrix(np.array([rx, ry, rz]))
        np.testing.assert_allclose(rot, mz @ my @ mx, atol=1e-12)
        np.testing.assert_allclose(rot @ rot.T, np.eye(3), atol=1e-12)
        assert np.linalg.det(rot) == pytest.approx(1.0, abs=1e-12)

    board = Billboard(
        points=np.array([[0.0, 0.0, 1000.0], [10.0, 0.0, 1000.0]]),
        depth0=1000.0,
        alpha=0.5,
    )
    pose = HeadPose(
        rotation=np.array([0.3, -0.2, 0.1]),
        translation=np.array([8.0, -6.0, 4.0]),
    )
    np.testing.assert_allclose(
        billboard_positions(board, pose),
        board.points + 0.5 * pose.translation,
        atol=1e-12,
    )

    np.testing.assert_array_equal(
        line_pixels(0, 0, 5, 3),
        [[0, 0], [1, 1], [2, 1], [3, 2], [4, 2], [5, 3]],
    )

    rig, billboard, camera = demo_rig()
    head = HeadPose(rotation=np.zeros(3), translation=np.zeros(3))
    feature_map = compose_frame(
        rig, np.zeros((25, 3)), static_sample_for_frame(rig, 0), head,
        billboard, camera,
    )
    rendered = str(tmp_path / "rendered.pgm")
    write_pgm(rendered, feature_map.pixels)
    with open(rendered, "rb") as f:
        got = f.read()
    with open(os.path.join(GOLDEN_DIR, "golden_rig_map.pgm"), "rb") as f:
        golden = f.read()
    assert got == golden


def test_criterion_10_metric_kit():
    # Identical inputs give zero errors, SSIM 1, capped PSNR; random cases
    # agree with loop oracles within 1e-9 (L1, PSNR via MSE) and 1e-6 (SSIM).
    rig, _, _ = demo_rig()
    track = [
        HeadPose(
            rotation=np.array([0.01 * i, 0.0, -0.01 * i]),
            translation=np.array([0.0, float(i), 0.0]),
        )
        for i in range(4)
    ]
    report = pose_metrics(track, track, rig)
    assert (report.d_l_pct, report.d_v_pct, report.d_rot_deg, report.d_pos_pct) \
        == (0.0, 0.0, 0.0, 0.0)

    rng = np.random.default_rng(1000)
    image = rng.integers(0, 256, size=(48, 48), dtype=np.uint8)
    same = image_metrics(image, image)
    assert same.l1 == 0.0
    assert same.psnr_db == 100.0
    assert same.ssim == pytest.approx(1.0, abs=1e-12)

    for _ in range(5):
        a = rng.integers(0, 256, size=(48, 48), dtype=np.uint8)
        b = rng.integers(0, 256, size=(48, 48), dtype=np.uint8)
        report = image_metrics(a, b)

        diff = a.astype(np.float64) - b.astype(np.float64)
        l1 = float(np.mean(np.abs(diff)))
        mse = float(np.mean(diff * diff))
        psnr = 10.0 * math.log10(255.0 ** 2 / mse)
        assert report.l1 == pytest.approx(l1, abs=1e-9)
        assert report.psnr_db == pytest.approx(psnr, abs=1e-9)
        assert report.ssim == pytest.approx(windowed_ssim(a, b), abs=1e-6)
