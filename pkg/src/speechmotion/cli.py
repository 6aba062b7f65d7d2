"""Command-line entry points.

Subcommands:

    infer        run the whole pipeline over a WAV file
    stream       same engine fed raw s16le PCM on standard input
    project      manifold projection debug: nearest neighbors and weights
    rasterize    draw a points + topology JSON file to a PGM
    eval-pose    pose-track metrics between two frames.jsonl files
    eval-image   image metrics between two PGM files
    demo-assets  write a synthetic rig, config, and demo WAV

Exit codes: 0 success, 2 configuration error, 3 data error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time

import numpy as np

from . import config as config_mod
from .dsp import write_wav
from .errors import ConfigError, DataError
from .manifold import database_from_store, lle_project, load_raw_database
from .metrics import image_metrics, pose_metrics
from .pipeline import Engine, OutputWriter, build_timing_report, run_offline
from .scene import (
    HeadPose,
    demo_rig,
    load_rig,
    rasterize,
    read_pgm,
    save_rig,
    write_pgm,
)
from .weights import MAGIC, load_weights

STREAM_CHUNK_SAMPLES = 3200  # 200 ms of 16 kHz audio per stdin read


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.print_schema:
        print(config_mod.schema_json())
        return 0
    if args.command is None:
        parser.print_help()
        return 0
    try:
        return args.handler(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except OSError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="speechmotion",
        description="Streaming speech-to-facial-motion inference engine.",
    )
    parser.add_argument(
        "--print-schema",
        action="store_true",
        help="print the JSON schema of the config file and exit",
    )
    sub = parser.add_subparsers(dest="command")
    parser.set_defaults(command=None, handler=None)

    p = sub.add_parser("infer", help="run the pipeline over a WAV file")
    p.add_argument("--wav", required=True, help="input WAV (16 kHz mono 16-bit)")
    p.add_argument("--config", required=True, help="config JSON file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.set_defaults(handler=_cmd_infer)

    p = sub.add_parser("stream", help="run the pipeline over raw PCM on stdin")
    p.add_argument("--config", required=True, help="config JSON file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.set_defaults(handler=_cmd_stream)

    p = sub.add_parser("project", help="manifold projection debug")
    p.add_argument("--repr", dest="repr_path", required=True,
                   help="query vector, raw little-endian float32")
    p.add_argument("--db", required=True,
                   help="database: weight file or raw float32 with JSON sidecar")
    p.add_argument("-k", type=int, default=10, help="neighbor count (default 10)")
    p.set_defaults(handler=_cmd_project)

    p = sub.add_parser("rasterize", help="rasterize a points JSON file to PGM")
    p.add_argument("--points", required=True,
                   help='JSON file: {"points": [[x, y], ...], "topology": [[i, ...], ...]}')
    p.add_argument("--out", default=None, help="output PGM path (default: <points>.pgm)")
    p.set_defaults(handler=_cmd_rasterize)

    p = sub.add_parser("eval-pose", help="pose metrics between two frames.jsonl files")
    p.add_argument("--pred", required=True, help="predicted track, frames.jsonl format")
    p.add_argument("--gt", required=True, help="ground-truth track, frames.jsonl format")
    p.add_argument("--rig", required=True, help="rig JSON file")
    p.set_defaults(handler=_cmd_eval_pose)

    p = sub.add_parser("eval-image", help="image metrics between two PGM files")
    p.add_argument("--a", dest="image_a", required=True)
    p.add_argument("--b", dest="image_b", required=True)
    p.set_defaults(handler=_cmd_eval_image)

    p = sub.add_parser("demo-assets", help="write a synthetic rig, config, and WAV")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(handler=_cmd_demo_assets)

    return parser


def _load_config_with_seed(path: str, seed: int | None) -> config_mod.PipelineConfig:
    cfg = config_mod.load_config(path)
    if seed is not None:
        if seed < 0:
            raise ConfigError(f"--seed must be >= 0, got {seed}")
        cfg = dataclasses.replace(cfg, seed=seed)
    return cfg


def _cmd_infer(args: argparse.Namespace) -> int:
    cfg = _load_config_with_seed(args.config, args.seed)
    result = run_offline(args.wav, cfg, out_dir=args.out)
    report = result.report
    print(
        f"emitted {report.frames} frames in {report.wall_s:.2f} s "
        f"({report.fps_effective:.1f} frames/s), "
        f"algorithmic latency {report.algorithmic_latency_ms:.0f} ms"
    )
    print(f"outputs in {args.out}")
    return 0


def _cmd_stream(args: argparse.Namespace) -> int:
    cfg = _load_config_with_seed(args.config, args.seed)
    engine = Engine(cfg)
    writer = OutputWriter(args.out)
    stage_records: list[dict[str, float]] = []

    def drain() -> None:
        while True:
            fo = engine.poll_frame()
            if fo is None:
                return
            stage_records.append(fo.stage_us)
            writer.write_frame(fo)

    stdin = sys.stdin.buffer
    wall0 = time.perf_counter()
    while True:
        raw = stdin.read(STREAM_CHUNK_SAMPLES * 2)
        if not raw:
            break
        if len(raw) % 2:
            raise DataError("stdin PCM stream ended mid-sample (odd byte count)")
        pcm = np.frombuffer(raw, dtype="<i2")
        engine.push_audio(pcm.astype(np.float32) / 32768.0)
        drain()
    engine.finish()
    drain()
    wall = time.perf_counter() - wall0

    report = build_timing_report(stage_records, wall, cfg)
    writer.finish(report)
    print(f"emitted {report.frames} frames from stdin; outputs in {args.out}")
    return 0


def _cmd_project(args: argparse.Namespace) -> int:
    with open(args.db, "rb") as f:
        head = f.read(4)
    if head == MAGIC:
        db = database_from_store(load_weights(args.db))
    else:
        db = load_raw_database(args.db)
    query = np.fromfile(args.repr_path, dtype="<f4")
    if query.size != db.dim:
        raise DataError(
            f"query has {query.size} values but the database rows have {db.dim}"
        )
    result = lle_project(db, query, args.k)
    print(
        json.dumps(
            {
                "indices": result.indices.tolist(),
                "weights": result.weights.tolist(),
                "residual": result.residual,
            },
            indent=2,
        )
    )
    return 0


def _cmd_rasterize(args: argparse.Namespace) -> int:
    try:
        with open(args.points, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise DataError(f"invalid JSON in {args.points}: {e}") from None
    if not isinstance(doc, dict) or "points" not in doc or "topology" not in doc:
        raise DataError(f'{args.points} must contain "points" and "topology"')
    points = np.asarray(doc["points"], dtype=np.float64)
    topology = [list(map(int, line)) for line in doc["topology"]]
    feature_map = rasterize(points, topology)
    out = args.out if args.out is not None else args.points + ".pgm"
    write_pgm(out, feature_map.pixels)
    print(
        json.dumps(
            {"out": out, "lit_pixels": int((feature_map.pixels > 0).sum())}
        )
    )
    return 0


def _read_pose_track(path: str) -> list[HeadPose]:
    track: list[HeadPose] = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                pose = rec["pose"]
                track.append(
                    HeadPose(
                        rotation=np.asarray(pose["rotation"], dtype=np.float64),
                        translation=np.asarray(pose["translation"], dtype=np.float64),
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise DataError(f"{path} line {line_no}: bad frame record ({e})") from None
    if not track:
        raise DataError(f"{path}: no frame records found")
    return track


def _cmd_eval_pose(args: argparse.Namespace) -> int:
    pred = _read_pose_track(args.pred)
    gt = _read_pose_track(args.gt)
    rig, _ = load_rig(args.rig)
    report = pose_metrics(pred, gt, rig)
    print(json.dumps(dataclasses.asdict(report), indent=2))
    return 0


def _cmd_eval_image(args: argparse.Namespace) -> int:
    a = read_pgm(args.image_a)
    b = read_pgm(args.image_b)
    report = image_metrics(a, b)
    print(json.dumps(dataclasses.asdict(report), indent=2))
    return 0


def _cmd_demo_assets(args: argparse.Namespace) -> int:
    import os

    os.makedirs(args.out, exist_ok=True)
    rig, billboard, camera = demo_rig()
    rig_path = os.path.join(args.out, "rig.json")
    save_rig(rig_path, rig, billboard)

    cfg = dataclasses.replace(
        config_mod.default_config(),
        camera=camera,
        rig_path="rig.json",
    )
    config_path = os.path.join(args.out, "config.json")
    with open(config_path, "w", encoding="utf-8") as f:
        f.write(config_mod.config_to_json(cfg))

    wav_path = os.path.join(args.out, "demo.wav")
    write_wav(wav_path, _demo_signal(seconds=2.0))

    print(json.dumps({"rig": rig_path, "config": config_path, "wav": wav_path}))
    print(
        f"try: speechmotion infer --wav {wav_path} --config {config_path} "
        f"--out {os.path.join(args.out, 'frames')}"
    )
    return 0


def _demo_signal(seconds: float, sample_rate: int = 16000) -> np.ndarray:
    """Synthetic voiced-ish test signal: gliding harmonics plus soft noise."""
    rng = np.random.default_rng(123)
    n = int(seconds * sample_rate)
    t = np.arange(n) / sample_rate
    f0 = 140.0 + 40.0 * np.sin(2.0 * np.pi * 0.7 * t)
    phase = 2.0 * np.pi * np.cumsum(f0) / sample_rate
    signal = np.zeros(n)
    for harmonic, gain in ((1, 0.5), (2, 0.25), (3, 0.15), (4, 0.08)):
        signal += gain * np.sin(harmonic * phase)
    envelope = 0.4 + 0.6 * np.abs(np.sin(2.0 * np.pi * 1.3 * t))
    signal = signal * envelope + 0.02 * rng.standard_normal(n)
    return 0.5 * signal / np.max(np.abs(signal))


if __name__ == "__main__":
    sys.exit(main())
