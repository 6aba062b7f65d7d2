"""Configuration loading and validation for the engine and CLI.

The config is a single JSON document. Field names carry explicit units
(delay_frames, focal_px, mel_fmax_hz). Unknown fields anywhere in the
document are rejected by name so typos cannot silently fall back to
defaults. Relative paths are resolved against the directory containing the
config file. load_config is total: any byte input yields either a valid
PipelineConfig or a ConfigError naming the problem (JSON syntax errors keep
their line and column), never an unhandled exception.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

from .dsp import AudioConfig
from .errors import ConfigError
from .scene import CameraIntrinsics

DEFAULT_K_NEIGHBORS = 10
DEFAULT_DELAY_FRAMES = 18
DEFAULT_FPS = 60
DEFAULT_SEED = 0
DEFAULT_RANDOM_DB_ROWS = 2048


@dataclass(frozen=True)
class PipelineConfig:
    audio: AudioConfig
    camera: CameraIntrinsics
    k_neighbors: int = DEFAULT_K_NEIGHBORS
    delay_frames: int = DEFAULT_DELAY_FRAMES
    fps: int = DEFAULT_FPS
    seed: int = DEFAULT_SEED
    weights_path: str | None = None
    rig_path: str | None = None
    pose_override_path: str | None = None
    random_db_rows: int = DEFAULT_RANDOM_DB_ROWS


def default_config() -> PipelineConfig:
    return PipelineConfig(
        audio=AudioConfig(),
        camera=CameraIntrinsics(focal_px=1200.0, cx_px=256.0, cy_px=256.0),
    )


CONFIG_SCHEMA: dict = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "title": "speechmotion pipeline configuration",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "audio": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "sample_rate_hz": {"type": "integer", "const": 16000},
                "frame_len_samples": {"type": "integer", "minimum": 1},
                "hop_len_samples": {"type": "integer", "minimum": 1},
                "fft_size": {"type": "integer", "minimum": 16},
                "n_mels": {"type": "integer", "minimum": 1},
                "mel_fmin_hz": {"type": "number", "minimum": 0},
                "mel_fmax_hz": {"type": "number", "exclusiveMinimum": 0},
                "log_floor": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "camera": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "focal_px": {"type": "number", "exclusiveMinimum": 0},
                "cx_px": {"type": "number"},
                "cy_px": {"type": "number"},
            },
        },
        "k_neighbors": {"type": "integer", "minimum": 1, "default": 10},
        "delay_frames": {"type": "integer", "minimum": 0, "default": 18},
        "fps": {"type": "integer", "const": 60},
        "seed": {"type": "integer", "minimum": 0, "default": 0},
        "weights_path": {"type": ["string", "null"]},
        "rig_path": {"type": ["string", "null"]},
        "pose_override_path": {"type": ["string", "null"]},
        "random_db_rows": {"type": "integer", "minimum": 1, "default": 2048},
    },
}


def schema_json() -> str:
    return json.dumps(CONFIG_SCHEMA, indent=2)


def _reject_unknown(doc: dict, allowed: set[str], where: str) -> None:
    for key in doc:
        if key not in allowed:
            raise ConfigError(f"unknown field {key!r} in {where}")


def _get_int(doc: dict, field: str, default: int, minimum: int) -> int:
    value = doc.get(field, default)
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{field} must be an integer, got {value!r}")
    if value < minimum:
        raise ConfigError(f"{field} must be >= {minimum}, got {value}")
    return value


def _get_number(doc: dict, field: str, default: float) -> float:
    value = doc.get(field, default)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{field} must be a number, got {value!r}")
    return float(value)


def _get_path(doc: dict, field: str, base_dir: str) -> str | None:
    value = doc.get(field)
    if value is None:
        return None
    if not isinstance(value, str) or not value:
        raise ConfigError(f"{field} must be a non-empty string or null, got {value!r}")
    if os.path.isabs(value):
        return value
    return os.path.normpath(os.path.join(base_dir, value))


def parse_config(doc: object, base_dir: str) -> PipelineConfig:
    """Validate a parsed JSON document into a PipelineConfig."""
    if not isinstance(doc, dict):
        raise ConfigError(f"config root must be a JSON object, got {type(doc).__name__}")
    _reject_unknown(doc, set(CONFIG_SCHEMA["properties"].keys()), "config root")

    audio_doc = doc.get("audio", {})
    if not isinstance(audio_doc, dict):
        raise ConfigError("audio must be a JSON object")
    _reject_unknown(
        audio_doc, set(CONFIG_SCHEMA["properties"]["audio"]["properties"]), "audio"
    )
    sample_rate = _get_int(audio_doc, "sample_rate_hz", 16000, 1)
    if sample_rate != 16000:
        raise ConfigError(f"sample_rate_hz is fixed at 16000 in v1, got {sample_rate}")
    audio = AudioConfig(
        sample_rate=sample_rate,
        frame_len=_get_int(audio_doc, "frame_len_samples", 267, 1),
        hop_len=_get_int(audio_doc, "hop_len_samples", 133, 1),
        fft_size=_get_int(audio_doc, "fft_size", 512, 16),
        n_mels=_get_int(audio_doc, "n_mels", 80, 1),
        mel_fmin=_get_number(audio_doc, "mel_fmin_hz", 0.0),
        mel_fmax=_get_number(audio_doc, "mel_fmax_hz", 8000.0),
        log_floor=_get_number(audio_doc, "log_floor", 1e-10),
    )

    camera_doc = doc.get("camera", {})
    if not isinstance(camera_doc, dict):
        raise ConfigError("camera must be a JSON object")
    _reject_unknown(
        camera_doc, set(CONFIG_SCHEMA["properties"]["camera"]["properties"]), "camera"
    )
    camera = CameraIntrinsics(
        focal_px=_get_number(camera_doc, "focal_px", 1200.0),
        cx_px=_get_number(camera_doc, "cx_px", 256.0),
        cy_px=_get_number(camera_doc, "cy_px", 256.0),
    )

    fps = _get_int(doc, "fps", DEFAULT_FPS, 1)
    if fps != DEFAULT_FPS:
        raise ConfigError(f"fps is fixed at {DEFAULT_FPS} in v1, got {fps}")
    k_neighbors = _get_int(doc, "k_neighbors", DEFAULT_K_NEIGHBORS, 1)
    delay_frames = _get_int(doc, "delay_frames", DEFAULT_DELAY_FRAMES, 0)
    seed = _get_int(doc, "seed", DEFAULT_SEED, 0)
    random_db_rows = _get_int(doc, "random_db_rows", DEFAULT_RANDOM_DB_ROWS, 1)
    if random_db_rows < k_neighbors:
        raise ConfigError(
            f"random_db_rows ({random_db_rows}) must be >= k_neighbors ({k_neighbors})"
        )

    return PipelineConfig(
        audio=audio,
        camera=camera,
        k_neighbors=k_neighbors,
        delay_frames=delay_frames,
        fps=fps,
        seed=seed,
        weights_path=_get_path(doc, "weights_path", base_dir),
        rig_path=_get_path(doc, "rig_path", base_dir),
        pose_override_path=_get_path(doc, "pose_override_path", base_dir),
        random_db_rows=random_db_rows,
    )


def load_config(path: str) -> PipelineConfig:
    """Read, parse, and validate a JSON config file."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from None
    except UnicodeDecodeError as e:
        raise ConfigError(f"{path}: config is not valid UTF-8 ({e})") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(
            f"{path}: JSON parse error at line {e.lineno}, column {e.colno}: {e.msg}"
        ) from None
    try:
        return parse_config(doc, os.path.dirname(os.path.abspath(path)))
    except ConfigError:
        raise
    except Exception as e:  # totality: surface anything unexpected as ConfigError
        raise ConfigError(f"{path}: invalid config ({e})") from None


def config_to_json(config: PipelineConfig) -> str:
    """Serialize a PipelineConfig back to canonical JSON (demo assets)."""
    doc = {
        "audio": {
            "sample_rate_hz": config.audio.sample_rate,
            "frame_len_samples": config.audio.frame_len,
            "hop_len_samples": config.audio.hop_len,
            "fft_size": config.audio.fft_size,
            "n_mels": config.audio.n_mels,
            "mel_fmin_hz": config.audio.mel_fmin,
            "mel_fmax_hz": config.audio.mel_fmax,
            "log_floor": config.audio.log_floor,
        },
        "camera": {
            "focal_px": config.camera.focal_px,
            "cx_px": config.camera.cx_px,
            "cy_px": config.camera.cy_px,
        },
        "k_neighbors": config.k_neighbors,
        "delay_frames": config.delay_frames,
        "fps": config.fps,
        "seed": config.seed,
        "weights_path": config.weights_path,
        "rig_path": config.rig_path,
        "pose_override_path": config.pose_override_path,
        "random_db_rows": config.random_db_rows,
    }
    return json.dumps(doc, indent=2) + "\n"
