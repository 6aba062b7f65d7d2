"""Quantitative evaluation of pose tracks and rendered images.

Pose-track metrics compare a predicted head pose sequence against a ground
truth sequence over the same rig:

    D-L   mean landmark position error after posing the rig's mean shape,
          as a percentage of the rig bounding-box diagonal
    D-V   the same for frame-to-frame landmark velocity
    D-Rot mean absolute per-axis rotation difference, degrees
    D-Pos mean translation distance, as a percentage of the same diagonal

The normalizing diagonal is computed once from the rig's mean landmarks.

Image metrics operate on 8-bit grayscale (H, W) or RGB (H, W, 3) arrays:

    L1    mean absolute difference on the 0-255 scale
    PSNR  10 * log10(255^2 / MSE) in dB, capped at 100 when MSE is 0
    SSIM  8x8 sliding windows at stride 1, population statistics,
          C1 = (0.01*255)^2, C2 = (0.03*255)^2, mean over windows;
          RGB images average the three per-channel SSIMs

All functions are pure; reports serialize through dataclasses.asdict.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .scene import FaceRig, HeadPose, apply_pose

PSNR_CAP_DB = 100.0
SSIM_WINDOW = 8
SSIM_C1 = (0.01 * 255.0) ** 2
SSIM_C2 = (0.03 * 255.0) ** 2


@dataclass
class PoseMetricReport:
    d_l_pct: float
    d_v_pct: float
    d_rot_deg: float
    d_pos_pct: float


@dataclass
class ImageMetricReport:
    l1: float
    psnr_db: float
    ssim: float


def rig_diagonal(rig: FaceRig) -> float:
    """Bounding-box diagonal of the rig's mean landmarks, millimeters."""
    spans = rig.mean_points.max(axis=0) - rig.mean_points.min(axis=0)
    diag = float(np.linalg.norm(spans))
    if diag <= 0.0:
        raise DataError("rig mean shape is degenerate (zero bounding box)")
    return diag


def _stack_poses(track: list[HeadPose]) -> tuple[np.ndarray, np.ndarray]:
    rot = np.stack([np.asarray(p.rotation, dtype=np.float64) for p in track])
    trans = np.stack([np.asarray(p.translation, dtype=np.float64) for p in track])
    if not (np.all(np.isfinite(rot)) and np.all(np.isfinite(trans))):
        raise DataError("pose track contains non-finite values")
    return rot, trans


def pose_metrics(
    pred: list[HeadPose], gt: list[HeadPose], rig: FaceRig
) -> PoseMetricReport:
    """Compare equal-length pose tracks (length >= 2) over a rig."""
    if len(pred) != len(gt):
        raise DataError(f"track lengths differ: {len(pred)} vs {len(gt)}")
    if len(pred) < 2:
        raise DataError(f"need at least 2 frames for velocity metrics, got {len(pred)}")
    diag = rig_diagonal(rig)

    pred_pts = np.stack([apply_pose(rig.mean_points, p) for p in pred])
    gt_pts = np.stack([apply_pose(rig.mean_points, p) for p in gt])

    pos_err = np.linalg.norm(pred_pts - gt_pts, axis=2)         # (T, 73)
    d_l = float(pos_err.mean()) / diag * 100.0

    pred_vel = np.diff(pred_pts, axis=0)
    gt_vel = np.diff(gt_pts, axis=0)
    vel_err = np.linalg.norm(pred_vel - gt_vel, axis=2)         # (T-1, 73)
    d_v = float(vel_err.mean()) / diag * 100.0

    pred_rot, pred_t = _stack_poses(pred)
    gt_rot, gt_t = _stack_poses(gt)
    d_rot = float(np.degrees(np.abs(pred_rot - gt_rot)).mean())
    d_pos = float(np.linalg.norm(pred_t - gt_t, axis=1).mean()) / diag * 100.0

    return PoseMetricReport(d_l_pct=d_l, d_v_pct=d_v, d_rot_deg=d_rot, d_pos_pct=d_pos)


def _check_image_pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(a)
    y = np.asarray(b)
    if x.shape != y.shape:
        raise DataError(f"image dimensions differ: {x.shape} vs {y.shape}")
    if x.ndim not in (2, 3) or (x.ndim == 3 and x.shape[2] != 3):
        raise DataError(f"expected (H, W) or (H, W, 3) images, got {x.shape}")
    if x.dtype != np.uint8 or y.dtype != np.uint8:
        raise DataError(f"expected uint8 images, got {x.dtype} and {y.dtype}")
    if x.shape[0] < SSIM_WINDOW or x.shape[1] < SSIM_WINDOW:
        raise DataError(
            f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {x.shape}"
        )
    return x, y


def image_metrics(a: np.ndarray, b: np.ndarray) -> ImageMetricReport:
    x, y = _check_image_pair(a, b)
    xf = x.astype(np.float64)
    yf = y.astype(np.float64)
    l1 = float(np.abs(xf - yf).mean())
    mse = float(((xf - yf) ** 2).mean())
    if mse == 0.0:
        psnr = PSNR_CAP_DB
    else:
        psnr = min(PSNR_CAP_DB, 10.0 * math.log10(255.0**2 / mse))
    if x.ndim == 2:
        ssim = _ssim_channel(xf, yf)
    else:
        ssim = float(
            np.mean([_ssim_channel(xf[:, :, c], yf[:, :, c]) for c in range(3)])
        )
    return ImageMetricReport(l1=l1, psnr_db=psnr, ssim=ssim)


def _window_sums(x: np.ndarray) -> np.ndarray:
    """Sum of every 8x8 window (stride 1) via an integral image.

    For 8-bit inputs every partial sum is an integer below 2^53, so the
    result is exact in float64.
    """
    win = SSIM_WINDOW
    s = np.cumsum(np.cumsum(x, axis=0), axis=1)
    s = np.pad(s, ((1, 0), (1, 0)))
    return s[win:, win:] - s[:-win, win:] - s[win:, :-win] + s[:-win, :-win]


def _ssim_channel(x: np.ndarray, y: np.ndarray) -> float:
    """Mean SSIM over all 8x8 windows (stride 1) of one float64 channel."""
    n = float(SSIM_WINDOW * SSIM_WINDOW)
    mx = _window_sums(x) / n
    my = _window_sums(y) / n
    # Population (biased) second moments over the 64 window pixels.
    vx = _window_sums(x * x) / n - mx * mx
    vy = _window_sums(y * y) / n - my * my
    cov = _window_sums(x * y) / n - mx * my
    num = (2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2)
    den = (mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2)
    return float((num / den).mean())
