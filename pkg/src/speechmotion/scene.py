"""Scene assembly: rig geometry, head pose, projection, and rasterization.

World units are millimeters; the camera looks down +z with a pinhole model
(u = f * x / z + cx, v = f * y / z + cy). Head rotation applies intrinsic
axis rotations in x, y, z order, i.e. R = Rz(rz) @ Ry(ry) @ Rx(rx) acting on
column vectors, followed by the translation. Billboard (upper-body) points
are not rotated; they follow a fraction ``alpha`` of the head translation.

Feature maps are 512 x 512 single-channel uint8 images: black background,
landmark wireframe drawn at 255 by connecting consecutive points of each
topology polyline with integer line segments. Endpoint rounding is
half-away-from-zero and segments are traced by integer DDA along the major
axis, which keeps a horizontally mirrored input exactly mirrored in pixels.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError

MAP_SIZE = 512
NUM_LANDMARKS = 73
MOUTH_POINTS = 25
STATIC_POINTS = NUM_LANDMARKS - MOUTH_POINTS
STATIC_SEGMENT_FRAMES = 240  # cross-fade period of the static component bank


@dataclass
class HeadPose:
    rotation: np.ndarray     # (3,) radians, applied x then y then z
    translation: np.ndarray  # (3,) millimeters

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.rotation, self.translation]).astype(np.float64)


@dataclass(frozen=True)
class CameraIntrinsics:
    focal_px: float
    cx_px: float
    cy_px: float

    def __post_init__(self) -> None:
        if self.focal_px <= 0:
            raise ConfigError(f"focal length must be positive, got {self.focal_px}")


@dataclass
class Billboard:
    points: np.ndarray        # (M, 3) rest positions, millimeters
    depth0: float             # nominal rest depth, must be positive
    alpha: float = 0.5        # fraction of head translation transferred

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 3:
            raise ConfigError(f"billboard needs at least 2 xyz points, got {pts.shape}")
        if self.depth0 <= 0:
            raise ConfigError(f"billboard depth must be positive, got {self.depth0}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"billboard alpha must be in [0, 1], got {self.alpha}")
        self.points = pts


@dataclass
class FaceRig:
    """Static face description: mean shape, mouth index set, wireframe."""

    mean_points: np.ndarray          # (73, 3) mean landmark positions
    mouth_indices: np.ndarray        # (25,) indices into mean_points
    topology: list[list[int]]        # polylines over landmarks + billboard points
    static_bank: list[np.ndarray] = field(default_factory=list)  # (48, 3) each

    def __post_init__(self) -> None:
        pts = np.asarray(self.mean_points, dtype=np.float64)
        if pts.shape != (NUM_LANDMARKS, 3):
            raise DataError(
                f"rig must have {NUM_LANDMARKS} xyz landmarks, got {pts.shape}"
            )
        self.mean_points = pts
        idx = np.asarray(self.mouth_indices, dtype=np.int64).reshape(-1)
        if idx.shape != (MOUTH_POINTS,):
            raise DataError(f"rig needs {MOUTH_POINTS} mouth indices, got {idx.shape}")
        if len(set(idx.tolist())) != MOUTH_POINTS:
            raise DataError("mouth indices must be distinct")
        if idx.min() < 0 or idx.max() >= NUM_LANDMARKS:
            raise DataError(
                f"mouth indices must lie in [0, {NUM_LANDMARKS}), got "
                f"[{idx.min()}, {idx.max()}]"
            )
        self.mouth_indices = idx
        comp = [i for i in range(NUM_LANDMARKS) if i not in set(idx.tolist())]
        self._static_indices = np.asarray(comp, dtype=np.int64)
        for i, entry in enumerate(self.static_bank):
            arr = np.asarray(entry, dtype=np.float64)
            if arr.shape != (STATIC_POINTS, 3):
                raise DataError(
                    f"static bank entry {i} must be ({STATIC_POINTS}, 3), "
                    f"got {arr.shape}"
                )
            self.static_bank[i] = arr

    @property
    def static_indices(self) -> np.ndarray:
        """Landmark indices not controlled by the mouth model, ascending."""
        return self._static_indices


def rotation_matrix(rotation: np.ndarray) -> np.ndarray:
    """R = Rz @ Ry @ Rx for per-axis angles in radians. float64 (3, 3)."""
    rx, ry, rz = np.asarray(rotation, dtype=np.float64).reshape(3)
    cx, sx = np.cos(rx), np.sin(rx)
    cy, sy = np.cos(ry), np.sin(ry)
    cz, sz = np.cos(rz), np.sin(rz)
    r_x = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    r_y = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    r_z = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return r_z @ r_y @ r_x


def apply_pose(points: np.ndarray, pose: HeadPose) -> np.ndarray:
    """Rotate then translate an (N, 3) point set. Returns float64."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise DataError(f"expected (N, 3) points, got {pts.shape}")
    r = rotation_matrix(pose.rotation)
    t = np.asarray(pose.translation, dtype=np.float64).reshape(3)
    return pts @ r.T + t


def project_points(points: np.ndarray, camera: CameraIntrinsics) -> np.ndarray:
    """Pinhole projection of (N, 3) camera-space points to (N, 2) pixels.

    Any point at or behind the camera plane (z <= 0) is an error that names
    the first offending point index.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise DataError(f"expected (N, 3) points, got {pts.shape}")
    z = pts[:, 2]
    behind = z <= 0.0
    if behind.any():
        i = int(np.argmax(behind))
        raise DataError(f"point {i} is behind the camera (z = {z[i]:.3f} mm)")
    uv = np.empty((pts.shape[0], 2), dtype=np.float64)
    uv[:, 0] = camera.focal_px * pts[:, 0] / z + camera.cx_px
    uv[:, 1] = camera.focal_px * pts[:, 1] / z + camera.cy_px
    return uv


def billboard_positions(billboard: Billboard, pose: HeadPose) -> np.ndarray:
    """Billboard points after following alpha of the head translation."""
    t = np.asarray(pose.translation, dtype=np.float64).reshape(3)
    return billboard.points + billboard.alpha * t


def static_sample_for_frame(rig: FaceRig, frame_index: int) -> np.ndarray:
    """Static (non-mouth) landmark positions for a frame, (48, 3) float64.

    With a non-empty bank, playback cross-fades linearly between consecutive
    bank entries over fixed-length segments, wrapping at the end of the bank.
    Without a bank, the rig's mean static positions are used unchanged.
    """
    if frame_index < 0:
        raise DataError(f"frame index must be >= 0, got {frame_index}")
    if not rig.static_bank:
        return rig.mean_points[rig.static_indices]
    n = len(rig.static_bank)
    seg, within = divmod(frame_index, STATIC_SEGMENT_FRAMES)
    u = within / STATIC_SEGMENT_FRAMES
    a = rig.static_bank[seg % n]
    b = rig.static_bank[(seg + 1) % n]
    return a * (1.0 - u) + b * u


def _round_half_away(values: np.ndarray) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    return (np.sign(v) * np.floor(np.abs(v) + 0.5)).astype(np.int64)


def line_pixels(x0: int, y0: int, x1: int, y1: int) -> np.ndarray:
    """Integer pixels of the segment (x0, y0)-(x1, y1), shape (L, 2).

    DDA along the major axis: one pixel per major-axis step, the minor
    coordinate rounded half-away-from-zero from the exact line equation.
    Both endpoints are included. The line is anchored at the segment
    midpoint, whose float arithmetic is symmetric under endpoint swap and
    coordinate negation, so reversed and mirrored segments rasterize to
    exactly mirrored pixel sets even where a rounding tie falls.
    """
    dx = x1 - x0
    dy = y1 - y0
    steps = max(abs(dx), abs(dy))
    if steps == 0:
        return np.array([[x0, y0]], dtype=np.int64)
    mid_x = (x0 + x1) / 2.0
    mid_y = (y0 + y1) / 2.0
    t = np.arange(steps + 1, dtype=np.float64)
    if abs(dx) >= abs(dy):
        xs = x0 + np.sign(dx) * t
        ys = _round_half_away(mid_y + (xs - mid_x) * (dy / dx))
        xs = xs.astype(np.int64)
    else:
        ys = y0 + np.sign(dy) * t
        xs = _round_half_away(mid_x + (ys - mid_y) * (dx / dy))
        ys = ys.astype(np.int64)
    return np.stack([xs, ys], axis=1)


@dataclass
class FeatureMap:
    pixels: np.ndarray      # (512, 512) uint8, row = y, column = x
    points2d: np.ndarray    # (N, 2) float64 projected points, pixel units


def rasterize(points2d: np.ndarray, topology: list[list[int]]) -> FeatureMap:
    """Draw topology polylines over projected points into a 512 x 512 map.

    Points may fall outside the image; out-of-bounds pixels are clipped away
    after tracing so partially visible segments still draw their visible run.
    A polyline of one point plots that single pixel.
    """
    pts = np.asarray(points2d, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise DataError(f"expected (N, 2) projected points, got {pts.shape}")
    n = pts.shape[0]
    image = np.zeros((MAP_SIZE, MAP_SIZE), dtype=np.uint8)
    rounded = _round_half_away(pts)
    for line_no, polyline in enumerate(topology):
        for idx in polyline:
            if not 0 <= idx < n:
                raise DataError(
                    f"topology line {line_no} references point {idx}, "
                    f"but only {n} points exist"
                )
        if len(polyline) == 1:
            segs = [rounded[polyline[0]][None, :]]
        else:
            segs = [
                line_pixels(*rounded[a], *rounded[b])
                for a, b in zip(polyline, polyline[1:])
            ]
        for seg in segs:
            xs, ys = seg[:, 0], seg[:, 1]
            keep = (xs >= 0) & (xs < MAP_SIZE) & (ys >= 0) & (ys < MAP_SIZE)
            image[ys[keep], xs[keep]] = 255
    return FeatureMap(pixels=image, points2d=pts)


def compose_frame(
    rig: FaceRig,
    mouth_delta: np.ndarray,
    static_points: np.ndarray,
    pose: HeadPose,
    billboard: Billboard,
    camera: CameraIntrinsics,
) -> FeatureMap:
    """Assemble and rasterize one frame.

    Landmarks = rig mean mouth points + predicted displacement at the mouth
    indices, the provided static sample elsewhere; all 73 are posed and
    projected. Billboard points translate by alpha * t, unposed, and extend
    the projected point list, so topology indices >= 73 address them.
    """
    delta = np.asarray(mouth_delta, dtype=np.float64)
    if delta.shape != (MOUTH_POINTS, 3):
        raise DataError(f"mouth displacement must be ({MOUTH_POINTS}, 3), got {delta.shape}")
    static = np.asarray(static_points, dtype=np.float64)
    if static.shape != (STATIC_POINTS, 3):
        raise DataError(f"static points must be ({STATIC_POINTS}, 3), got {static.shape}")
    landmarks = np.empty((NUM_LANDMARKS, 3), dtype=np.float64)
    landmarks[rig.mouth_indices] = rig.mean_points[rig.mouth_indices] + delta
    landmarks[rig.static_indices] = static
    posed = apply_pose(landmarks, pose)
    board = billboard_positions(billboard, pose)
    uv = project_points(np.vstack([posed, board]), camera)
    return rasterize(uv, rig.topology)


def select_candidates(records: np.ndarray) -> list[int]:
    """Pick 4 reference frame indices from (mouth_area, rot_x, rot_y) records.

    Order statistics damp outliers: the first two picks are the records with
    the 100th-smallest and 100th-largest mouth areas. The remaining two are
    the records nearest the quarter points of the observed rotation ranges
    (x-axis quarter points first, then y-axis), skipping already chosen
    records, until 4 are accumulated. Distance ties take the lower index.
    """
    arr = np.asarray(records, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise DataError(f"expected (N, 3) records, got {arr.shape}")
    n = arr.shape[0]
    if n < 200:
        raise DataError(f"need at least 200 records for rank-100 statistics, got {n}")
    area, rot_x, rot_y = arr[:, 0], arr[:, 1], arr[:, 2]

    rows = np.arange(n)
    asc = np.lexsort((rows, area))
    desc = np.lexsort((rows, -area))
    chosen = [int(asc[99])]
    for idx in desc[99:]:
        if int(idx) not in chosen:
            chosen.append(int(idx))
            break

    centers = []
    for axis in (rot_x, rot_y):
        lo, hi = float(axis.min()), float(axis.max())
        span = hi - lo
        centers.append((axis, lo + 0.25 * span))
        centers.append((axis, lo + 0.75 * span))
    for axis, center in centers:
        if len(chosen) == 4:
            break
        dist = np.abs(axis - center)
        for idx in np.lexsort((rows, dist)):
            if int(idx) not in chosen:
                chosen.append(int(idx))
                break
    return chosen


# PGM (binary P5) input and output, used for feature map artifacts.

def write_pgm(path: str, pixels: np.ndarray) -> None:
    img = np.asarray(pixels)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise DataError(f"PGM writer wants a 2-D uint8 array, got {img.shape} {img.dtype}")
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    with open(path, "wb") as f:
        f.write(header + img.tobytes())


def read_pgm(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(b"P5"):
        raise DataError(f"{path}: not a binary PGM file")
    fields: list[int] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":  # comment runs to end of line
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        token = data[start:pos]
        if not token.isdigit():
            raise DataError(f"{path}: malformed PGM header token {token!r}")
        fields.append(int(token))
    pos += 1  # single whitespace byte after maxval
    width, height, maxval = fields
    if maxval != 255:
        raise DataError(f"{path}: only maxval 255 is supported, got {maxval}")
    expected = width * height
    raw = data[pos:pos + expected]
    if len(raw) != expected:
        raise DataError(f"{path}: expected {expected} pixel bytes, got {len(raw)}")
    return np.frombuffer(raw, dtype=np.uint8).reshape(height, width).copy()


# Rig file format: one JSON document holding the rig and the billboard.

def save_rig(path: str, rig: FaceRig, billboard: Billboard) -> None:
    doc = {
        "mean_points": rig.mean_points.tolist(),
        "mouth_indices": rig.mouth_indices.tolist(),
        "topology": [list(map(int, line)) for line in rig.topology],
        "static_bank": [entry.tolist() for entry in rig.static_bank],
        "billboard": {
            "points": np.asarray(billboard.points).tolist(),
            "depth0": billboard.depth0,
            "alpha": billboard.alpha,
        },
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f)
        f.write("\n")


def load_rig(path: str) -> tuple[FaceRig, Billboard]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except OSError as e:
        raise DataError(f"cannot read rig file {path}: {e}") from None
    except json.JSONDecodeError as e:
        raise DataError(f"invalid JSON in rig file {path}: {e}") from None
    try:
        board_doc = doc["billboard"]
        billboard = Billboard(
            points=np.asarray(board_doc["points"], dtype=np.float64),
            depth0=float(board_doc["depth0"]),
            alpha=float(board_doc.get("alpha", 0.5)),
        )
        rig = FaceRig(
            mean_points=np.asarray(doc["mean_points"], dtype=np.float64),
            mouth_indices=np.asarray(doc["mouth_indices"], dtype=np.int64),
            topology=[list(map(int, line)) for line in doc["topology"]],
            static_bank=[
                np.asarray(e, dtype=np.float64) for e in doc.get("static_bank", [])
            ],
        )
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"rig file {path} is malformed: {e}") from None
    n_total = NUM_LANDMARKS + billboard.points.shape[0]
    for line_no, line in enumerate(rig.topology):
        if not line:
            raise DataError(f"rig file {path}: topology line {line_no} is empty")
        for idx in line:
            if not 0 <= idx < n_total:
                raise DataError(
                    f"rig file {path}: topology line {line_no} references point "
                    f"{idx}, valid range is [0, {n_total})"
                )
    return rig, billboard


def demo_rig(n_bank: int = 3, seed: int = 7) -> tuple[FaceRig, Billboard, CameraIntrinsics]:
    """Deterministic synthetic rig for demos and tests.

    An oval face outline, brows, nose, eyes, and two mouth rings laid out in
    millimeters around the origin, placed about a meter from the camera. The
    static bank holds slightly perturbed copies of the static landmarks so
    bank cross-fading is exercised.
    """
    rng = np.random.default_rng(seed)
    pts = np.zeros((NUM_LANDMARKS, 3), dtype=np.float64)

    jaw_t = np.linspace(-np.pi * 0.82, np.pi * 0.82, 17)
    pts[0:17, 0] = 85.0 * np.sin(jaw_t)
    pts[0:17, 1] = 15.0 + 95.0 * np.cos(jaw_t)
    pts[0:17, 2] = 18.0 * (1.0 - np.abs(np.sin(jaw_t)))

    for side, base in ((-1.0, 17), (1.0, 22)):
        xs = side * np.linspace(18.0, 62.0, 5)
        pts[base:base + 5, 0] = xs
        pts[base:base + 5, 1] = -52.0 - 6.0 * np.sin(np.linspace(0.2, np.pi - 0.2, 5))
        pts[base:base + 5, 2] = 8.0

    pts[27:32, 0] = 0.0
    pts[27:32, 1] = np.linspace(-45.0, 8.0, 5)
    pts[27:32, 2] = np.linspace(26.0, 42.0, 5)
    pts[32:36, 0] = np.array([-14.0, -6.0, 6.0, 14.0])
    pts[32:36, 1] = 14.0
    pts[32:36, 2] = 30.0

    eye_t = np.linspace(0.0, 2.0 * np.pi, 6, endpoint=False)
    for side, base in ((-1.0, 36), (1.0, 42)):
        pts[base:base + 6, 0] = side * 38.0 + 14.0 * np.cos(eye_t)
        pts[base:base + 6, 1] = -30.0 + 7.0 * np.sin(eye_t)
        pts[base:base + 6, 2] = 16.0

    outer_t = np.linspace(0.0, 2.0 * np.pi, 13, endpoint=False)
    pts[48:61, 0] = 26.0 * np.cos(outer_t)
    pts[48:61, 1] = 52.0 + 13.0 * np.sin(outer_t)
    pts[48:61, 2] = 22.0
    inner_t = np.linspace(0.0, 2.0 * np.pi, 12, endpoint=False)
    pts[61:73, 0] = 16.0 * np.cos(inner_t)
    pts[61:73, 1] = 52.0 + 7.0 * np.sin(inner_t)
    pts[61:73, 2] = 24.0

    # Camera-space placement: about one meter out, centered.
    pts[:, 2] += 1000.0

    mouth_indices = np.arange(48, 73, dtype=np.int64)
    topology = [
        list(range(0, 17)),                  # jaw
        list(range(17, 22)),                 # left brow
        list(range(22, 27)),                 # right brow
        list(range(27, 32)),                 # nose bridge
        list(range(32, 36)),                 # nose base
        list(range(36, 42)) + [36],          # left eye ring
        list(range(42, 48)) + [42],          # right eye ring
        list(range(48, 61)) + [48],          # outer lip ring
        list(range(61, 73)) + [61],          # inner lip ring
        [73, 74, 75, 76, 77],                # shoulder line (billboard)
    ]

    board_x = np.linspace(-150.0, 150.0, 5)
    board = np.stack(
        [board_x, np.full(5, 150.0), np.full(5, 1100.0)], axis=1
    )
    billboard = Billboard(points=board, depth0=1100.0, alpha=0.5)

    static_template = pts[np.setdiff1d(np.arange(NUM_LANDMARKS), mouth_indices)]
    bank = [
        static_template + rng.normal(scale=1.5, size=static_template.shape)
        for _ in range(max(0, n_bank))
    ]

    rig = FaceRig(
        mean_points=pts,
        mouth_indices=mouth_indices,
        topology=topology,
        static_bank=bank,
    )
    camera = CameraIntrinsics(focal_px=1200.0, cx_px=256.0, cy_px=256.0)
    return rig, billboard, camera
