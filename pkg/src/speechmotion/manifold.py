"""Projection of a query representation onto a database manifold.

Given a database of N feature rows and a query h, the projection finds the K
nearest rows by Euclidean distance, solves for barycentric-style weights that
best reconstruct h from those rows subject to sum(w) = 1 (weights may be
negative), and returns the weighted reconstruction. The weight system is the
K x K Gram matrix of neighbor offsets:

    C[a, b] = (f_a - h) . (f_b - h)        solve  C w = 1,  then w /= sum(w)

C is regularized by a trace-scaled ridge so rank-deficient neighborhoods
(collinear or duplicated neighbors) stay solvable; the ridge is small enough
(1e-10 * trace / K) to leave well-posed solutions unchanged at f64 precision.

Distances are computed in float64 off a cached copy of the database: nearest
ranks in high-dimensional data are separated by gaps comparable to float32
cancellation error, and the neighbor sets are part of the output contract.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import DataError
from .weights import WeightStore

DEFAULT_K = 10
EXACT_MATCH_DIST = 1e-12
RIDGE_EPS = 1e-10

DB_TENSOR_NAME = "manifold.db"


class ReprDatabase:
    """Immutable row matrix plus cached float64 geometry for queries."""

    def __init__(self, features: np.ndarray):
        arr = np.asarray(features)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DataError(f"database must be a non-empty 2-D matrix, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DataError("database contains non-finite values")
        self.features = np.ascontiguousarray(arr, dtype=np.float32)
        self._f64 = self.features.astype(np.float64)
        self._row_sq = np.einsum("ij,ij->i", self._f64, self._f64)

    @property
    def size(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def _as_query(db: ReprDatabase, h: np.ndarray) -> np.ndarray:
    q = np.asarray(h, dtype=np.float64).reshape(-1)
    if q.shape != (db.dim,):
        raise DataError(f"query must have {db.dim} dims, got {q.shape[0]}")
    if not np.all(np.isfinite(q)):
        raise DataError("query contains non-finite values")
    return q


def knn(db: ReprDatabase, h: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Indices and distances of the k nearest rows, ascending by distance.

    Ties resolve to the lower row index (stable ordering).
    """
    if k < 1:
        raise DataError(f"k must be >= 1, got {k}")
    if k > db.size:
        raise DataError(f"k={k} exceeds database size {db.size}")
    q = _as_query(db, h)
    d2 = db._row_sq - 2.0 * (db._f64 @ q) + q @ q
    np.maximum(d2, 0.0, out=d2)
    # Full stable sort rather than argpartition: boundary ties must resolve
    # to the lower row index, and partitioning picks arbitrary tied members.
    order = np.argsort(d2, kind="stable")[:k]
    # The norm trick cancels catastrophically near zero (a database member
    # can come back at ~1e-7 instead of 0), so recompute the k selected
    # distances from explicit differences and order by those.
    diffs = db._f64[order] - q
    exact = np.einsum("ij,ij->i", diffs, diffs)
    resort = np.lexsort((order, exact))
    order = order[resort]
    return order.astype(np.int64), np.sqrt(exact[resort])


class ProjectionResult:
    """Neighbor indices, mixing weights, reconstruction, and residual."""

    def __init__(
        self,
        indices: np.ndarray,
        weights: np.ndarray,
        reconstructed: np.ndarray,
        residual: float,
    ):
        self.indices = indices            # (k,) int64, ascending distance
        self.weights = weights            # (k,) float64, sums to 1
        self.reconstructed = reconstructed  # (dim,) float32
        self.residual = residual          # euclidean norm of h - reconstruction


def lle_project(db: ReprDatabase, h: np.ndarray, k: int = DEFAULT_K) -> ProjectionResult:
    """Project h onto the locally linear patch spanned by its k neighbors."""
    idx, dist = knn(db, h, k)
    q = _as_query(db, h)

    if dist[0] < EXACT_MATCH_DIST:
        weights = np.zeros(k, dtype=np.float64)
        weights[0] = 1.0
        recon = db._f64[idx[0]]
    else:
        neighbors = db._f64[idx]            # (k, dim)
        offsets = neighbors - q             # (k, dim)
        gram = offsets @ offsets.T          # (k, k)
        trace = float(np.trace(gram))
        ridge = RIDGE_EPS * trace / k if trace > 0.0 else RIDGE_EPS
        gram[np.diag_indices(k)] += ridge
        ones = np.ones(k, dtype=np.float64)
        try:
            weights = np.linalg.solve(gram, ones)
        except np.linalg.LinAlgError:
            weights, *_ = np.linalg.lstsq(gram, ones, rcond=None)
        total = weights.sum()
        if total == 0.0 or not np.isfinite(total):
            # Pathological neighborhood; fall back to uniform mixing.
            weights = ones / k
        else:
            weights = weights / total
        recon = weights @ neighbors

    residual = float(np.linalg.norm(q - recon))
    return ProjectionResult(
        indices=idx,
        weights=weights,
        reconstructed=recon.astype(np.float32),
        residual=residual,
    )


def build_database(features: np.ndarray) -> ReprDatabase:
    """Wrap a feature matrix, preserving row order and duplicates."""
    return ReprDatabase(features)


def save_database(db: ReprDatabase, store: WeightStore) -> None:
    store.add(DB_TENSOR_NAME, db.features)


def database_from_store(store: WeightStore) -> ReprDatabase:
    return ReprDatabase(store.get(DB_TENSOR_NAME))


def load_raw_database(path: str) -> ReprDatabase:
    """Load rows from raw little-endian float32 with a JSON sidecar.

    The sidecar ``<path>.json`` must contain {"rows": N}; the feature width
    is inferred from the file size, which must divide evenly.
    """
    sidecar = path + ".json"
    try:
        with open(sidecar, "r", encoding="utf-8") as f:
            meta = json.load(f)
    except OSError as e:
        raise DataError(f"cannot read database sidecar {sidecar}: {e}") from None
    except json.JSONDecodeError as e:
        raise DataError(f"invalid JSON in {sidecar}: {e}") from None
    rows = meta.get("rows")
    if not isinstance(rows, int) or rows < 1:
        raise DataError(f"{sidecar}: 'rows' must be a positive integer")
    flat = np.fromfile(path, dtype="<f4")
    if flat.size == 0 or flat.size % rows != 0:
        raise DataError(
            f"{path}: {flat.size} values do not divide into {rows} rows"
        )
    return ReprDatabase(flat.reshape(rows, flat.size // rows))
