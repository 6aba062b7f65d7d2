"""Nearest-neighbor search and locally linear projection.

The weight solver has a closed form in low dimensions: for two neighbors at
offsets a and b from the query, the Gram system gives

    w_a = (b.b - a.b) / (a.a + b.b - 2 a.b),   w_b = 1 - w_a

which is the perpendicular foot of the query on the segment's line. Those
hand-derived cases anchor the solver; the rest is checked by optimality
(no perturbation of the weights may reconstruct better) and by recovery of
points that lie exactly in a neighborhood's affine span.
"""

from __future__ import annotations

import numpy as np
import pytest

from reference_impls import exhaustive_knn
from speechmotion.errors import DataError
from speechmotion.manifold import (
    DB_TENSOR_NAME,
    ReprDatabase,
    build_database,
    database_from_store,
    knn,
    lle_project,
    load_raw_database,
    save_database,
)
from speechmotion.weights import WeightStore, load_weights, save_weights


def _db(rows) -> ReprDatabase:
    return build_database(np.asarray(rows, dtype=np.float32))


def test_knn_matches_exhaustive_scan():
    rng = np.random.default_rng(51)
    feats = rng.standard_normal((300, 16)).astype(np.float32)
    db = build_database(feats)
    for _ in range(25):
        q = rng.standard_normal(16).astype(np.float32)
        idx, dist = knn(db, q, 8)
        assert list(idx) == exhaustive_knn(feats, q, 8)
        assert np.all(np.diff(dist) >= 0.0)


def test_knn_ties_resolve_to_lower_index():
    # Rows 0, 2, 5 are identical; equidistant rows must surface in index order.
    feats = np.zeros((6, 4), dtype=np.float32)
    feats[1] = 10.0
    feats[3] = 20.0
    feats[4] = 30.0
    idx, dist = knn(_db(feats), np.zeros(4), 3)
    assert list(idx) == [0, 2, 5]
    np.testing.assert_allclose(dist, 0.0, atol=1e-12)


def test_knn_with_duplicates_of_the_query():
    rng = np.random.default_rng(52)
    feats = rng.standard_normal((40, 8)).astype(np.float32)
    feats[17] = feats[3]
    q = feats[3]
    idx, _ = knn(_db(feats), q, 2)
    assert list(idx) == [3, 17]


def test_knn_validates_k_and_query():
    db = _db(np.eye(4))
    with pytest.raises(DataError, match="exceeds"):
        knn(db, np.zeros(4), 5)
    with pytest.raises(DataError):
        knn(db, np.zeros(4), 0)
    with pytest.raises(DataError, match="dims"):
        knn(db, np.zeros(3), 2)
    with pytest.raises(DataError, match="finite"):
        knn(db, np.array([np.nan, 0, 0, 0]), 2)


def test_exact_match_returns_one_hot_weights():
    rng = np.random.default_rng(53)
    feats = rng.standard_normal((50, 12)).astype(np.float32)
    db = build_database(feats)
    res = lle_project(db, feats[20], k=5)
    assert res.indices[0] == 20
    np.testing.assert_array_equal(res.weights, [1.0, 0.0, 0.0, 0.0, 0.0])
    np.testing.assert_array_equal(res.reconstructed, feats[20])
    assert res.residual == 0.0


def test_weights_always_sum_to_one():
    rng = np.random.default_rng(54)
    feats = rng.standard_normal((200, 24)).astype(np.float32)
    db = build_database(feats)
    for _ in range(50):
        q = rng.standard_normal(24)
        res = lle_project(db, q, k=10)
        assert res.weights.sum() == pytest.approx(1.0, abs=1e-9)


def test_two_neighbor_closed_form():
    # Neighbors at (1, 0) and (0, 1), query at origin: by symmetry the
    # closed form gives w = (0.5, 0.5) and reconstruction (0.5, 0.5).
    feats = np.array(
        [[1.0, 0.0], [0.0, 1.0], [50.0, 50.0], [-60.0, 40.0]], dtype=np.float32
    )
    res = lle_project(_db(feats), np.zeros(2), k=2)
    assert set(res.indices.tolist()) == {0, 1}
    np.testing.assert_allclose(res.weights, [0.5, 0.5], atol=1e-6)
    np.testing.assert_allclose(res.reconstructed, [0.5, 0.5], atol=1e-6)
    assert res.residual == pytest.approx(np.sqrt(0.5), abs=1e-6)


def test_asymmetric_two_neighbor_closed_form():
    # Offsets a = (1, 1), b = (3, -1): w_a = (b.b - a.b)/(a.a + b.b - 2 a.b)
    # = (10 - 2)/(2 + 10 - 4) = 1.0, so the solution sits entirely on a.
    feats = np.array([[1.0, 1.0], [3.0, -1.0], [90.0, 90.0]], dtype=np.float32)
    res = lle_project(_db(feats), np.zeros(2), k=2)
    np.testing.assert_allclose(res.weights, [1.0, 0.0], atol=1e-6)
    np.testing.assert_allclose(res.reconstructed, [1.0, 1.0], atol=1e-6)


def test_collinear_neighbors_stay_well_posed():
    # Both neighbors on the x axis; the query's y component is unreachable.
    # The in-line coordinate must still be matched exactly: the foot of
    # (0.25, 1) on the x axis is x = 0.25, giving w = (0.75, 0.25).
    feats = np.array([[0.0, 0.0], [1.0, 0.0], [80.0, 80.0]], dtype=np.float32)
    res = lle_project(_db(feats), np.array([0.25, 1.0]), k=2)
    np.testing.assert_allclose(res.weights, [0.75, 0.25], atol=1e-6)
    np.testing.assert_allclose(res.reconstructed, [0.25, 0.0], atol=1e-6)
    assert res.residual == pytest.approx(1.0, abs=1e-6)


def test_affine_span_membership_reconstructs_exactly():
    # Query built as an affine combination of its own neighborhood must be
    # recovered with near-zero residual.
    rng = np.random.default_rng(55)
    feats = rng.standard_normal((30, 6)).astype(np.float32)
    db = build_database(feats)
    mixes = [
        np.array([0.25, 0.25, 0.25, 0.25]),
        np.array([0.7, 0.2, 0.05, 0.05]),
        np.array([1.4, -0.2, -0.1, -0.1]),  # affine, outside the hull
    ]
    for trial in range(10):
        rows = rng.choice(30, size=4, replace=False)
        w = mixes[trial % len(mixes)]
        q = w @ feats[rows].astype(np.float64)
        res = lle_project(db, q, k=db.size)  # neighborhood covers the rows
        scale = max(1.0, float(np.linalg.norm(q)))
        assert res.residual / scale < 1e-5


def test_member_of_database_reconstructs_with_tiny_relative_error():
    rng = np.random.default_rng(56)
    feats = rng.standard_normal((100, 16)).astype(np.float32)
    db = build_database(feats)
    for row in (0, 13, 99):
        res = lle_project(db, feats[row], k=6)
        rel = res.residual / max(1.0, float(np.linalg.norm(feats[row])))
        assert rel < 1e-5


def test_projection_weights_are_optimal():
    # Any small perturbation that keeps sum(w) = 1 must not reconstruct
    # the query better than the solver's weights.
    rng = np.random.default_rng(57)
    feats = rng.standard_normal((60, 5)).astype(np.float32)
    db = build_database(feats)
    q = rng.standard_normal(5)
    res = lle_project(db, q, k=4)
    neighbors = feats[res.indices].astype(np.float64)
    base = np.linalg.norm(q - res.weights @ neighbors)
    for _ in range(200):
        d = rng.standard_normal(4) * 1e-3
        d -= d.mean()  # keep the sum-to-one constraint
        perturbed = np.linalg.norm(q - (res.weights + d) @ neighbors)
        assert perturbed >= base - 1e-12


def test_negative_weights_occur_for_exterior_queries():
    # A query outside the convex hull of its neighbors needs extrapolation.
    rng = np.random.default_rng(58)
    feats = rng.standard_normal((120, 8)).astype(np.float32)
    db = build_database(feats)
    saw_negative = False
    for _ in range(40):
        q = rng.standard_normal(8) * 3.0
        res = lle_project(db, q, k=6)
        saw_negative = saw_negative or bool(np.any(res.weights < 0.0))
    assert saw_negative


def test_database_validation():
    with pytest.raises(DataError, match="2-D"):
        build_database(np.zeros(5, dtype=np.float32))
    with pytest.raises(DataError, match="2-D"):
        build_database(np.zeros((0, 5), dtype=np.float32))
    with pytest.raises(DataError, match="finite"):
        build_database(np.full((2, 2), np.inf, dtype=np.float32))


def test_store_round_trip(tmp_path):
    rng = np.random.default_rng(59)
    db = build_database(rng.standard_normal((20, 7)).astype(np.float32))
    store = WeightStore()
    save_database(db, store)
    assert DB_TENSOR_NAME in store
    path = str(tmp_path / "db.bin")
    save_weights(store, path)
    back = database_from_store(load_weights(path))
    np.testing.assert_array_equal(back.features, db.features)


def test_raw_database_loader(tmp_path):
    rng = np.random.default_rng(60)
    feats = rng.standard_normal((12, 5)).astype("<f4")
    raw = tmp_path / "feats.f32"
    raw.write_bytes(feats.tobytes())
    (tmp_path / "feats.f32.json").write_text('{"rows": 12}')
    db = load_raw_database(str(raw))
    assert (db.size, db.dim) == (12, 5)
    np.testing.assert_array_equal(db.features, feats)

    (tmp_path / "feats.f32.json").write_text('{"rows": 7}')
    with pytest.raises(DataError, match="divide"):
        load_raw_database(str(raw))
    (tmp_path / "feats.f32.json").write_text('{"rows": -1}')
    with pytest.raises(DataError, match="positive"):
        load_raw_database(str(raw))
    (tmp_path / "feats.f32.json").write_text("{nope")
    with pytest.raises(DataError, match="JSON"):
        load_raw_database(str(raw))
    with pytest.raises(DataError, match="sidecar"):
        load_raw_database(str(tmp_path / "absent.f32"))
