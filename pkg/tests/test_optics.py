import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import brute_force_optics, brute_force_silhouette
from intentcache.errors import ParseError, UndefinedMetricError
from intentcache.optics import (
    INF,
    NOISE,
    ClusterAssignment,
    DensityEstimate,
    PointSet,
    core_distances,
    ek_optics,
    epanechnikov,
    epanechnikov_density,
    extract_clusters,
    fixed_optics,
    optics_order,
    parse_store,
    read_store,
    select_epsilon,
    select_min_pts,
    silhouette,
    to_records,
    write_store,
)


def line(*xs):
    return PointSet(np.array(xs, dtype=float).reshape(-1, 1))


def test_kernel_values():
    assert epanechnikov(0.0) == 0.75
    assert epanechnikov(1.0) == 0.0
    assert epanechnikov(0.5) == 0.5625
    assert epanechnikov(-2.0) == 0.0


def test_density_and_epsilon_hand_example():
    ps = line(0.0, 0.5, 2.0)
    de = epanechnikov_density(ps, h=1.0)
    assert de.density[0] == pytest.approx(0.28125, abs=1e-15)
    assert de.density[2] == 0.0
    assert select_epsilon(ps, de, beta=0.5) == pytest.approx(1.5)


def test_density_preconditions():
    with pytest.raises(ValueError):
        epanechnikov_density(line(0.0), h=1.0)
    with pytest.raises(ValueError):
        epanechnikov_density(line(0.0, 1.0), h=0.0)


def test_epsilon_fallback_and_minimum():
    ps = line(0.0, 1.0, 2.0, 3.0)
    flat = DensityEstimate(np.full(4, 0.5), 1.0)
    assert select_epsilon(ps, flat, 0.5) == 1.0  # median nearest-neighbour distance
    ps = line(0.0, 1.5, 10.0, 10.9)
    de = DensityEstimate(np.array([0.1, 0.1, 0.1, 1.0]), 1.0)
    # sparse points 0, 1, 2 have nearest-neighbour distances 1.5, 1.5, 0.9
    assert select_epsilon(ps, de, 0.5) == pytest.approx(0.9)
    with pytest.raises(ValueError):
        select_epsilon(ps, de, 1.0)


@pytest.mark.parametrize("alpha, max_density, expected", [(5, 0.75, 4), (0.1, 0.7, 2), (4, 0.5, 2), (5, 0.5, 3)])
def test_select_min_pts(alpha, max_density, expected):
    assert select_min_pts(DensityEstimate(np.array([0.0, max_density]), 1.0), alpha) == expected


def test_select_min_pts_rounds_half_up():
    assert select_min_pts(DensityEstimate(np.array([0.5]), 1.0), 5.0) == 3  # 2.5 -> 3


def test_optics_trace_four_points():
    ro = optics_order(line(0.0, 1.0, 2.0, 10.0), min_pts=2, epsilon=3.0)
    assert ro.core_distance[0] == 2.0
    assert ro.order == [0, 1, 2, 3]
    # point 2 is reached from point 1 (core distance 1, gap 1), so its value is 1
    assert ro.reachability_in_order() == [INF, 2.0, 1.0, INF]
    ca = extract_clusters(ro, 3.0)
    assert list(ca.labels) == [0, 0, 0, NOISE]


def test_optics_without_core_points_keeps_index_order():
    ro = optics_order(line(0.0, 10.0, 20.0, 30.0), min_pts=2, epsilon=1.0)
    assert ro.order == [0, 1, 2, 3]
    assert all(r == INF for r in ro.reachability)


def test_dense_pair_is_symmetric():
    ro = optics_order(line(0.0, 1.0, 1.5), min_pts=2, epsilon=5.0)
    order, core, reach = brute_force_optics(np.array([[0.0], [1.0], [1.5]]), 2, 5.0)
    assert ro.order == order
    assert list(ro.core_distance) == core


def test_optics_preconditions():
    with pytest.raises(ValueError):
        optics_order(line(0.0, 1.0), 1, 1.0)
    with pytest.raises(ValueError):
        optics_order(line(0.0, 1.0), 2, 0.0)


def test_optics_matches_brute_force_on_random_sets():
    rng = np.random.default_rng(12345)
    for trial in range(200):
        z = int(rng.integers(2, 9))
        dim = int(rng.integers(1, 4))
        # a coarse grid produces plenty of distance ties
        points = rng.integers(0, 5, size=(z, dim)).astype(float) if trial % 2 else rng.normal(size=(z, dim))
        min_pts = int(rng.integers(2, max(3, z)))
        eps = float(rng.uniform(0.5, 4.0))
        ro = optics_order(PointSet(points), min_pts, eps)
        order, core, reach = brute_force_optics(points, min_pts, eps)
        assert ro.order == order, trial
        assert list(ro.core_distance) == core, trial
        assert list(ro.reachability) == reach, trial


@given(st.integers(0, 10_000), st.floats(0.1, 3.0), st.floats(0.0, 3.0))
@settings(max_examples=80, deadline=None)
def test_ordering_invariants(seed, eps, grow):
    rng = np.random.default_rng(seed)
    ps = PointSet(rng.normal(size=(int(rng.integers(2, 12)), 2)))
    ro = optics_order(ps, 2, eps)
    assert sorted(ro.order) == list(range(ps.z))
    assert ro.reachability[ro.order[0]] == INF
    # enlarging epsilon never turns a core point non-core
    wider = core_distances(ps, 2, eps + grow)
    assert np.all(np.isfinite(wider[np.isfinite(ro.core_distance)]))


@given(st.integers(0, 10_000))
@settings(max_examples=50, deadline=None)
def test_density_is_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(int(rng.integers(2, 10)), 3))
    perm = rng.permutation(len(pts))
    a = epanechnikov_density(PointSet(pts)).density
    b = epanechnikov_density(PointSet(pts[perm])).density
    np.testing.assert_allclose(a[perm], b, atol=1e-12)
    assert np.all(a >= 0)


def test_extract_edge_cuts():
    ro = optics_order(line(0.0, 1.0, 2.0, 10.0), 2, 3.0)
    assert list(extract_clusters(ro, INF).labels) == [0, 0, 0, 0]
    assert list(extract_clusters(ro, 0.5).labels) == [NOISE] * 4
    with pytest.raises(ValueError):
        extract_clusters(ro, 0.0)


def test_silhouette_examples():
    ps = line(0.0, 0.1, 10.0, 10.1)
    score = silhouette(ps, ClusterAssignment(np.array([0, 0, 1, 1]), 1.0))
    expected = np.mean([1 - 0.1 / 10.05, 1 - 0.1 / 9.95, 1 - 0.1 / 9.95, 1 - 0.1 / 10.05])
    assert score == pytest.approx(expected, abs=1e-12)
    assert score == pytest.approx(0.9900, abs=1e-4) and score > 0.98
    coincident = line(0.0, 0.0, 5.0, 5.0)
    assert silhouette(coincident, ClusterAssignment(np.array([0, 0, 1, 1]), 1.0)) == 1.0
    # the middle point sits at a = b
    assert silhouette(line(0.0, 1.0, 2.0), ClusterAssignment(np.array([0, 0, 1]), 1.0)) == pytest.approx(
        np.mean([0.5, 0.0, 0.0])
    )
    with pytest.raises(UndefinedMetricError):
        silhouette(ps, ClusterAssignment(np.array([0, 0, 0, NOISE]), 1.0))


def test_silhouette_matches_brute_force_and_sklearn():
    sk = pytest.importorskip("sklearn.metrics")
    rng = np.random.default_rng(7)
    for _ in range(100):
        z = int(rng.integers(3, 15))
        pts = rng.normal(size=(z, 2))
        labels = rng.integers(-1, 3, size=z)
        clustered = labels[labels != NOISE]
        if len(set(clustered)) < 2:
            continue
        ours = silhouette(PointSet(pts), ClusterAssignment(labels, 1.0))
        assert abs(ours - brute_force_silhouette(pts, labels)) <= 1e-9
        assert -1.0 <= ours <= 1.0
        mask = labels != NOISE
        if len(set(clustered)) < mask.sum():
            assert abs(ours - sk.silhouette_score(pts[mask], labels[mask])) <= 1e-9


def test_ek_selection_beats_naive_parameters_on_blobs(blobs):
    points, _ = blobs
    ps = PointSet(points)
    ek = ek_optics(ps)
    naive = fixed_optics(ps, 2, ps.norm_scale)
    assert ek.silhouette is not None
    naive_score = -1.0 if naive.silhouette is None else naive.silhouette
    assert ek.silhouette >= naive_score
    assert ek.assignment.n_clusters == 3
    assert ek.ct_ms >= 0


def test_store_round_trip(tmp_path):
    ps = line(0.0, 1.0, 2.0, 10.0)
    result = fixed_optics(ps, 2, 3.0)
    records = to_records([11, 12, 13, 14], ps, result)
    write_store(tmp_path / "s.tsv", records)
    assert read_store(tmp_path / "s.tsv") == records
    assert records[0].reachability == INF and records[3].label == NOISE
    with pytest.raises(ParseError) as exc:
        parse_store("1\t0\tinf\n")
    assert exc.value.line == 1
    with pytest.raises(ParseError):
        parse_store("1\t0\tx\t1.0\n")


def test_norm_scale():
    assert line(0.0, 3.0, 1.0).norm_scale == 3.0
    assert math.isclose(PointSet(np.array([[0.0, 0.0], [3.0, 4.0]])).norm_scale, 5.0)
