import math

import numpy as np
import pytest
from oracles import assignment_cost, brute_force_assignment, ray_march, union_find_segments

from usvnav.dynamics import Pose2D
from usvnav.perception import (
    CameraModel,
    Circle,
    Cluster,
    Detection,
    LaserScan,
    Polygon,
    ScanGeometry,
    World,
    buoy_bbox,
    filter_outliers,
    fuse,
    hungarian,
    iou,
    match_detections,
    project_cluster,
    segment_scan,
    simulate_camera_detections,
    simulate_lidar,
)

FULL = ScanGeometry(-math.pi, 2 * math.pi / 720, 720, 40.0)
CAM = CameraModel(fx=500, fy=500, cx=640, cy=360, width=1280, height=720, mount_z=1.5)
ORIGIN = Pose2D(0, 0, 0)


def scan_of(ranges, inc=0.01):
    return LaserScan(0.0, inc, 100.0, np.asarray(ranges, float))


# ---------------------------------------------------------------- lidar


def test_empty_world_all_inf():
    s = simulate_lidar(World(), ORIGIN, FULL)
    assert np.all(np.isinf(s.ranges))


def test_unit_circle_ahead():
    geo = ScanGeometry(0.0, 0.01, 3, 40.0)
    s = simulate_lidar(World(obstacles=(Circle(5, 0, 1),)), ORIGIN, geo)
    assert s.ranges[0] == pytest.approx(4.0, abs=1e-12)


def test_lidar_seeded_noise_deterministic():
    w = World(obstacles=(Circle(5, 0, 1),))
    a = simulate_lidar(w, ORIGIN, FULL, 0.05, rng=3)
    b = simulate_lidar(w, ORIGIN, FULL, 0.05, rng=3)
    c = simulate_lidar(w, ORIGIN, FULL, 0.05, rng=4)
    assert np.array_equal(a.ranges, b.ranges)
    assert not np.array_equal(a.ranges, c.ranges)


def test_lidar_matches_ray_march():
    rng = np.random.default_rng(0)
    geo = ScanGeometry(-math.pi, 2 * math.pi / 24, 24, 15.0)
    for _ in range(4):
        shapes = [Circle(*rng.uniform(-10, 10, 2), rng.uniform(0.3, 2)) for _ in range(3)]
        x0, y0 = rng.uniform(-10, 10, 2)
        shapes.append(Polygon(((x0, y0), (x0 + 2, y0), (x0 + 2, y0 + 1.5), (x0, y0 + 1.5))))
        origin = (0.0, 0.0)
        if any(math.hypot(c.x, c.y) <= c.r for c in shapes[:3]) or (x0 <= 0 <= x0 + 2 and y0 <= 0 <= y0 + 1.5):
            continue
        scan = simulate_lidar(World(obstacles=tuple(shapes)), ORIGIN, geo)
        for a, r in zip(scan.angles, scan.ranges):
            ref = ray_march(shapes, origin, (math.cos(a), math.sin(a)), geo.range_max, step=0.01)
            if math.isinf(ref):
                assert math.isinf(r)
            else:
                assert r == pytest.approx(ref, abs=1e-6)


def test_scan_validation():
    with pytest.raises(ValueError):
        LaserScan(0, 0.1, 10, [1.0, np.nan])
    with pytest.raises(ValueError):
        LaserScan(0, 0.1, 10, [1.0, 20.0])
    with pytest.raises(ValueError):
        LaserScan(0, -0.1, 10, [1.0, 2.0])


# ---------------------------------------------------------------- outliers


def test_outlier_clean_scan_unchanged():
    r = 5 + 0.1 * np.sin(np.linspace(0, 3, 50))
    s = scan_of(r)
    assert np.array_equal(filter_outliers(s).ranges, s.ranges)


def test_outlier_single_spike_removed():
    r = np.full(20, 5.0)
    r[7] = 50.0
    out = filter_outliers(scan_of(r), k=1, dist_thresh=1.0).ranges
    assert math.isinf(out[7])
    assert np.all(np.delete(out, 7) == 5.0)


def test_outlier_injected_spikes():
    rng = np.random.default_rng(1)
    for _ in range(50):
        n = 120
        r = 8 + 2 * np.sin(np.linspace(0, rng.uniform(1, 4), n))
        idx = rng.choice(np.arange(2, n - 2, 3), size=5, replace=False)
        r[idx] += rng.choice([-1, 1], 5) * rng.uniform(3, 6, 5)
        out = filter_outliers(scan_of(r), k=1, dist_thresh=1.0).ranges
        assert set(np.flatnonzero(np.isinf(out))) == set(idx)


def test_outlier_rejects_bad_k():
    with pytest.raises(ValueError):
        filter_outliers(scan_of([1, 2, 3]), k=0)


# ---------------------------------------------------------------- segmentation


def test_two_separated_circles():
    w = World(obstacles=(Circle(5, 5, 1), Circle(5, -5, 1)))
    clusters = segment_scan(simulate_lidar(w, ORIGIN, FULL))
    assert len(clusters) == 2


def test_all_inf_no_clusters():
    assert segment_scan(scan_of(np.full(10, np.inf))) == []


def test_wraparound_merges_across_seam():
    # object straddles angle +-pi of a full-circle scan
    w = World(obstacles=(Circle(-6, 0, 1),))
    clusters = segment_scan(simulate_lidar(w, ORIGIN, FULL))
    assert len(clusters) == 1
    idx = clusters[0].indices
    assert 0 in idx and FULL.n_beams - 1 in idx


def test_min_points_drops_singletons():
    r = np.full(10, np.inf)
    r[3] = 5.0
    r[6:8] = 5.0
    assert [c.indices for c in segment_scan(scan_of(r), min_points=2)] == [(6, 7)]
    assert len(segment_scan(scan_of(r), min_points=1)) == 2


def test_segmentation_matches_union_find():
    rng = np.random.default_rng(5)
    for _ in range(40):
        k = rng.integers(1, 6)
        shapes = tuple(Circle(*rng.uniform(-15, 15, 2), rng.uniform(0.2, 1.5)) for _ in range(k))
        if any(math.hypot(c.x, c.y) <= c.r + 0.1 for c in shapes):
            continue
        scan = simulate_lidar(World(obstacles=shapes), ORIGIN, FULL, 0.02, rng)
        got = sorted(sorted(c.indices) for c in segment_scan(scan, 0.3, 0.05, 2))
        ref = union_find_segments(scan.ranges, scan.angles, 0.3, 0.05, 2, scan.wraps)
        assert got == ref


def test_clusters_partition_valid_returns():
    w = World(obstacles=(Circle(4, 1, 0.8), Circle(-3, -2, 0.5), Circle(0, 9, 2)))
    scan = simulate_lidar(w, ORIGIN, FULL, 0.02, 9)
    clusters = segment_scan(scan, min_points=1)
    idx = [i for c in clusters for i in c.indices]
    assert len(idx) == len(set(idx))
    assert set(idx) == set(np.flatnonzero(np.isfinite(scan.ranges)))
    for c in clusters:
        np.testing.assert_array_equal(c.points, scan.points()[list(c.indices)])


# ---------------------------------------------------------------- camera


def test_cluster_on_axis_centered():
    pts = np.array([[10.0, -0.5], [10.0, 0.0], [10.0, 0.5]])
    box = project_cluster(Cluster((0, 1, 2), pts, pts.mean(0)), CAM)
    assert 0.5 * (box[0] + box[2]) == pytest.approx(CAM.cx)


def test_cluster_behind_camera():
    pts = np.array([[-5.0, 0.0], [-5.0, 0.3]])
    assert project_cluster(Cluster((0, 1), pts, pts.mean(0)), CAM) is None


def test_pinhole_hand_arithmetic():
    # body (x fwd, y left, z up) -> camera X = -y, Y = -(z - 1.5), Z = x
    pts = np.array([[10.0, 1.0], [8.0, -2.0], [12.0, 0.5]])
    box = project_cluster(Cluster((0, 1, 2), pts, pts.mean(0)), CAM, object_height=1.0)
    us = [500 * (-y) / x + 640 for x, y in pts]
    v_top = [500 * (-(1.0 - 1.5)) / x + 360 for x, _ in pts]
    v_bot = [500 * (-(0.0 - 1.5)) / x + 360 for x, _ in pts]
    assert box[0] == pytest.approx(min(us))
    assert box[2] == pytest.approx(max(us))
    assert box[1] == pytest.approx(min(v_top))
    assert box[3] == pytest.approx(max(v_bot))


def test_bbox_clipped_to_image():
    pts = np.array([[2.0, -5.0], [2.0, 0.0]])
    x0, y0, x1, y1 = project_cluster(Cluster((0, 1), pts, pts.mean(0)), CAM)
    assert 0 <= x0 < x1 <= CAM.width and 0 <= y0 < y1 <= CAM.height


def test_iou_examples():
    a = (0, 0, 1, 1)
    assert iou(a, a) == 1.0
    assert iou(a, (2, 2, 3, 3)) == 0.0
    assert iou(a, (0.5, 0, 1.5, 1)) == pytest.approx(1 / 3)


def test_iou_symmetric_bounded():
    rng = np.random.default_rng(2)
    for _ in range(500):
        a = np.sort(rng.uniform(0, 10, (2, 2)), axis=0).T.ravel()[[0, 2, 1, 3]]
        b = np.sort(rng.uniform(0, 10, (2, 2)), axis=0).T.ravel()[[0, 2, 1, 3]]
        a, b = (a[0], a[1], a[2], a[3]), (b[0], b[1], b[2], b[3])
        if a[0] >= a[2] or a[1] >= a[3] or b[0] >= b[2] or b[1] >= b[3]:
            continue
        v = iou(a, b)
        assert 0.0 <= v <= 1.0 and v == iou(b, a)


# ---------------------------------------------------------------- assignment


def test_hungarian_small_known():
    C = [[4, 1, 3], [2, 0, 5], [3, 2, 2]]
    pairs = hungarian(C)
    assert assignment_cost(C, pairs) == 5
    assert sorted(j for _, j in pairs) == [0, 1, 2]


def test_hungarian_random_3x3_vs_permutations():
    rng = np.random.default_rng(3)
    for _ in range(200):
        C = rng.uniform(0, 1, (3, 3))
        assert assignment_cost(C, hungarian(C)) == pytest.approx(brute_force_assignment(C), abs=1e-12)


def test_hungarian_non_square():
    with pytest.raises(ValueError):
        hungarian(np.zeros((2, 3)))
    assert hungarian(np.zeros((0, 0))) == []


def test_match_single_pair():
    m = match_detections([(0, 0, 10, 10)], [Detection("red_marker", 0.9, (1, 1, 10, 10))], 0.3)
    assert [(i, j) for i, j, _ in m.pairs] == [(0, 0)]
    assert not m.unmatched_clusters and not m.unmatched_detections


def test_match_below_gate_unmatched():
    m = match_detections([(0, 0, 10, 10), (20, 0, 30, 10)], [Detection("x", 1, (9, 9, 15, 15))], 0.3)
    assert m.pairs == []
    assert m.unmatched_clusters == [0, 1] and m.unmatched_detections == [0]


def test_match_rectangular_and_none_boxes():
    boxes = [None, (0, 0, 10, 10), (50, 50, 60, 60)]
    dets = [Detection("a", 1, (50, 50, 60, 61)), Detection("b", 1, (0, 0, 10, 11))]
    m = match_detections(boxes, dets, 0.5)
    assert sorted((i, j) for i, j, _ in m.pairs) == [(1, 1), (2, 0)]
    assert m.unmatched_clusters == [0]


def test_match_gate_validation():
    with pytest.raises(ValueError):
        match_detections([], [], 1.0)


# ---------------------------------------------------------------- detections and fusion


def test_noiseless_detection_is_exact_projection():
    buoys = [Circle(10, 1, 0.4, "red_marker"), Circle(12, -2, 0.4, "green_marker")]
    dets = simulate_camera_detections(buoys, CAM, ORIGIN, 0.0, 0.0, rng=0)
    assert [d.label for d in dets] == ["red_marker", "green_marker"]
    for d, b in zip(dets, buoys):
        assert d.bbox == pytest.approx(buoy_bbox(b, CAM, ORIGIN))
        assert d.prob == 1.0


def test_buoy_outside_fov_absent():
    buoys = [Circle(-10, 0, 0.4, "red_marker"), Circle(0.5, 10, 0.4, "green_marker")]
    assert simulate_camera_detections(buoys, CAM, ORIGIN, rng=0) == []


def test_miss_rate_monte_carlo():
    rng = np.random.default_rng(11)
    buoy = [Circle(10, 0, 0.4, "red_marker")]
    trials = 10_000
    misses = sum(not simulate_camera_detections(buoy, CAM, ORIGIN, 0.3, 1.0, rng) for _ in range(trials))
    assert abs(misses / trials - 0.3) < 0.02


def test_detections_deterministic_per_seed():
    buoys = [Circle(10, 1, 0.4, "red_marker"), Circle(12, -2, 0.4, "green_marker")]
    a = simulate_camera_detections(buoys, CAM, ORIGIN, 0.2, 2.0, rng=5)
    b = simulate_camera_detections(buoys, CAM, ORIGIN, 0.2, 2.0, rng=5)
    assert a == b


def _scene(buoys, pose=ORIGIN):
    scan = simulate_lidar(World(buoys=tuple(buoys)), pose, FULL)
    clusters = segment_scan(scan)
    dets = simulate_camera_detections(buoys, CAM, pose)
    return clusters, dets


def test_fuse_single_buoy():
    b = Circle(8, 1, 0.4, "red_marker")
    clusters, dets = _scene([b])
    res = fuse(clusters, dets, CAM)
    assert len(res.objects) == 1 and res.objects[0].label == "red_marker"
    pts = clusters[res.objects[0].cluster_id].points
    p = np.array(res.objects[0].position)
    assert np.all(p >= pts.min(0) - 1e-9) and np.all(p <= pts.max(0) + 1e-9)


def test_fuse_two_colours_correct_sides():
    buoys = [Circle(10, 2.5, 0.4, "red_marker"), Circle(10, -2.5, 0.4, "green_marker")]
    res = fuse(*_scene(buoys), CAM)
    by_label = {o.label: o.position for o in res.objects}
    assert by_label["red_marker"][1] > 0 > by_label["green_marker"][1]


def test_fuse_no_detections():
    b = Circle(8, 1, 0.4, "red_marker")
    clusters, _ = _scene([b])
    res = fuse(clusters, [], CAM)
    assert res.objects == [] and res.unmatched_clusters == list(range(len(clusters)))


def test_fuse_end_to_end_k_buoys():
    rng = np.random.default_rng(8)
    labels = ["red_marker", "green_marker", "yellow", "black", "white"]
    for _ in range(20):
        k = int(rng.integers(1, 6))
        ys = np.linspace(-6, 6, k) if k > 1 else np.array([0.0])
        buoys = [Circle(float(rng.uniform(9, 14)), float(y), 0.4, labels[i]) for i, y in enumerate(ys)]
        res = fuse(*_scene(buoys), CAM)
        assert len(res.objects) == k
        for o in res.objects:
            b = next(b for b in buoys if b.label == o.label)
            assert math.hypot(o.position[0] - b.x, o.position[1] - b.y) < b.r
