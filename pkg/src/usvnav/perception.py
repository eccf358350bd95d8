"""
Lidar/camera simulation and the lidar-camera fusion pipeline.

The pipeline is: drop isolated lidar returns, split the scan into clusters
at adaptive range-dependent gaps, project each cluster into the camera
image, and assign clusters to labelled camera detections with the
Hungarian method on ``1 - IoU`` costs.

Frames
------
Body frame: x forward, y left, z up.  Camera frame: z along the optical
axis, x to the right of the image, y down.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .dynamics import Pose2D

BBox = Tuple[float, float, float, float]


# ---------------------------------------------------------------- world


@dataclass(frozen=True)
class Circle:
    x: float
    y: float
    r: float
    label: Optional[str] = None
    height: float = 1.0

    def __post_init__(self):
        if not (self.r > 0):
            raise ValueError(f"circle radius must be > 0, got {self.r}")
        if not (self.height > 0):
            raise ValueError(f"circle height must be > 0, got {self.height}")


@dataclass(frozen=True)
class Polygon:
    vertices: Tuple[Tuple[float, float], ...]

    def __post_init__(self):
        verts = tuple((float(x), float(y)) for x, y in self.vertices)
        if len(verts) < 3:
            raise ValueError("polygon needs at least 3 vertices")
        object.__setattr__(self, "vertices", verts)

    def edges(self) -> np.ndarray:
        v = np.asarray(self.vertices)
        return np.stack([v, np.roll(v, -1, axis=0)], axis=1)


@dataclass(frozen=True)
class World:
    obstacles: Tuple = ()
    buoys: Tuple[Circle, ...] = ()

    @property
    def shapes(self) -> tuple:
        return tuple(self.obstacles) + tuple(self.buoys)


def distance_to_shapes(world: World, p) -> float:
    """Distance from point ``p`` to the nearest obstacle/buoy surface (negative inside circles)."""
    p = np.asarray(p, dtype=float)
    best = math.inf
    for sh in world.shapes:
        if isinstance(sh, Circle):
            best = min(best, math.hypot(p[0] - sh.x, p[1] - sh.y) - sh.r)
        else:
            for a, b in sh.edges():
                ab = b - a
                t = np.clip(np.dot(p - a, ab) / np.dot(ab, ab), 0.0, 1.0)
                best = min(best, float(np.linalg.norm(a + t * ab - p)))
    return best


# ---------------------------------------------------------------- lidar


@dataclass(frozen=True)
class ScanGeometry:
    angle_min: float
    angle_increment: float
    n_beams: int
    range_max: float

    def __post_init__(self):
        if not (self.angle_increment > 0):
            raise ValueError("angle_increment must be > 0")
        if self.n_beams < 2:
            raise ValueError("a scan needs at least 2 beams")
        if not (self.range_max > 0):
            raise ValueError("range_max must be > 0")

    @property
    def angles(self) -> np.ndarray:
        return self.angle_min + self.angle_increment * np.arange(self.n_beams)


@dataclass(frozen=True)
class LaserScan:
    """Ordered ranges in the body frame; ``+inf`` marks beams with no return."""

    angle_min: float
    angle_increment: float
    range_max: float
    ranges: np.ndarray
    timestamp: float = 0.0

    def __post_init__(self):
        r = np.array(self.ranges, dtype=float)
        if self.angle_increment <= 0:
            raise ValueError("angle_increment must be > 0")
        if r.ndim != 1 or r.size < 2:
            raise ValueError("ranges must be a 1-D sequence of length >= 2")
        if np.any(np.isnan(r)):
            raise ValueError("ranges must be NaN-free")
        finite = np.isfinite(r)
        if np.any(r[finite] <= 0) or np.any(r[finite] > self.range_max) or np.any(r[~finite] < 0):
            raise ValueError("finite ranges must lie in (0, range_max]")
        r.setflags(write=False)
        object.__setattr__(self, "ranges", r)

    @property
    def angles(self) -> np.ndarray:
        return self.angle_min + self.angle_increment * np.arange(self.ranges.size)

    @property
    def wraps(self) -> bool:
        """True when the last beam is angularly adjacent to the first (full circle)."""
        return abs(self.ranges.size * self.angle_increment - 2 * math.pi) < 0.5 * self.angle_increment

    def points(self) -> np.ndarray:
        """Body-frame xy of every beam (inf for no-return beams)."""
        a = self.angles
        with np.errstate(invalid="ignore"):
            return np.stack([self.ranges * np.cos(a), self.ranges * np.sin(a)], axis=1)

    def with_ranges(self, ranges) -> "LaserScan":
        return LaserScan(self.angle_min, self.angle_increment, self.range_max, ranges, self.timestamp)


def ray_cast(shapes, origin, directions: np.ndarray) -> np.ndarray:
    """Exact distance along each unit direction to the first surface hit (inf if none)."""
    ox, oy = float(origin[0]), float(origin[1])
    dx, dy = directions[:, 0], directions[:, 1]
    best = np.full(directions.shape[0], np.inf)
    for sh in shapes:
        if isinstance(sh, Circle):
            fx, fy = ox - sh.x, oy - sh.y
            b = fx * dx + fy * dy
            c = fx * fx + fy * fy - sh.r * sh.r
            disc = b * b - c
            ok = disc >= 0
            sq = np.sqrt(np.where(ok, disc, 0.0))
            t1 = -b - sq
            t2 = -b + sq
            # origin inside the circle: hit the far wall
            t = np.where(t1 > 0, t1, t2)
            t = np.where(ok & (t > 0), t, np.inf)
            best = np.minimum(best, t)
        else:
            for a, e in sh.edges():
                ex, ey = e[0] - a[0], e[1] - a[1]
                den = dx * ey - dy * ex
                wx, wy = a[0] - ox, a[1] - oy
                with np.errstate(divide="ignore", invalid="ignore"):
                    t = (wx * ey - wy * ex) / den
                    s = (wx * dy - wy * dx) / den
                hit = (np.abs(den) > 1e-15) & (t > 0) & (s >= 0) & (s <= 1)
                best = np.minimum(best, np.where(hit, t, np.inf))
    return best


def simulate_lidar(
    world: World,
    pose: Pose2D,
    spec: ScanGeometry,
    noise_sigma: float = 0.0,
    rng: np.random.Generator | int | None = None,
    timestamp: float = 0.0,
) -> LaserScan:
    """Planar ray-cast scan from ``pose`` with additive Gaussian range noise."""
    rng = np.random.default_rng(rng)
    ang = pose.psi + spec.angles
    dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    r = ray_cast(world.shapes, (pose.x, pose.y), dirs)
    if noise_sigma > 0:
        noise = rng.normal(0.0, noise_sigma, size=r.size)
        r = np.where(np.isfinite(r), r + noise, r)
    r = np.where((r > spec.range_max) | (r <= 0), np.inf, r)
    return LaserScan(spec.angle_min, spec.angle_increment, spec.range_max, r, timestamp)


def filter_outliers(scan: LaserScan, k: int = 1, dist_thresh: float = 1.0) -> LaserScan:
    """Replace returns that have no supporting neighbour with ``+inf``.

    A return survives if at least one of its ``k`` angular neighbours on
    either side has a range within ``dist_thresh`` of it.  With ``k = 1``
    this removes exactly the returns that differ from both neighbours.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    r = scan.ranges
    n = r.size
    supported = np.zeros(n, dtype=bool)
    for off in range(1, k + 1):
        for sgn in (-1, 1):
            idx = np.arange(n) + sgn * off
            valid = (idx >= 0) & (idx < n)
            if scan.wraps:
                idx = idx % n
                valid[:] = True
            idx = np.clip(idx, 0, n - 1)
            with np.errstate(invalid="ignore"):
                close = np.abs(r - r[idx]) <= dist_thresh
            supported |= valid & close & np.isfinite(r[idx])
    out = np.where(np.isfinite(r) & ~supported, np.inf, r)
    return scan.with_ranges(out)


@dataclass(frozen=True)
class Cluster:
    indices: Tuple[int, ...]
    points: np.ndarray
    centroid: np.ndarray


def gap_threshold(r1, r2, base_thresh: float, slope: float):
    return base_thresh + slope * np.minimum(r1, r2)


def segment_scan(
    scan: LaserScan, base_thresh: float = 0.3, slope: float = 0.05, min_points: int = 2
) -> List[Cluster]:
    """Adaptive breakpoint segmentation.

    Neighbouring returns ``i`` and ``i+1`` share a cluster when the gap
    between their points is below ``base_thresh + slope * min(r_i, r_i+1)``.
    No-return beams break clusters.  On a full-circle scan the last and
    first beams are neighbours too.  Clusters with fewer than
    ``min_points`` points are dropped.
    """
    r = scan.ranges
    pts = scan.points()
    n = r.size
    valid = np.isfinite(r)
    if not valid.any():
        return []
    with np.errstate(invalid="ignore"):
        gap = np.linalg.norm(pts[1:] - pts[:-1], axis=1) if n > 1 else np.empty(0)
        joined = valid[:-1] & valid[1:] & (gap < gap_threshold(r[:-1], r[1:], base_thresh, slope))

    runs: List[List[int]] = []
    current: List[int] = []
    for i in range(n):
        if not valid[i]:
            if current:
                runs.append(current)
            current = []
            continue
        if current and not joined[i - 1]:
            runs.append(current)
            current = []
        current.append(i)
    if current:
        runs.append(current)

    if scan.wraps and len(runs) > 1 and runs[0][0] == 0 and runs[-1][-1] == n - 1:
        g = float(np.linalg.norm(pts[0] - pts[-1]))
        if g < gap_threshold(r[0], r[-1], base_thresh, slope):
            runs[0] = runs.pop() + runs[0]

    clusters = []
    for run in runs:
        if len(run) < min_points:
            continue
        p = pts[run]
        clusters.append(Cluster(tuple(run), p, p.mean(axis=0)))
    return clusters


# ---------------------------------------------------------------- camera


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera mounted at ``(mount_x, mount_y, mount_z, mount_yaw)`` in the body frame."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    mount_x: float = 0.0
    mount_y: float = 0.0
    mount_z: float = 1.5
    mount_yaw: float = 0.0

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be > 0")
        if not (self.width > 0 and self.height > 0):
            raise ValueError("image size must be > 0")

    @property
    def hfov(self) -> float:
        return 2.0 * math.atan(self.width / (2.0 * self.fx))

    def to_camera(self, body_pts: np.ndarray) -> np.ndarray:
        """Body-frame ``(x, y, z)`` points to camera-frame ``(X, Y, Z)``."""
        p = np.atleast_2d(np.asarray(body_pts, dtype=float))
        dx = p[:, 0] - self.mount_x
        dy = p[:, 1] - self.mount_y
        dz = p[:, 2] - self.mount_z
        c, s = math.cos(self.mount_yaw), math.sin(self.mount_yaw)
        fwd = c * dx + s * dy
        left = -s * dx + c * dy
        return np.stack([-left, -dz, fwd], axis=1)

    def project(self, cam_pts: np.ndarray) -> np.ndarray:
        X, Y, Z = cam_pts[:, 0], cam_pts[:, 1], cam_pts[:, 2]
        return np.stack([self.fx * X / Z + self.cx, self.fy * Y / Z + self.cy], axis=1)

    def in_view(self, cam_pts: np.ndarray, near: float = 1e-3) -> np.ndarray:
        X, Z = cam_pts[:, 0], cam_pts[:, 2]
        ok = Z > near
        with np.errstate(divide="ignore", invalid="ignore"):
            ok &= np.abs(np.arctan2(X, Z)) <= 0.5 * self.hfov + 1e-12
        return ok


def _bbox_from_body(cam: CameraModel, xy: np.ndarray, z_lo: float, z_hi: float) -> Optional[BBox]:
    xy = np.atleast_2d(xy)
    n = xy.shape[0]
    body = np.concatenate(
        [np.column_stack([xy, np.full(n, z_lo)]), np.column_stack([xy, np.full(n, z_hi)])]
    )
    cp = cam.to_camera(body)
    vis = cam.in_view(cp)
    if not vis.any():
        return None
    uv = cam.project(cp[vis])
    x0 = max(0.0, float(uv[:, 0].min()))
    x1 = min(float(cam.width), float(uv[:, 0].max()))
    y0 = max(0.0, float(uv[:, 1].min()))
    y1 = min(float(cam.height), float(uv[:, 1].max()))
    # zero width is allowed here: a single visible point is widened by the caller
    if not (x0 <= x1 and y0 < y1):
        return None
    return (x0, y0, x1, y1)


def project_cluster(
    cluster: Cluster, cam: CameraModel, object_height: float = 1.0, min_width_px: float = 2.0
) -> Optional[BBox]:
    """Image bbox of a planar cluster extruded from the waterline to ``object_height``.

    Returns ``None`` when no point lies in front of the camera and inside
    its horizontal field of view.  Very narrow hulls are widened to
    ``min_width_px`` around their centre.
    """
    box = _bbox_from_body(cam, cluster.points, 0.0, object_height)
    if box is None:
        return None
    x0, y0, x1, y1 = box
    if x1 - x0 < min_width_px:
        mid = 0.5 * (x0 + x1)
        x0 = max(0.0, mid - 0.5 * min_width_px)
        x1 = min(float(cam.width), mid + 0.5 * min_width_px)
    return (x0, y0, x1, y1)


def iou(a: BBox, b: BBox) -> float:
    ix = min(a[2], b[2]) - max(a[0], b[0])
    iy = min(a[3], b[3]) - max(a[1], b[1])
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return float(min(1.0, max(0.0, inter / union)))


# ---------------------------------------------------------------- assignment


def hungarian(cost) -> List[Tuple[int, int]]:
    """Minimum-cost perfect assignment on a square matrix.

    Shortest augmenting path formulation with row/column potentials,
    O(n^3).  Returns ``(row, col)`` pairs sorted by row.
    """
    C = np.asarray(cost, dtype=float)
    n = C.shape[0]
    if C.ndim != 2 or C.shape[1] != n:
        raise ValueError("hungarian needs a square cost matrix")
    if n == 0:
        return []
    INF = math.inf
    u = [0.0] * (n + 1)
    v = [0.0] * (n + 1)
    p = [0] * (n + 1)  # p[j]: row matched to column j (1-based, 0 = free)
    way = [0] * (n + 1)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [INF] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = INF
            j1 = 0
            row = C[i0 - 1]
            for j in range(1, n + 1):
                if not used[j]:
                    cur = row[j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    pairs = [(p[j] - 1, j - 1) for j in range(1, n + 1)]
    return sorted(pairs)


@dataclass
class MatchResult:
    pairs: List[Tuple[int, int, float]] = field(default_factory=list)
    unmatched_clusters: List[int] = field(default_factory=list)
    unmatched_detections: List[int] = field(default_factory=list)


def match_detections(
    cluster_boxes: Sequence[Optional[BBox]], detections: Sequence, iou_gate: float = 0.3
) -> MatchResult:
    """Gated one-to-one cluster/detection assignment minimising ``1 - IoU``.

    Costs of pairs below the gate are raised to the gate cost ``1 - iou_gate``
    and the matrix is padded to square with that same cost, so leaving an
    item unmatched is never worse than accepting a sub-gate pair.  Only
    pairs with IoU at or above the gate are reported.  ``None`` cluster
    boxes (not visible) never match.
    """
    if not (0 < iou_gate < 1):
        raise ValueError("iou_gate must lie in (0, 1)")
    nc, nd = len(cluster_boxes), len(detections)
    gate_cost = 1.0 - iou_gate
    n = max(nc, nd)
    C = np.full((n, n), gate_cost)
    ious = np.zeros((nc, nd))
    for i, cb in enumerate(cluster_boxes):
        if cb is None:
            continue
        for j, det in enumerate(detections):
            box = det.bbox if hasattr(det, "bbox") else det
            ious[i, j] = iou(cb, box)
            if ious[i, j] >= iou_gate:
                C[i, j] = 1.0 - ious[i, j]
    result = MatchResult()
    matched_c, matched_d = set(), set()
    for i, j in hungarian(C):
        if i < nc and j < nd and cluster_boxes[i] is not None and ious[i, j] >= iou_gate:
            result.pairs.append((i, j, float(1.0 - ious[i, j])))
            matched_c.add(i)
            matched_d.add(j)
    result.unmatched_clusters = [i for i in range(nc) if i not in matched_c]
    result.unmatched_detections = [j for j in range(nd) if j not in matched_d]
    return result


# ---------------------------------------------------------------- detections


@dataclass(frozen=True)
class Detection:
    label: str
    prob: float
    bbox: BBox

    def __post_init__(self):
        if not (0.0 <= self.prob <= 1.0):
            raise ValueError("prob must lie in [0, 1]")
        x0, y0, x1, y1 = self.bbox
        if not (x0 < x1 and y0 < y1):
            raise ValueError(f"degenerate bbox {self.bbox}")
        object.__setattr__(self, "bbox", tuple(float(c) for c in self.bbox))


def buoy_bbox(buoy: Circle, cam: CameraModel, pose: Pose2D) -> Optional[BBox]:
    """Projected box of a buoy's silhouette (diameter across the line of sight, waterline to top)."""
    c = pose.to_body(np.array([buoy.x, buoy.y]))
    rel = c - np.array([cam.mount_x, cam.mount_y])
    d = float(np.hypot(*rel))
    if d <= buoy.r:
        return None
    perp = np.array([-rel[1], rel[0]]) / d
    centre_cam = cam.to_camera(np.array([[c[0], c[1], 0.5 * buoy.height]]))
    if not cam.in_view(centre_cam)[0]:
        return None
    edge = np.stack([c + buoy.r * perp, c - buoy.r * perp])
    box = _bbox_from_body(cam, edge, 0.0, buoy.height)
    return box if box is not None and box[0] < box[2] else None


def simulate_camera_detections(
    buoys: Sequence[Circle],
    cam: CameraModel,
    pose: Pose2D,
    miss_rate: float = 0.0,
    bbox_jitter_px: float = 0.0,
    rng: np.random.Generator | int | None = None,
    max_range: float = math.inf,
) -> List[Detection]:
    """Stand-in object detector: one labelled box per visible buoy.

    A buoy is visible when its centre is in front of the camera, inside the
    horizontal field of view and within ``max_range``.  Each visible buoy
    is dropped independently with probability ``miss_rate``; kept boxes get
    Gaussian corner jitter.
    """
    if not (0.0 <= miss_rate <= 1.0):
        raise ValueError("miss_rate must lie in [0, 1]")
    rng = np.random.default_rng(rng)
    out = []
    for b in buoys:
        if math.hypot(b.x - pose.x, b.y - pose.y) > max_range:
            continue
        box = buoy_bbox(b, cam, pose)
        if box is None:
            continue
        # one draw per visible buoy keeps the stream aligned across outcomes
        drop = rng.random() < miss_rate
        jitter = rng.normal(0.0, bbox_jitter_px, size=4) if bbox_jitter_px > 0 else np.zeros(4)
        if drop:
            continue
        x0, y0, x1, y1 = np.asarray(box) + jitter
        x0, x1 = sorted((float(np.clip(x0, 0, cam.width)), float(np.clip(x1, 0, cam.width))))
        y0, y1 = sorted((float(np.clip(y0, 0, cam.height)), float(np.clip(y1, 0, cam.height))))
        if x1 - x0 < 1e-6 or y1 - y0 < 1e-6:
            continue
        out.append(Detection(b.label or "unknown", 1.0 - miss_rate, (x0, y0, x1, y1)))
    return out


# ---------------------------------------------------------------- fusion


@dataclass(frozen=True)
class FusedObject:
    label: str
    position: Tuple[float, float]
    cluster_id: int
    detection_id: int
    cost: float

    def __post_init__(self):
        if not (0.0 <= self.cost <= 1.0):
            raise ValueError("cost must lie in [0, 1]")


@dataclass
class FusionResult:
    objects: List[FusedObject]
    unmatched_clusters: List[int]
    unmatched_detections: List[int]


def fuse(
    clusters: Sequence[Cluster],
    detections: Sequence[Detection],
    cam: CameraModel,
    iou_gate: float = 0.3,
    object_height: float = 1.0,
) -> FusionResult:
    """Label lidar clusters with matched camera detections.

    Unmatched clusters are reported so callers can treat them as
    unlabelled obstacles.
    """
    boxes = [project_cluster(c, cam, object_height) for c in clusters]
    m = match_detections(boxes, detections, iou_gate)
    objs = [
        FusedObject(
            detections[j].label,
            (float(clusters[i].centroid[0]), float(clusters[i].centroid[1])),
            i,
            j,
            cost,
        )
        for i, j, cost in m.pairs
    ]
    return FusionResult(objs, m.unmatched_clusters, m.unmatched_detections)
