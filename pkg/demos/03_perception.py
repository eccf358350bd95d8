"""Lidar clusters meet camera boxes: segmentation, projection, Hungarian matching."""

import math

import numpy as np

from usvnav.dynamics import Pose2D
from usvnav.perception import (
    CameraModel,
    Circle,
    Polygon,
    ScanGeometry,
    World,
    filter_outliers,
    fuse,
    project_cluster,
    segment_scan,
    simulate_camera_detections,
    simulate_lidar,
)

buoys = (
    Circle(12, 3, 0.4, "red_marker"),
    Circle(12, -3, 0.4, "green_marker"),
    Circle(20, 6, 0.5, "yellow"),
)
dock = Polygon(((8, -10), (14, -10), (14, -8), (8, -8)))
world = World(obstacles=(dock,), buoys=buoys)
pose = Pose2D(0, 0, 0.05)

geo = ScanGeometry(-math.pi, 2 * math.pi / 720, 720, 40.0)
scan = filter_outliers(simulate_lidar(world, pose, geo, noise_sigma=0.02, rng=3))
clusters = segment_scan(scan)
print(f"{np.isfinite(scan.ranges).sum()} returns -> {len(clusters)} clusters")
for i, c in enumerate(clusters):
    print(f"  cluster {i}: {len(c.indices):3d} pts, centroid body ({c.points[:, 0].mean():5.2f}, {c.points[:, 1].mean():5.2f})")

cam = CameraModel(fx=640, fy=640, cx=640, cy=360, width=1280, height=720, mount_z=1.5)
dets = simulate_camera_detections(buoys, cam, pose, bbox_jitter_px=2.0, rng=4)
print("camera sees:", [d.label for d in dets])
for i, c in enumerate(clusters):
    box = project_cluster(c, cam)
    print(f"  cluster {i} box:", None if box is None else tuple(round(v) for v in box))

res = fuse(clusters, dets, cam)
for o in res.objects:
    world_xy = pose.to_world(np.asarray(o.position))
    print(f"fused {o.label:13s} world ({world_xy[0]:5.2f}, {world_xy[1]:5.2f})  cost {o.cost:.2f}")
# the dock has no camera box, so it stays an unlabelled obstacle
print("unmatched clusters:", res.unmatched_clusters)
