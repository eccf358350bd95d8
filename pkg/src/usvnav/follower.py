"""Pure-pursuit tracking of a sampled path."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .dynamics import Pose2D, wrap_angle
from .planner import VelocityProfile


@dataclass(frozen=True)
class FollowerParams:
    lookahead: float = 4.0
    v_from_profile: bool = True
    extension_len: float = 10.0
    preview: float = 0.5  # profile speed is read this far ahead of the vessel

    def __post_init__(self):
        if not (self.lookahead > 0):
            raise ValueError("lookahead must be > 0")
        if not (self.extension_len >= 0):
            raise ValueError("extension_len must be >= 0")
        if not (self.preview >= 0):
            raise ValueError("preview must be >= 0")


@dataclass(frozen=True)
class LookaheadTarget:
    point: np.ndarray
    s: float  # arc length of the target along the (extended) path
    on_circle: bool


def extend_path(points: np.ndarray, extension_len: float) -> np.ndarray:
    """Append a straight continuation of the final segment."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if extension_len <= 0 or len(pts) < 2:
        return pts
    d = pts[-1] - pts[-2]
    k = len(pts) - 2
    while np.hypot(*d) == 0 and k > 0:
        k -= 1
        d = pts[-1] - pts[k]
    norm = np.hypot(*d)
    if norm == 0:
        return pts
    return np.vstack([pts, pts[-1] + extension_len * d / norm])


def _cumlen(pts: np.ndarray) -> np.ndarray:
    return np.concatenate([[0.0], np.cumsum(np.hypot(*(np.diff(pts, axis=0).T)))])


def project_onto_path(points: np.ndarray, p) -> Tuple[float, np.ndarray, float]:
    """Arc length, foot point and distance of the closest point on a polyline."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    p = np.asarray(p, dtype=float)
    if len(pts) == 1:
        return 0.0, pts[0], float(np.hypot(*(p - pts[0])))
    a, b = pts[:-1], pts[1:]
    ab = b - a
    den = np.einsum("ij,ij->i", ab, ab)
    u = np.where(den > 0, np.einsum("ij,ij->i", p - a, ab) / np.where(den > 0, den, 1.0), 0.0)
    u = np.clip(u, 0.0, 1.0)
    foot = a + u[:, None] * ab
    d = np.hypot(*(foot - p).T)
    k = int(np.argmin(d))
    s = _cumlen(pts)
    return float(s[k] + u[k] * math.sqrt(den[k])), foot[k], float(d[k])


def lookahead_target(path: np.ndarray, pose: Pose2D, L: float, extension_len: float = 0.0) -> LookaheadTarget:
    """Intersection of the lookahead circle with the path furthest along it.

    ``path`` is the sampled curve; a straight extension of
    ``extension_len`` is appended past its end.  When the circle does not
    meet the path the nearest path point is returned with
    ``on_circle=False``.
    """
    if not (L > 0):
        raise ValueError("lookahead must be > 0")
    pts = np.asarray(path, dtype=float).reshape(-1, 2)
    if pts.size == 0:
        raise ValueError("empty path")
    pts = extend_path(pts, extension_len)
    c = np.array([pose.x, pose.y])
    s_cum = _cumlen(pts)
    a, d = pts[:-1], np.diff(pts, axis=0)
    f = a - c
    A = np.einsum("ij,ij->i", d, d)
    B = 2.0 * np.einsum("ij,ij->i", f, d)
    C = np.einsum("ij,ij->i", f, f) - L * L
    disc = B * B - 4 * A * C
    ok = (A > 0) & (disc >= 0)
    best: Optional[Tuple[float, np.ndarray]] = None
    if ok.any():
        A_, B_, sq = A[ok], B[ok], np.sqrt(disc[ok])
        u = np.concatenate([(-B_ + sq) / (2 * A_), (-B_ - sq) / (2 * A_)])
        idx = np.tile(np.flatnonzero(ok), 2)
        inside = (u >= 0.0) & (u <= 1.0)
        if inside.any():
            u, idx = u[inside], idx[inside]
            s = s_cum[idx] + u * np.sqrt(A[idx])
            j = int(np.argmax(s))
            best = (float(s[j]), a[idx[j]] + u[j] * d[idx[j]])
    if best is None:
        s, foot, _ = project_onto_path(pts, c)
        return LookaheadTarget(foot, s, False)
    return LookaheadTarget(best[1], best[0], True)


def pursuit_command(pose: Pose2D, target, v_des: float, L: float) -> Tuple[float, float]:
    """Speed and yaw rate of the circular arc through ``target``: ``omega = 2 v sin(alpha) / L``."""
    dx, dy = float(target[0]) - pose.x, float(target[1]) - pose.y
    if dx == 0 and dy == 0:
        raise ValueError("target coincides with the vessel position")
    alpha = wrap_angle(math.atan2(dy, dx) - pose.psi)
    return v_des, 2.0 * v_des * math.sin(alpha) / L


def track(
    points: np.ndarray,
    pose: Pose2D,
    params: FollowerParams,
    v_des: float,
    profile: VelocityProfile | None = None,
) -> Tuple[float, float]:
    """One pure-pursuit tick with the speed capped by the profile at the vessel's projected arc length."""
    tgt = lookahead_target(points, pose, params.lookahead, params.extension_len)
    v = v_des
    if params.v_from_profile and profile is not None:
        s, _, _ = project_onto_path(points, (pose.x, pose.y))
        v = min(v, profile.speed_at(s + params.preview))
    if np.hypot(tgt.point[0] - pose.x, tgt.point[1] - pose.y) < 1e-9:
        return v, 0.0
    return pursuit_command(pose, tgt.point, v, params.lookahead)
