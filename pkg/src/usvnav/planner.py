"""
Hermite-curve path planning and velocity-profile search.

A path is a single cubic Hermite segment from the current pose to the
goal.  Obstacles are tested against the segment by projecting each
obstacle point onto the curve with a multi-start Newton iteration: a point
collides when its foot lies strictly inside the segment and its distance
is below ``width + margin``.  Blocked goals are retried with small world
frame offsets.

Speed planning combines three independent speed-limit profiles (stop at
the goal, stop before obstacles, bounded yaw rate in curves) and searches
a layered graph of discrete speeds for the profile with the largest total
speed whose transitions respect an acceleration bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .dynamics import Pose2D

DEFAULT_DS = 0.5


@dataclass(frozen=True)
class HermiteCurve:
    p0: np.ndarray
    p1: np.ndarray
    m0: np.ndarray
    m1: np.ndarray

    def __post_init__(self):
        for name in ("p0", "p1", "m0", "m1"):
            a = np.array(getattr(self, name), dtype=float).reshape(2)
            if not np.all(np.isfinite(a)):
                raise ValueError(f"{name} must be finite")
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if np.hypot(*self.m0) == 0 or np.hypot(*self.m1) == 0:
            raise ValueError("tangent vectors must be non-zero")

    @property
    def coefficients(self) -> np.ndarray:
        """Power-basis coefficients ``[a, b, c, d]`` with ``c(t) = a t^3 + b t^2 + c t + d``."""
        p0, p1, m0, m1 = self.p0, self.p1, self.m0, self.m1
        return np.array(
            [2 * p0 + m0 - 2 * p1 + m1, -3 * p0 - 2 * m0 + 3 * p1 - m1, m0, p0]
        )


def _check_t(t):
    ta = np.asarray(t, dtype=float)
    if np.any(~(ta >= 0.0)) or np.any(~(ta <= 1.0)):
        raise ValueError("curve parameter must lie in [0, 1]")
    return ta


def hermite_eval(c: HermiteCurve, t):
    """Point(s) on the curve; ``t`` may be a scalar or an array."""
    t = _check_t(t)
    h00 = 2 * t**3 - 3 * t**2 + 1
    h10 = t**3 - 2 * t**2 + t
    h01 = -2 * t**3 + 3 * t**2
    h11 = t**3 - t**2
    return (
        np.multiply.outer(h00, c.p0)
        + np.multiply.outer(h10, c.m0)
        + np.multiply.outer(h01, c.p1)
        + np.multiply.outer(h11, c.m1)
    )


def hermite_tangent(c: HermiteCurve, t):
    t = _check_t(t)
    d00 = 6 * t**2 - 6 * t
    d10 = 3 * t**2 - 4 * t + 1
    d01 = -6 * t**2 + 6 * t
    d11 = 3 * t**2 - 2 * t
    return (
        np.multiply.outer(d00, c.p0)
        + np.multiply.outer(d10, c.m0)
        + np.multiply.outer(d01, c.p1)
        + np.multiply.outer(d11, c.m1)
    )


def plan_path(start: Pose2D, goal: Pose2D) -> HermiteCurve:
    """Hermite segment leaving ``start`` along its heading and arriving along the goal heading.

    Both tangent magnitudes equal the chord length.
    """
    p0 = np.array([start.x, start.y])
    p1 = np.array([goal.x, goal.y])
    chord = float(np.hypot(*(p1 - p0)))
    if chord == 0:
        raise ValueError("start and goal positions coincide")
    m0 = chord * np.array([math.cos(start.psi), math.sin(start.psi)])
    m1 = chord * np.array([math.cos(goal.psi), math.sin(goal.psi)])
    return HermiteCurve(p0, p1, m0, m1)


def catmull_rom(points: Sequence[Sequence[float]]) -> List[HermiteCurve]:
    """Chain Hermite segments through ``points`` with Catmull-Rom tangents.

    Interior tangents are ``(p[i+1] - p[i-1]) / 2``; end tangents are the
    one-sided differences.  Adjacent segments share their joint tangent.
    """
    P = np.asarray(points, dtype=float)
    if len(P) < 2:
        raise ValueError("need at least two points")
    n = len(P)
    tang = np.empty_like(P)
    tang[0] = P[1] - P[0]
    tang[-1] = P[-1] - P[-2]
    if n > 2:
        tang[1:-1] = 0.5 * (P[2:] - P[:-2])
    return [HermiteCurve(P[i], P[i + 1], tang[i], tang[i + 1]) for i in range(n - 1)]


# ---------------------------------------------------------------- nearest point


@dataclass(frozen=True)
class NearestPoint:
    t: float
    distance: float
    lateral: float
    converged: bool = True


N_SEEDS = 8
MAX_NEWTON_ITER = 30
NEWTON_TOL = 1e-10


def _newton(coef, qx, qy, t):
    (ax, ay), (bx, by), (cx, cy), (dx, dy) = coef
    for _ in range(MAX_NEWTON_ITER):
        px = ((ax * t + bx) * t + cx) * t + dx - qx
        py = ((ay * t + by) * t + cy) * t + dy - qy
        d1x = (3 * ax * t + 2 * bx) * t + cx
        d1y = (3 * ay * t + 2 * by) * t + cy
        g = px * d1x + py * d1y
        if abs(g) < NEWTON_TOL:
            return t, True
        d2x = 6 * ax * t + 2 * bx
        d2y = 6 * ay * t + 2 * by
        gp = d1x * d1x + d1y * d1y + px * d2x + py * d2y
        if gp <= 0:
            # concave region of the squared distance: walk downhill instead
            step = -math.copysign(0.05, g)
        else:
            step = -g / gp
        tn = min(1.0, max(0.0, t + step))
        if tn == t:
            # pinned at a boundary with the gradient pointing outward
            return t, True
        t = tn
    return t, False


def _dist2(coef, qx, qy, t):
    (ax, ay), (bx, by), (cx, cy), (dx, dy) = coef
    px = ((ax * t + bx) * t + cx) * t + dx - qx
    py = ((ay * t + by) * t + cy) * t + dy - qy
    return px * px + py * py


def nearest_point_newton(c: HermiteCurve, q, t0: float | None = None) -> NearestPoint:
    """Closest point on the curve to ``q``.

    Newton's method on ``g(t) = (c(t) - q) . c'(t)`` clamped to ``[0, 1]``
    from ``t0`` and eight uniform seeds; the global minimum over all
    converged runs wins.  If no run converges the best sample of a dense
    grid is returned with ``converged=False``.

    ``lateral`` is the signed offset: positive when ``q`` is left of the
    direction of travel.
    """
    coef = tuple((float(r[0]), float(r[1])) for r in c.coefficients)
    qx, qy = float(q[0]), float(q[1])
    seeds = [i / (N_SEEDS - 1) for i in range(N_SEEDS)]
    if t0 is not None:
        if not (0.0 <= t0 <= 1.0):
            raise ValueError("t0 must lie in [0, 1]")
        seeds.insert(0, float(t0))
    best_t, best_d2, any_conv = 0.0, math.inf, False
    for s in seeds:
        t, ok = _newton(coef, qx, qy, s)
        if not ok:
            continue
        any_conv = True
        d2 = _dist2(coef, qx, qy, t)
        if d2 < best_d2:
            best_t, best_d2 = t, d2
    if not any_conv:
        ts = np.linspace(0.0, 1.0, 10001)
        pts = hermite_eval(c, ts)
        d2 = np.sum((pts - np.array([qx, qy])) ** 2, axis=1)
        k = int(np.argmin(d2))
        best_t, best_d2 = float(ts[k]), float(d2[k])
    (ax, ay), (bx, by), (cx, cy), (dx, dy) = coef
    t = best_t
    rx = qx - (((ax * t + bx) * t + cx) * t + dx)
    ry = qy - (((ay * t + by) * t + cy) * t + dy)
    cross = ((3 * ax * t + 2 * bx) * t + cx) * ry - ((3 * ay * t + 2 * by) * t + cy) * rx
    dist = math.sqrt(best_d2)
    return NearestPoint(best_t, dist, math.copysign(dist, cross) if dist > 0 else 0.0, any_conv)


@dataclass(frozen=True)
class Hit:
    index: int
    t: float
    distance: float
    lateral: float


_PREFILTER_SAMPLES = 65


def _prefilter(c: HermiteCurve, obstacles: np.ndarray, reach: float) -> np.ndarray:
    # Bezier control polygon bounds the segment
    b = np.stack([c.p0, c.p0 + c.m0 / 3.0, c.p1 - c.m1 / 3.0, c.p1])
    lo = b.min(axis=0) - reach
    hi = b.max(axis=0) + reach
    idx = np.nonzero(np.all((obstacles >= lo) & (obstacles <= hi), axis=1))[0]
    if idx.size == 0:
        return idx
    # every curve point lies within speed_bound * h / 2 of a sample, so a
    # point that far beyond reach of all samples cannot be a hit
    a, bb, cc, _ = c.coefficients
    speed_bound = 3 * np.hypot(*a) + 2 * np.hypot(*bb) + np.hypot(*cc)
    ts = np.linspace(0.0, 1.0, _PREFILTER_SAMPLES)
    samples = hermite_eval(c, ts)
    slack = speed_bound * 0.5 / (_PREFILTER_SAMPLES - 1)
    q = obstacles[idx]
    d2 = np.min(np.sum((q[:, None, :] - samples[None, :, :]) ** 2, axis=2), axis=1)
    return idx[np.sqrt(d2) - slack < reach]


def check_collision(
    c: HermiteCurve, obstacles, width: float, margin: float
) -> List[Hit]:
    """Obstacle points whose curve projection is interior (0 < t < 1) and closer than ``width + margin``."""
    if width < 0 or margin < 0:
        raise ValueError("width and margin must be >= 0")
    obs = np.asarray(obstacles, dtype=float).reshape(-1, 2)
    reach = width + margin
    hits = []
    for i in _prefilter(c, obs, reach):
        npt = nearest_point_newton(c, obs[i])
        if 0.0 < npt.t < 1.0 and npt.distance < reach:
            hits.append(Hit(int(i), npt.t, npt.distance, npt.lateral))
    return hits


def offset_grid(step: float = 1.0, extent: float = 4.0) -> List[Tuple[float, float]]:
    """Square grid of goal offsets sorted by magnitude, ``(0, 0)`` first."""
    k = int(round(extent / step))
    cells = [(i * step, j * step) for i in range(-k, k + 1) for j in range(-k, k + 1)]
    return sorted(cells, key=lambda o: (math.hypot(*o), o))


def goal_clear(goal: Pose2D, obstacles, radius: float) -> bool:
    obs = np.asarray(obstacles, dtype=float).reshape(-1, 2)
    if obs.size == 0:
        return True
    return bool(np.min(np.hypot(obs[:, 0] - goal.x, obs[:, 1] - goal.y)) >= radius)


def local_waypoint_search(
    start: Pose2D,
    goal: Pose2D,
    obstacles,
    width: float,
    margin: float,
    offsets: Iterable[Tuple[float, float]] | None = None,
) -> Optional[HermiteCurve]:
    """First collision-free path over offset goals, tried by increasing offset magnitude.

    A candidate must also keep the goal itself ``width + margin`` away from
    every obstacle point.  Returns ``None`` when every candidate is blocked.
    """
    offsets = list(offsets) if offsets is not None else offset_grid()
    if not offsets or tuple(offsets[0]) != (0.0, 0.0):
        raise ValueError("offsets must start with (0, 0)")
    order = sorted(range(len(offsets)), key=lambda i: (math.hypot(*offsets[i]), i))
    reach = width + margin
    for i in order:
        dx, dy = offsets[i]
        cand = Pose2D(goal.x + dx, goal.y + dy, goal.psi)
        if math.hypot(cand.x - start.x, cand.y - start.y) == 0:
            continue
        if not goal_clear(cand, obstacles, reach):
            continue
        curve = plan_path(start, cand)
        if not check_collision(curve, obstacles, width, margin):
            return curve
    return None


# ---------------------------------------------------------------- arc length


@dataclass(frozen=True)
class ArcTable:
    """Dense ``t -> s`` lookup for a curve."""

    t: np.ndarray
    s: np.ndarray

    @classmethod
    def of(cls, c: HermiteCurve, n: int = 2001) -> "ArcTable":
        t = np.linspace(0.0, 1.0, n)
        p = hermite_eval(c, t)
        seg = np.hypot(*(np.diff(p, axis=0).T))
        return cls(t, np.concatenate([[0.0], np.cumsum(seg)]))

    @property
    def length(self) -> float:
        return float(self.s[-1])

    def s_at(self, t):
        return np.interp(t, self.t, self.s)

    def t_at(self, s):
        return np.interp(s, self.s, self.t)


def make_stations(total_len: float, ds: float = DEFAULT_DS) -> np.ndarray:
    """Stations every ``ds`` along ``[0, total_len]``, always ending exactly at ``total_len``."""
    if total_len <= 0:
        return np.array([0.0])
    n = int(math.ceil(total_len / ds - 1e-9))
    s = np.arange(n + 1) * ds
    s[-1] = total_len
    return s


def sample_curve(c: HermiteCurve, ds: float = DEFAULT_DS):
    """Stations, curve parameters and points sampled every ``ds`` of arc length."""
    tab = ArcTable.of(c)
    s = make_stations(tab.length, ds)
    t = tab.t_at(s)
    return s, t, hermite_eval(c, t)


# ---------------------------------------------------------------- speed limits


@dataclass(frozen=True)
class VelocityConstraint:
    samples: np.ndarray
    v_max_at: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        v = np.asarray(self.v_max_at, dtype=float)
        if s.ndim != 1 or s.shape != v.shape:
            raise ValueError("stations and speeds must be matching 1-D arrays")
        if np.any(np.diff(s) <= 0):
            raise ValueError("stations must be strictly increasing")
        if np.any(v < 0) or np.any(np.isnan(v)):
            raise ValueError("speed limits must be >= 0")
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "v_max_at", v)


def merge_constraints(constraints: Sequence[VelocityConstraint]) -> VelocityConstraint:
    """Pointwise minimum of constraints sharing the same stations."""
    if not constraints:
        raise ValueError("nothing to merge")
    s = constraints[0].samples
    v = constraints[0].v_max_at.copy()
    for c in constraints[1:]:
        if c.samples.shape != s.shape or not np.allclose(c.samples, s, rtol=0, atol=1e-9):
            raise ValueError("constraints must share stations")
        v = np.minimum(v, c.v_max_at)
    return VelocityConstraint(s, v)


def stop_planner(
    total_len: float, v_cruise: float, a_dec: float, stations: np.ndarray | None = None
) -> VelocityConstraint:
    """Constant-deceleration approach: ``min(v_cruise, sqrt(2 a_dec (L - s)))``."""
    if not (a_dec > 0):
        raise ValueError("a_dec must be > 0")
    s = make_stations(total_len) if stations is None else np.asarray(stations, dtype=float)
    v = np.minimum(v_cruise, np.sqrt(2.0 * a_dec * np.maximum(0.0, total_len - s)))
    return VelocityConstraint(s, v)


def obstacle_planner(
    c: HermiteCurve,
    obstacles,
    width: float,
    margin: float,
    standoff: float,
    a_dec: float,
    stations: np.ndarray | None = None,
) -> VelocityConstraint:
    """Stop ``standoff`` metres before the first on-path obstacle hit; unbounded when clear."""
    if not (a_dec > 0):
        raise ValueError("a_dec must be > 0")
    tab = ArcTable.of(c)
    s = make_stations(tab.length) if stations is None else np.asarray(stations, dtype=float)
    hits = check_collision(c, obstacles, width, margin)
    if not hits:
        return VelocityConstraint(s, np.full(s.shape, np.inf))
    s_hit = min(float(tab.s_at(h.t)) for h in hits)
    return VelocityConstraint(s, np.sqrt(2.0 * a_dec * np.maximum(0.0, s_hit - standoff - s)))


def curvature_from_samples(stations: np.ndarray, points: np.ndarray, eps: float = 1e-9) -> np.ndarray:
    """Discrete curvature: heading change between successive chords per unit station length."""
    d = np.diff(points, axis=0)
    heading = np.unwrap(np.arctan2(d[:, 1], d[:, 0]))
    kappa = np.zeros(len(stations))
    if len(heading) >= 2:
        dh = np.abs(np.diff(heading))
        span = 0.5 * (stations[2:] - stations[:-2])
        kappa[1:-1] = dh / np.maximum(span, eps)
        kappa[0] = kappa[1]
        kappa[-1] = kappa[-2]
    return kappa


def curve_planner(
    c,
    omega_max: float,
    v_cruise: float,
    stations: np.ndarray | None = None,
    eps: float = 1e-9,
) -> VelocityConstraint:
    """Cap speed so that ``v * kappa <= omega_max``.

    ``c`` is either a :class:`HermiteCurve` (sampled every 0.5 m, or at the
    given arc-length ``stations``) or a ``(stations, points)`` pair.
    """
    if not (omega_max > 0):
        raise ValueError("omega_max must be > 0")
    if isinstance(c, HermiteCurve):
        tab = ArcTable.of(c)
        s = make_stations(tab.length) if stations is None else np.asarray(stations, dtype=float)
        pts = hermite_eval(c, tab.t_at(s))
    else:
        s, pts = np.asarray(c[0], dtype=float), np.asarray(c[1], dtype=float)
    kappa = curvature_from_samples(s, pts)
    return VelocityConstraint(s, np.minimum(v_cruise, omega_max / np.maximum(kappa, eps)))


# ---------------------------------------------------------------- graph search


@dataclass(frozen=True)
class VelocityProfile:
    stations: np.ndarray
    speeds: np.ndarray
    feasible: bool = True

    def speed_at(self, s: float) -> float:
        return float(np.interp(s, self.stations, self.speeds))


_TIE = 1e-12


def velocity_graph_search(
    constraints: Sequence[VelocityConstraint],
    stations: np.ndarray | None,
    a_max: float,
    v_levels: Sequence[float],
    v_start: float,
) -> VelocityProfile:
    """Best speed sequence through a layered graph of discrete speeds.

    Layer ``i`` holds the levels allowed by the merged constraint at
    station ``i``; the first layer is the single node ``v_start``.  An edge
    joins consecutive layers when ``|v_j^2 - v_i^2| <= 2 a_max ds``.  The
    path maximising the speed sum is found by backward dynamic programming;
    among equal sums the one that is faster at earlier stations wins.  If no
    path reaches the last station an all-zero profile with
    ``feasible=False`` is returned.
    """
    merged = merge_constraints(constraints)
    s = merged.samples if stations is None else np.asarray(stations, dtype=float)
    if s.shape != merged.samples.shape or not np.allclose(s, merged.samples, rtol=0, atol=1e-9):
        raise ValueError("stations must match the constraint stations")
    levels = np.unique(np.asarray(v_levels, dtype=float))
    if levels.size == 0 or levels[0] != 0.0:
        raise ValueError("v_levels must include 0")
    limit = merged.v_max_at
    if v_start < 0 or v_start > limit[0] + 1e-9:
        raise ValueError(f"v_start={v_start} violates the first-station limit {limit[0]}")
    n = s.size
    if n == 1:
        return VelocityProfile(s, np.array([v_start]))

    layers = [np.array([v_start])] + [levels[levels <= limit[i] + 1e-9] for i in range(1, n)]
    NEG = -math.inf
    # best[i][k]: largest sum of speeds from station i onwards starting at node k
    best = [None] * n
    nxt = [None] * n
    best[n - 1] = layers[n - 1].copy()
    for i in range(n - 2, -1, -1):
        vi, vj = layers[i], layers[i + 1]
        ds = s[i + 1] - s[i]
        ok = np.abs(vj[None, :] ** 2 - vi[:, None] ** 2) <= 2.0 * a_max * ds + 1e-12
        cand = np.where(ok, best[i + 1][None, :], NEG)
        b = np.full(vi.size, NEG)
        choice = np.full(vi.size, -1)
        for k in range(vi.size):
            # scan from fastest successor so ties keep the higher speed
            for j in range(vj.size - 1, -1, -1):
                if cand[k, j] > b[k] + _TIE:
                    b[k], choice[k] = cand[k, j], j
        best[i] = np.where(b > NEG, b + vi, NEG)
        nxt[i] = choice
    if best[0][0] == NEG:
        return VelocityProfile(s, np.zeros(n), feasible=False)
    speeds = np.empty(n)
    k = 0
    for i in range(n):
        speeds[i] = layers[i][k]
        if i < n - 1:
            k = nxt[i][k]
    return VelocityProfile(s, speeds)


def default_levels(v_cruise: float, n: int = 21) -> np.ndarray:
    return np.linspace(0.0, v_cruise, n)


@dataclass
class PlannerParams:
    width: float = 1.2
    margin: float = 0.5
    a_max: float = 0.3
    a_dec: float = 0.3
    omega_max: float = 0.4
    v_cruise: float = 2.0
    standoff: float = 2.0
    ds: float = DEFAULT_DS
    n_levels: int = 21
    offsets: List[Tuple[float, float]] = field(default_factory=offset_grid)

    def __post_init__(self):
        for name in ("width", "margin", "standoff"):
            if not (getattr(self, name) >= 0):
                raise ValueError(f"{name} must be >= 0")
        for name in ("a_max", "a_dec", "omega_max", "v_cruise", "ds"):
            if not (getattr(self, name) > 0):
                raise ValueError(f"{name} must be > 0")
        if self.n_levels < 2:
            raise ValueError("n_levels must be >= 2")
        self.offsets = [(float(a), float(b)) for a, b in self.offsets]
        if not self.offsets or self.offsets[0] != (0.0, 0.0):
            raise ValueError("offsets must start with (0, 0)")


@dataclass(frozen=True)
class Plan:
    curve: HermiteCurve
    stations: np.ndarray
    points: np.ndarray
    profile: VelocityProfile


def plan_speed(
    curve: HermiteCurve, obstacles, params: PlannerParams, v_start: float
) -> Plan:
    """Sample ``curve`` and attach the searched velocity profile.

    When the current speed leaves no feasible profile the search restarts
    from successively lower speed levels, so the returned profile is
    always feasible; the controller then brakes as hard as it can.
    """
    s, _, pts = sample_curve(curve, params.ds)
    total = float(s[-1])
    cons = [
        stop_planner(total, params.v_cruise, params.a_dec, s),
        obstacle_planner(curve, obstacles, params.width, params.margin, params.standoff, params.a_dec, s),
        curve_planner((s, pts), params.omega_max, params.v_cruise),
    ]
    limit0 = merge_constraints(cons).v_max_at[0]
    levels = default_levels(params.v_cruise, params.n_levels)
    v0 = min(max(v_start, 0.0), limit0)
    profile = velocity_graph_search(cons, s, params.a_max, levels, v0)
    # Too fast to respect a limit that comes up early: start from the
    # fastest lower level that admits a profile (zero always does).
    for lv in levels[::-1]:
        if profile.feasible or lv >= v0:
            continue
        profile = velocity_graph_search(cons, s, params.a_max, levels, float(lv))
    return Plan(curve, s, pts, profile)
