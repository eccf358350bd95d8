"""
Planar rigid-body model of a differential-thrust catamaran.

State is split into a world pose ``(x, y, psi)`` and a body velocity
``(u, v, omega)``.  The velocity obeys

    M * dnu/dt = -C(nu) * nu - D * nu + tau

with a diagonal mass matrix (rigid mass plus added mass), a velocity
dependent Coriolis-type matrix and an optional diagonal linear damping
``D``.  Two Coriolis variants are provided: ``"paper_literal"`` keeps the
original published matrix, ``"skew_corrected"`` (default) is its
energy-conserving skew-symmetric counterpart.

Thrust allocation maps the right/left thruster forces onto a body wrench,
and the propeller model relates shaft speed to thrust through a quadratic
thrust coefficient in the advance ratio.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Tuple

import numpy as np

CoriolisMode = Literal["paper_literal", "skew_corrected"]
CORIOLIS_MODES = ("paper_literal", "skew_corrected")


def wrap_angle(a: float) -> float:
    """Wrap an angle to the half-open interval (-pi, pi]."""
    return math.pi - (math.pi - a) % (2.0 * math.pi)


def _check_finite(name, *values):
    for v in values:
        if not math.isfinite(v):
            raise ValueError(f"{name} must be finite, got {v!r}")


@dataclass(frozen=True)
class BodyVelocity:
    """Surge ``u`` (m/s), sway ``v`` (m/s) and yaw rate ``omega`` (rad/s)."""

    u: float = 0.0
    v: float = 0.0
    omega: float = 0.0

    def __post_init__(self):
        _check_finite("BodyVelocity", self.u, self.v, self.omega)

    def as_array(self) -> np.ndarray:
        return np.array([self.u, self.v, self.omega], dtype=float)

    @classmethod
    def from_array(cls, a) -> "BodyVelocity":
        return cls(float(a[0]), float(a[1]), float(a[2]))


@dataclass(frozen=True)
class Wrench:
    """Body-frame surge force, sway force (N) and yaw moment (N m)."""

    fx: float = 0.0
    fy: float = 0.0
    fyaw: float = 0.0

    def __post_init__(self):
        _check_finite("Wrench", self.fx, self.fy, self.fyaw)

    def as_array(self) -> np.ndarray:
        return np.array([self.fx, self.fy, self.fyaw], dtype=float)

    @classmethod
    def from_array(cls, a) -> "Wrench":
        return cls(float(a[0]), float(a[1]), float(a[2]))


@dataclass(frozen=True)
class Pose2D:
    """World position (m) and heading (rad); heading is kept in (-pi, pi]."""

    x: float = 0.0
    y: float = 0.0
    psi: float = 0.0

    def __post_init__(self):
        _check_finite("Pose2D", self.x, self.y, self.psi)
        object.__setattr__(self, "psi", wrap_angle(float(self.psi)))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)

    def to_body(self, p) -> np.ndarray:
        """Express world point(s) ``p`` in this pose's body frame."""
        p = np.asarray(p, dtype=float)
        c, s = math.cos(self.psi), math.sin(self.psi)
        d = p - np.array([self.x, self.y])
        # R(psi)^T applied row-wise
        return np.stack([c * d[..., 0] + s * d[..., 1], -s * d[..., 0] + c * d[..., 1]], axis=-1)

    def to_world(self, p) -> np.ndarray:
        """Express body-frame point(s) ``p`` in the world frame."""
        p = np.asarray(p, dtype=float)
        c, s = math.cos(self.psi), math.sin(self.psi)
        return np.stack(
            [self.x + c * p[..., 0] - s * p[..., 1], self.y + s * p[..., 0] + c * p[..., 1]], axis=-1
        )


@dataclass(frozen=True)
class VesselParams:
    """Hull inertia, thruster geometry and damping.

    ``lin_drag`` holds the diagonal linear damping for surge, sway and yaw.
    ``f_max`` is the per-thruster force limit used by
    :func:`inverse_allocation`.
    """

    m: float
    mx: float = 0.0
    my: float = 0.0
    Iz: float = 1.0
    Jz: float = 0.0
    w: float = 2.0
    hull_width: float = 1.2  # half-extent used for clearance
    lin_drag: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    f_max: float = math.inf

    def __post_init__(self):
        object.__setattr__(self, "lin_drag", tuple(float(d) for d in self.lin_drag))
        if len(self.lin_drag) != 3:
            raise ValueError("lin_drag needs three coefficients")
        if not (self.m > 0):
            raise ValueError(f"m must be > 0, got {self.m}")
        if not (self.Iz > 0):
            raise ValueError(f"Iz must be > 0, got {self.Iz}")
        for name in ("mx", "my", "Jz", "w", "hull_width"):
            val = getattr(self, name)
            if not (val >= 0) or not math.isfinite(val):
                raise ValueError(f"{name} must be finite and >= 0, got {val}")
        if any(not (d >= 0) or not math.isfinite(d) for d in self.lin_drag):
            raise ValueError(f"lin_drag must be finite and >= 0, got {self.lin_drag}")
        if not (self.f_max > 0):
            raise ValueError(f"f_max must be > 0, got {self.f_max}")


@dataclass(frozen=True)
class PropellerParams:
    """Propeller geometry and thrust-coefficient polynomial ``k2 J^2 + k1 J + k0``."""

    rho: float
    Dp: float
    k0: float
    k1: float = 0.0
    k2: float = 0.0
    n_max: float = 50.0

    def __post_init__(self):
        if not (self.rho > 0):
            raise ValueError(f"rho must be > 0, got {self.rho}")
        if not (self.Dp > 0):
            raise ValueError(f"Dp must be > 0, got {self.Dp}")
        if not (self.n_max > 0):
            raise ValueError(f"n_max must be > 0, got {self.n_max}")
        _check_finite("PropellerParams", self.k0, self.k1, self.k2)


@dataclass(frozen=True)
class VesselState:
    pose: Pose2D = field(default_factory=Pose2D)
    vel: BodyVelocity = field(default_factory=BodyVelocity)

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.pose.x, self.pose.y, self.pose.psi, self.vel.u, self.vel.v, self.vel.omega]
        )

    @classmethod
    def from_array(cls, a) -> "VesselState":
        return cls(Pose2D(float(a[0]), float(a[1]), float(a[2])), BodyVelocity.from_array(a[3:6]))


# ---------------------------------------------------------------- rigid body


def mass_matrix(params: VesselParams) -> np.ndarray:
    return np.diag([params.m + params.mx, params.m + params.my, params.Iz + params.Jz])


def coriolis_matrix(
    params: VesselParams, nu: BodyVelocity, mode: CoriolisMode = "skew_corrected"
) -> np.ndarray:
    """Velocity-dependent Coriolis/centripetal matrix.

    ``paper_literal`` reproduces the published rows
    ``[0, 0, -mu; 0, 0, mv; mu, -mu, 0]`` verbatim.  That matrix is not
    skew-symmetric and produces a yaw moment ``m u^2`` in pure surge, so the
    default ``skew_corrected`` variant uses ``[0, 0, -mv; 0, 0, mu; mv, -mu, 0]``
    which satisfies ``nu^T C nu = 0``.
    """
    m, u, v = params.m, nu.u, nu.v
    if mode == "paper_literal":
        return np.array([[0.0, 0.0, -m * u], [0.0, 0.0, m * v], [m * u, -m * u, 0.0]])
    if mode == "skew_corrected":
        return np.array([[0.0, 0.0, -m * v], [0.0, 0.0, m * u], [m * v, -m * u, 0.0]])
    raise ValueError(f"unknown Coriolis mode {mode!r}; expected one of {CORIOLIS_MODES}")


def _accel(params: VesselParams, nu: np.ndarray, tau: np.ndarray, mode: str) -> np.ndarray:
    # diagonal M, so the solve is an elementwise division
    m, u, v, r = params.m, nu[0], nu[1], nu[2]
    if mode == "skew_corrected":
        cnu = (-m * v * r, m * u * r, m * v * u - m * u * v)
    elif mode == "paper_literal":
        cnu = (-m * u * r, m * v * r, m * u * u - m * u * v)
    else:
        raise ValueError(f"unknown Coriolis mode {mode!r}; expected one of {CORIOLIS_MODES}")
    d = params.lin_drag
    return np.array(
        [
            (tau[0] - cnu[0] - d[0] * u) / (params.m + params.mx),
            (tau[1] - cnu[1] - d[1] * v) / (params.m + params.my),
            (tau[2] - cnu[2] - d[2] * r) / (params.Iz + params.Jz),
        ]
    )


def dynamics_derivative(
    params: VesselParams, nu: BodyVelocity, tau: Wrench, mode: CoriolisMode = "skew_corrected"
) -> BodyVelocity:
    """Body acceleration ``M^-1 (-C(nu) nu - D nu + tau)``."""
    return BodyVelocity.from_array(_accel(params, nu.as_array(), tau.as_array(), mode))


def _state_rate(params, x, tau, mode):
    psi, u, v, r = x[2], x[3], x[4], x[5]
    c, s = math.cos(psi), math.sin(psi)
    out = np.empty(6)
    out[0] = c * u - s * v
    out[1] = s * u + c * v
    out[2] = r
    out[3:] = _accel(params, x[3:], tau, mode)
    return out


def step(
    state: VesselState,
    tau: Wrench,
    dt: float,
    params: VesselParams,
    mode: CoriolisMode = "skew_corrected",
) -> VesselState:
    """Advance pose and velocity by one classical RK4 step of length ``dt``."""
    if not (dt > 0):
        raise ValueError(f"dt must be > 0, got {dt}")
    x = state.as_array()
    t = tau.as_array()
    k1 = _state_rate(params, x, t, mode)
    k2 = _state_rate(params, x + 0.5 * dt * k1, t, mode)
    k3 = _state_rate(params, x + 0.5 * dt * k2, t, mode)
    k4 = _state_rate(params, x + dt * k3, t, mode)
    return VesselState.from_array(x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4))


def kinetic_energy(params: VesselParams, nu: BodyVelocity) -> float:
    a = nu.as_array()
    return 0.5 * float(a @ mass_matrix(params) @ a)


# ---------------------------------------------------------------- thrusters


def allocate_thrust(Fr: float, Fl: float, w: float) -> Wrench:
    """Body wrench from right/left thruster forces separated by ``w``."""
    if not (w > 0):
        raise ValueError(f"w must be > 0, got {w}")
    return Wrench(0.5 * (Fr + Fl), 0.0, 0.5 * w * (Fr - Fl))


def inverse_allocation(tau_des: Wrench, w: float, f_max: float = math.inf) -> Tuple[float, float]:
    """Right/left forces reproducing ``(fx, fyaw)`` of ``tau_des``.

    Sway force is unactuated and ignored.  Each force is clamped to
    ``[-f_max, f_max]`` independently.
    """
    if not (w > 0):
        raise ValueError(f"w must be > 0, got {w}")
    fr = tau_des.fx + tau_des.fyaw / w
    fl = tau_des.fx - tau_des.fyaw / w
    fr = min(max(fr, -f_max), f_max)
    fl = min(max(fl, -f_max), f_max)
    return fr, fl


def propeller_thrust(n: float, up: float, prop: PropellerParams) -> float:
    """Thrust ``rho n^2 D^4 Kt(J)`` with advance ratio ``J = up / (n D)``.

    Defined as 0 at ``n == 0``.
    """
    if n == 0:
        return 0.0
    js = up / (n * prop.Dp)
    kt = prop.k2 * js * js + prop.k1 * js + prop.k0
    return prop.rho * n * n * prop.Dp**4 * kt


def _zero_thrust_rev(up: float, prop: PropellerParams) -> float:
    # Larger root of k0 n^2 + k1 (up/D) n + k2 (up/D)^2 = 0; above it Kt > 0
    # and thrust grows monotonically with n.
    if up == 0:
        return 0.0
    a = prop.k0
    b = prop.k1 * up / prop.Dp
    c = prop.k2 * (up / prop.Dp) ** 2
    disc = b * b - 4 * a * c
    if disc < 0:
        return 0.0
    return max(0.0, (-b + math.sqrt(disc)) / (2 * a))


def thrust_to_rev(T_des: float, up: float, prop: PropellerParams) -> Tuple[float, bool]:
    """Shaft speed ``n`` in ``[0, n_max]`` producing ``T_des``; returns ``(n, clamped)``.

    Bisection over the monotone branch where ``Kt > 0``.  Targets outside
    the achievable range saturate at the bracket ends and set ``clamped``.
    """
    if prop.k0 <= 0:
        raise ValueError("thrust_to_rev needs k0 > 0 for a monotone thrust branch")
    if T_des <= 0:
        return 0.0, T_des < 0
    lo = _zero_thrust_rev(up, prop)
    hi = prop.n_max
    t_hi = propeller_thrust(hi, up, prop)
    if lo >= hi or T_des >= t_hi:
        return hi, T_des > t_hi
    tol = 1e-9 * max(1.0, abs(T_des))
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        err = propeller_thrust(mid, up, prop) - T_des
        if abs(err) < tol:
            return mid, False
        if err < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi), False
