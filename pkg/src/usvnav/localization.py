"""
Planar extended Kalman filter over ``(x, y, psi, u, v, omega)``.

Prediction uses a constant-body-velocity kinematic model with velocity
random walk; GNSS fixes update ``(x, y)`` and the IMU updates
``(psi, omega)``.  All updates use the Joseph form and re-symmetrize the
covariance afterwards.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .dynamics import Pose2D, BodyVelocity, wrap_angle

STATE_DIM = 6
IX, IY, IPSI, IU, IV, IOMEGA = range(6)


@dataclass(frozen=True)
class EkfState:
    """Filter mean/covariance plus diagnostics of the most recent update.

    ``innovation``/``nis`` are ``None`` until a measurement was processed;
    ``rejected`` is set when the last update was refused.
    """

    mean: np.ndarray
    cov: np.ndarray
    innovation: np.ndarray | None = None
    nis: float | None = None
    rejected: bool = False

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(STATE_DIM)
        cov = np.array(self.cov, dtype=float).reshape(STATE_DIM, STATE_DIM)
        if not np.all(np.isfinite(mean)) or not np.all(np.isfinite(cov)):
            raise ValueError("EkfState must be finite")
        if np.max(np.abs(cov - cov.T)) > 1e-9:
            raise ValueError("EkfState covariance must be symmetric")
        mean[IPSI] = wrap_angle(mean[IPSI])
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def pose(self) -> Pose2D:
        return Pose2D(self.mean[IX], self.mean[IY], self.mean[IPSI])

    @property
    def velocity(self) -> BodyVelocity:
        return BodyVelocity(self.mean[IU], self.mean[IV], self.mean[IOMEGA])

    @classmethod
    def initial(cls, pose: Pose2D, vel: BodyVelocity | None = None, sigmas=(1.0, 1.0, 0.1, 0.5, 0.5, 0.1)):
        vel = vel or BodyVelocity()
        mean = [pose.x, pose.y, pose.psi, vel.u, vel.v, vel.omega]
        return cls(mean, np.diag(np.square(np.asarray(sigmas, dtype=float))))


@dataclass(frozen=True)
class ProcessNoise:
    """Continuous-time noise densities; ``Q(dt) = diag(q) * dt``.

    ``q_u``, ``q_v``, ``q_omega`` drive the velocity random walk, the pose
    terms absorb unmodelled kinematics.
    """

    q_pos: float = 1e-4
    q_psi: float = 1e-4
    q_u: float = 0.02
    q_v: float = 0.002
    q_omega: float = 0.01

    def __post_init__(self):
        for name in ("q_pos", "q_psi", "q_u", "q_v", "q_omega"):
            val = getattr(self, name)
            if not (val >= 0) or not math.isfinite(val):
                raise ValueError(f"{name} must be finite and >= 0, got {val}")

    def matrix(self, dt: float) -> np.ndarray:
        return np.diag([self.q_pos, self.q_pos, self.q_psi, self.q_u, self.q_v, self.q_omega]) * dt


@dataclass(frozen=True)
class GnssMeasurement:
    x: float
    y: float
    sigma: float

    def __post_init__(self):
        if not (self.sigma > 0):
            raise ValueError(f"sigma must be > 0, got {self.sigma}")


@dataclass(frozen=True)
class ImuMeasurement:
    psi: float
    omega: float
    sigma_psi: float
    sigma_omega: float

    def __post_init__(self):
        if not (self.sigma_psi > 0 and self.sigma_omega > 0):
            raise ValueError("IMU sigmas must be > 0")
        object.__setattr__(self, "psi", wrap_angle(float(self.psi)))


def motion_model(mean: np.ndarray, dt: float) -> np.ndarray:
    """Propagate a state vector by ``dt`` at constant body velocity."""
    x, y, psi, u, v, r = mean
    c, s = math.cos(psi), math.sin(psi)
    out = np.array(mean, dtype=float)
    out[IX] = x + dt * (c * u - s * v)
    out[IY] = y + dt * (s * u + c * v)
    out[IPSI] = psi + dt * r
    return out


def motion_jacobian(mean: np.ndarray, dt: float) -> np.ndarray:
    _, _, psi, u, v, _ = mean
    c, s = math.cos(psi), math.sin(psi)
    F = np.eye(STATE_DIM)
    F[IX, IPSI] = dt * (-s * u - c * v)
    F[IX, IU] = dt * c
    F[IX, IV] = -dt * s
    F[IY, IPSI] = dt * (c * u - s * v)
    F[IY, IU] = dt * s
    F[IY, IV] = dt * c
    F[IPSI, IOMEGA] = dt
    return F


def _symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def predict(state: EkfState, dt: float, q: ProcessNoise) -> EkfState:
    if not (dt > 0):
        raise ValueError(f"dt must be > 0, got {dt}")
    F = motion_jacobian(state.mean, dt)
    cov = _symmetrize(F @ state.cov @ F.T + q.matrix(dt))
    return EkfState(motion_model(state.mean, dt), cov)


def _update(state: EkfState, H: np.ndarray, z: np.ndarray, R: np.ndarray, wrap_rows=()) -> EkfState:
    innov = z - H @ state.mean
    for i in wrap_rows:
        innov[i] = wrap_angle(innov[i])
    S = _symmetrize(H @ state.cov @ H.T + R)
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        return replace(state, innovation=innov, nis=None, rejected=True)
    # K = P H^T S^-1 via two triangular solves
    PHt = state.cov @ H.T
    K = np.linalg.solve(L.T, np.linalg.solve(L, PHt.T)).T
    y = np.linalg.solve(L, innov)
    nis = float(y @ y)
    mean = state.mean + K @ innov
    IKH = np.eye(STATE_DIM) - K @ H
    cov = _symmetrize(IKH @ state.cov @ IKH.T + K @ R @ K.T)
    return EkfState(mean, cov, innovation=innov, nis=nis, rejected=False)


_H_GNSS = np.zeros((2, STATE_DIM))
_H_GNSS[0, IX] = _H_GNSS[1, IY] = 1.0
_H_IMU = np.zeros((2, STATE_DIM))
_H_IMU[0, IPSI] = _H_IMU[1, IOMEGA] = 1.0


def update_gnss(state: EkfState, meas: GnssMeasurement) -> EkfState:
    if not math.isfinite(meas.sigma):
        return state
    R = np.eye(2) * meas.sigma**2
    return _update(state, _H_GNSS, np.array([meas.x, meas.y]), R)


def update_imu(state: EkfState, meas: ImuMeasurement) -> EkfState:
    """Heading/yaw-rate update; the heading innovation is wrapped to (-pi, pi]."""
    if not (math.isfinite(meas.sigma_psi) and math.isfinite(meas.sigma_omega)):
        return state
    R = np.diag([meas.sigma_psi**2, meas.sigma_omega**2])
    return _update(state, _H_IMU, np.array([meas.psi, meas.omega]), R, wrap_rows=(0,))


@dataclass
class PlanarEkf:
    """Stateful wrapper that timestamps the filter and drops stale data.

    Measurements older than the filter time are discarded and counted in
    ``dropped``; newer ones trigger a prediction up to their timestamp.
    """

    state: EkfState
    q: ProcessNoise = field(default_factory=ProcessNoise)
    time: float = 0.0
    dropped: int = 0
    rejected: int = 0

    def advance(self, t: float) -> None:
        if t > self.time:
            self.state = predict(self.state, t - self.time, self.q)
            self.time = t

    def _accept(self, t: float) -> bool:
        if t < self.time:
            self.dropped += 1
            return False
        self.advance(t)
        return True

    def gnss(self, t: float, meas: GnssMeasurement) -> None:
        if self._accept(t):
            self.state = update_gnss(self.state, meas)
            self.rejected += self.state.rejected

    def imu(self, t: float, meas: ImuMeasurement) -> None:
        if self._accept(t):
            self.state = update_imu(self.state, meas)
            self.rejected += self.state.rejected
