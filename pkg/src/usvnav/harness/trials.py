"""
Self-contained closed-loop trials that exercise one subsystem at a time.

``figure_eight_trial`` drives the vessel around a figure-eight on the EKF
estimate and reports the position error; ``line_tracking_trial`` starts the
vessel beside a straight path and records the pure-pursuit cross-track
error on ground truth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import dynamics as dyn
from ..dynamics import BodyVelocity, Pose2D, VesselState
from ..follower import lookahead_target, project_onto_path, pursuit_command
from ..localization import EkfState, GnssMeasurement, ImuMeasurement, PlanarEkf, ProcessNoise
from .sim import VelocityController

DEFAULT_VESSEL = dyn.VesselParams(
    m=250.0, mx=25.0, my=125.0, Iz=400.0, Jz=80.0, w=2.0, hull_width=1.2, lin_drag=(50.0, 400.0, 300.0), f_max=300.0
)
DEFAULT_PROPELLER = dyn.PropellerParams(rho=1025.0, Dp=0.25, k0=0.45, k1=-0.35, k2=-0.05, n_max=30.0)
DEFAULT_Q = ProcessNoise()


@dataclass
class TrialResult:
    t: np.ndarray
    truth: np.ndarray  # (n, 3) x, y, psi
    estimate: np.ndarray  # (n, 3)
    cross_track: np.ndarray  # (n,)

    @property
    def rmse_position(self) -> float:
        d = self.truth[:, :2] - self.estimate[:, :2]
        return float(math.sqrt(np.mean(np.sum(d * d, axis=1))))


def figure_eight(a: float = 20.0, n: int = 2000, laps: int = 3) -> np.ndarray:
    """Lemniscate of Gerono ``(a sin s, a/2 sin 2s)`` repeated ``laps`` times."""
    s = np.linspace(0.0, 2 * math.pi * laps, n * laps, endpoint=False)
    return np.column_stack([a * np.sin(s), 0.5 * a * np.sin(2 * s)])


def _window(path: np.ndarray, s_cum: np.ndarray, s_now: float, ahead: float) -> np.ndarray:
    # local slice keeps the lookahead from jumping to the other lobe at the crossing
    i0 = max(0, int(np.searchsorted(s_cum, s_now)) - 2)
    i1 = int(np.searchsorted(s_cum, s_now + ahead)) + 2
    return path[i0 : max(i1, i0 + 2)]


def _track_loop(
    path: np.ndarray,
    start: VesselState,
    duration: float,
    dt: float,
    v_des: float,
    lookahead: float,
    seed: int,
    use_estimate: bool,
    gnss_sigma: float = 0.3,
    gnss_rate: float = 1.0,
    imu_sigma_psi: float = 0.02,
    imu_sigma_omega: float = 0.01,
    imu_rate: float = 50.0,
    ctrl_rate: float = 20.0,
    q: ProcessNoise = DEFAULT_Q,
    vessel: dyn.VesselParams = DEFAULT_VESSEL,
    propeller: dyn.PropellerParams = DEFAULT_PROPELLER,
    k_u: float = 0.3,
    k_r: float = 3.0,
) -> TrialResult:
    rng_g, rng_i = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    s_cum = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(path, axis=0).T))])
    ctrl = VelocityController(vessel, propeller, k_u, k_r)
    ekf = PlanarEkf(EkfState.initial(start.pose, start.vel, (0.3, 0.3, 0.05, 0.2, 0.2, 0.05)), q)
    truth = start
    n = int(round(duration / dt))
    s_progress = 0.0
    tau = dyn.Wrench()
    T, X, E, CT = [], [], [], []

    def due(k, rate):
        return k == 0 or math.floor(k * dt * rate + 1e-9) > math.floor((k - 1) * dt * rate + 1e-9)

    for k in range(n + 1):
        t = k * dt
        if due(k, imu_rate):
            ekf.imu(
                t,
                ImuMeasurement(
                    truth.pose.psi + rng_i.normal(0, imu_sigma_psi),
                    truth.vel.omega + rng_i.normal(0, imu_sigma_omega),
                    imu_sigma_psi,
                    imu_sigma_omega,
                ),
            )
        if k > 0 and due(k, gnss_rate):
            ekf.gnss(t, GnssMeasurement(truth.pose.x + rng_g.normal(0, gnss_sigma), truth.pose.y + rng_g.normal(0, gnss_sigma), gnss_sigma))
        ekf.advance(t)
        pose = ekf.state.pose if use_estimate else truth.pose
        vel = ekf.state.velocity if use_estimate else truth.vel
        if due(k, ctrl_rate):
            win = _window(path, s_cum, s_progress, 3 * lookahead)
            s_local, _, _ = project_onto_path(win, (pose.x, pose.y))
            i0 = max(0, int(np.searchsorted(s_cum, s_progress)) - 2)
            s_progress = max(s_progress, s_cum[i0] + s_local)
            tgt = lookahead_target(win, pose, lookahead)
            if math.hypot(tgt.point[0] - pose.x, tgt.point[1] - pose.y) > 1e-9:
                v_cmd, om_cmd = pursuit_command(pose, tgt.point, v_des, lookahead)
            else:
                v_cmd, om_cmd = v_des, 0.0
            tau = ctrl(v_cmd, om_cmd, vel, truth.vel.u)
        _, _, ct = project_onto_path(_window(path, s_cum, s_progress, 3 * lookahead), (truth.pose.x, truth.pose.y))
        T.append(t)
        X.append((truth.pose.x, truth.pose.y, truth.pose.psi))
        E.append(tuple(ekf.state.mean[:3]))
        CT.append(ct)
        if k < n:
            truth = dyn.step(truth, tau, dt, vessel)
    return TrialResult(np.array(T), np.array(X), np.array(E), np.array(CT))


def figure_eight_trial(
    duration: float = 120.0,
    dt: float = 0.02,
    seed: int = 0,
    v_des: float = 1.0,
    lookahead: float = 6.0,
    **kw,
) -> TrialResult:
    """Track a figure-eight on the EKF estimate (GNSS 1 Hz, IMU 50 Hz by default)."""
    path = figure_eight()
    d = path[1] - path[0]
    start = VesselState(Pose2D(path[0, 0], path[0, 1], math.atan2(d[1], d[0])), BodyVelocity())
    return _track_loop(path, start, duration, dt, v_des, lookahead, seed, use_estimate=True, **kw)


def line_tracking_trial(
    offset: float = 2.0,
    length: float = 50.0,
    duration: float = 60.0,
    dt: float = 0.02,
    v_des: float = 0.7,
    lookahead: float = 4.0,
    seed: int = 0,
    extension_len: float = 10.0,
) -> TrialResult:
    """Pure pursuit on ground truth from a lateral ``offset`` beside a straight path."""
    xs = np.arange(0.0, length + 1e-9, 0.5)
    path = np.column_stack([xs, np.zeros_like(xs)])
    path = np.vstack([path, [length + extension_len, 0.0]]) if extension_len > 0 else path
    start = VesselState(Pose2D(0.0, offset, 0.0), BodyVelocity())
    return _track_loop(path, start, duration, dt, v_des, lookahead, seed, use_estimate=False)
