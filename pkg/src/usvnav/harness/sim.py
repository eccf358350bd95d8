"""
Deterministic closed-loop simulation.

Each fixed ``dt`` tick runs, in order: sensor simulation (each at its own
rate), EKF prediction/updates, perception and fusion, the behaviour tree,
(re)planning, pure pursuit and the velocity controller, then one RK4 step
of the ground-truth dynamics.  Only the sensor models and the metrics look
at ground truth.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from .. import dynamics as dyn
from ..behavior import PLANNED_GOAL, Blackboard, Goal, NodeStatus, build_tree
from ..dynamics import BodyVelocity, Pose2D, VesselState, Wrench
from ..follower import track
from ..heartbeat import StateSnapshot
from ..localization import EkfState, GnssMeasurement, ImuMeasurement, PlanarEkf
from ..perception import (
    Circle,
    World,
    filter_outliers,
    fuse,
    segment_scan,
    simulate_camera_detections,
    simulate_lidar,
)
from ..planner import Plan, check_collision, local_waypoint_search, plan_speed
from .scenario import Scenario

log = logging.getLogger(__name__)

COLUMNS = (
    "t",
    "x",
    "y",
    "psi",
    "u",
    "v",
    "omega",
    "est_x",
    "est_y",
    "est_psi",
    "est_u",
    "est_v",
    "est_omega",
    "fx",
    "fy",
    "fyaw",
    "goal_x",
    "goal_y",
    "goal_psi",
    "bt_status",
    "n_fused",
)


@dataclass
class SimLog:
    rows: List[tuple] = field(default_factory=list)
    paths: List[Tuple[float, np.ndarray]] = field(default_factory=list)
    events: List[Tuple[float, str]] = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        i = COLUMNS.index(name)
        return np.array([r[i] for r in self.rows], dtype=float if name != "bt_status" else object)


@dataclass
class RunResult:
    log: SimLog
    metrics: Dict[str, Any]
    scenario: Scenario

    @property
    def success(self) -> bool:
        return bool(self.metrics.get("task_success"))


# ---------------------------------------------------------------- control


BLOCKED_RETRY_PERIOD = 1.0  # s between planning attempts while no path exists

@dataclass
class VelocityController:
    """Proportional surge-speed and yaw-rate loops with drag feed-forward.

    The desired wrench is split onto the two thrusters, converted to shaft
    speeds through the inverse propeller model and back to the thrust that
    is actually produced, so force and shaft-speed saturation both apply.
    """

    vessel: dyn.VesselParams
    propeller: dyn.PropellerParams
    k_u: float = 0.3
    k_r: float = 3.0

    def desired_wrench(self, v_des: float, omega_des: float, vel: BodyVelocity) -> Wrench:
        p = self.vessel
        fx = (p.m + p.mx) * self.k_u * (v_des - vel.u) + p.lin_drag[0] * v_des
        fyaw = (p.Iz + p.Jz) * self.k_r * (omega_des - vel.omega) + p.lin_drag[2] * omega_des
        return Wrench(fx, 0.0, fyaw)

    def _thruster(self, f: float, u: float) -> float:
        # reverse thrust mirrors the forward curve with the inflow sign flipped
        sgn = 1.0 if f >= 0 else -1.0
        up = max(sgn * u, 0.0)
        n, _ = dyn.thrust_to_rev(abs(f), up, self.propeller)
        return sgn * dyn.propeller_thrust(n, up, self.propeller)

    def __call__(self, v_des: float, omega_des: float, vel: BodyVelocity, u_inflow: float) -> Wrench:
        fr, fl = dyn.inverse_allocation(self.desired_wrench(v_des, omega_des, vel), self.vessel.w, self.vessel.f_max)
        return dyn.allocate_thrust(self._thruster(fr, u_inflow), self._thruster(fl, u_inflow), self.vessel.w)


# ---------------------------------------------------------------- metrics


def clearance_series(world: World, xy: np.ndarray) -> np.ndarray:
    """Distance from each position to the nearest obstacle or buoy surface."""
    best = np.full(len(xy), np.inf)
    for sh in world.shapes:
        if isinstance(sh, Circle):
            best = np.minimum(best, np.hypot(xy[:, 0] - sh.x, xy[:, 1] - sh.y) - sh.r)
        else:
            for a, b in sh.edges():
                ab = b - a
                t = np.clip(((xy - a) @ ab) / (ab @ ab), 0.0, 1.0)
                foot = a + t[:, None] * ab
                best = np.minimum(best, np.hypot(*(xy - foot).T))
    return best


def gate_crossings(xy: np.ndarray, t: np.ndarray, world: World, gates) -> List[Tuple[float, int]]:
    """Times at which the trajectory passes between each gate's two buoys."""
    events = []
    for gi, (ri, gi_) in enumerate(gates):
        r = np.array([world.buoys[ri].x, world.buoys[ri].y])
        g = np.array([world.buoys[gi_].x, world.buoys[gi_].y])
        e = g - r
        side = e[0] * (xy[:, 1] - r[1]) - e[1] * (xy[:, 0] - r[0])
        flips = np.nonzero(np.sign(side[:-1]) * np.sign(side[1:]) < 0)[0]
        for k in flips:
            a = side[k] / (side[k] - side[k + 1])
            p = xy[k] + a * (xy[k + 1] - xy[k])
            along = ((p - r) @ e) / (e @ e)
            if 0.0 <= along <= 1.0:
                events.append((float(t[k] + a * (t[k + 1] - t[k])), gi))
                break
    return sorted(events)


def rmse_position(rows_x, rows_y, est_x, est_y) -> float:
    dx = np.asarray(rows_x) - np.asarray(est_x)
    dy = np.asarray(rows_y) - np.asarray(est_y)
    return float(math.sqrt(np.mean(dx * dx + dy * dy)))


def compute_metrics(log: SimLog, scenario: Scenario, bt_final: str, completion_time, error: Optional[str]):
    t = log.column("t")
    xy = np.column_stack([log.column("x"), log.column("y")])
    crossings = gate_crossings(xy, t, scenario.world, scenario.gates)
    order = [g for _, g in crossings]
    gates_ok = order == list(range(len(scenario.gates)))
    clear = clearance_series(scenario.world, xy) if scenario.world.shapes else np.array([np.inf])
    task_success = error is None and bt_final == NodeStatus.SUCCESS.value and gates_ok
    return {
        "scenario": scenario.name,
        "seed": scenario.seed,
        "rmse_position": (
            rmse_position(log.column("x"), log.column("y"), log.column("est_x"), log.column("est_y")) if len(t) else None
        ),
        "completed": bt_final == NodeStatus.SUCCESS.value,
        "completion_time": completion_time,
        "task_success": bool(task_success),
        "bt_status": bt_final,
        "gate_crossings": [{"gate": g, "time": tc} for tc, g in crossings],
        "gates_in_order": bool(gates_ok),
        "min_clearance": float(np.min(clear)) if np.isfinite(np.min(clear)) else None,
        "hull_half_width": scenario.vessel.hull_width,
        "sim_duration": float(t[-1]) if len(t) else 0.0,
        "replans": len(log.paths),
        "error": error,
    }


# ---------------------------------------------------------------- run


def run(
    scenario: Scenario,
    seed: Optional[int] = None,
    duration: Optional[float] = None,
    heartbeat=None,
) -> RunResult:
    """Simulate ``scenario`` for its full duration and return the log and metrics.

    ``heartbeat`` is an optional started client exposing ``publish``; it
    receives an immutable snapshot of the estimate at every behaviour tick.
    """
    sc = scenario
    seed = sc.seed if seed is None else seed
    duration = sc.duration if duration is None else duration
    n_steps = int(round(duration / sc.dt))
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(4)]
    rng_lidar, rng_cam, rng_gnss, rng_imu = streams


    truth = VesselState(sc.start, sc.start_vel)
    ekf = PlanarEkf(EkfState.initial(sc.start, sc.start_vel, sc.ekf.initial_sigma), sc.ekf.q, time=0.0)
    tree = build_tree(sc.tree)
    bb = Blackboard(ego=ekf.state, config=sc.behavior)
    ctrl = VelocityController(sc.vessel, sc.propeller, sc.controller.k_u, sc.controller.k_r)
    pp = sc.planner

    simlog = SimLog()
    obstacles = np.empty((0, 2))
    fused_count = 0
    obstacles_fresh = False
    goal: Optional[Goal] = None
    plan: Optional[Plan] = None
    blocked = False
    last_attempt = -math.inf
    tau = Wrench()
    bt_status = NodeStatus.RUNNING.value
    finished = False
    completion_time = None
    error = None

    for k in range(n_steps + 1):
        t = k * sc.dt
        try:
            # ---- sensors and localization
            if sc.due(k, sc.imu.rate):
                psi = truth.pose.psi + rng_imu.normal(0.0, sc.imu.sigma_psi)
                om = truth.vel.omega + rng_imu.normal(0.0, sc.imu.sigma_omega)
                ekf.imu(t, ImuMeasurement(psi, om, sc.imu.sigma_psi, sc.imu.sigma_omega))
            if sc.due(k, sc.gnss.rate) and k > 0:
                gx = truth.pose.x + rng_gnss.normal(0.0, sc.gnss.sigma)
                gy = truth.pose.y + rng_gnss.normal(0.0, sc.gnss.sigma)
                ekf.gnss(t, GnssMeasurement(gx, gy, sc.gnss.sigma))
            ekf.advance(t)
            est = ekf.state
            est_pose = est.pose

            # ---- perception
            if sc.due(k, sc.lidar.rate):
                scan = simulate_lidar(sc.world, truth.pose, sc.lidar.geometry, sc.lidar.noise_sigma, rng_lidar, t)
                scan = filter_outliers(scan, sc.lidar.outlier_k, sc.lidar.outlier_thresh)
                clusters = segment_scan(scan, sc.lidar.base_thresh, sc.lidar.slope, sc.lidar.min_points)
                dets = []
                if sc.due(k, sc.camera.rate):
                    dets = simulate_camera_detections(
                        sc.world.buoys,
                        sc.camera.model,
                        truth.pose,
                        sc.camera.miss_rate,
                        sc.camera.bbox_jitter_px,
                        rng_cam,
                        sc.camera.max_range,
                    )
                fusion = fuse(clusters, dets, sc.camera.model, sc.camera.iou_gate, sc.camera.object_height)
                fused_count = len(fusion.objects)
                bb.set("objects", list(fusion.objects))
                pts = [c.points for c in clusters]
                obstacles = est_pose.to_world(np.vstack(pts)) if pts else np.empty((0, 2))
                obstacles_fresh = True

            # ---- behaviour
            if sc.due(k, sc.behavior_rate) and not finished:
                bb.set("ego", est)
                status = tree.tick(bb)
                bt_status = status.value
                if status is not NodeStatus.RUNNING:
                    finished = True
                    completion_time = t if status is NodeStatus.SUCCESS else None
                    simlog.events.append((t, f"tree {status.value}"))
                    bb.set("goal", Goal(est_pose, hold=True))
                if heartbeat is not None:
                    mode = 2 if status is not NodeStatus.FAILURE else 3
                    heartbeat.publish(StateSnapshot(est_pose.x, est_pose.y, mode))

            # ---- planning
            new_goal = bb.get("goal")
            replan = False
            if new_goal is not goal:
                goal = new_goal
                replan = goal is not None and not goal.hold
                if goal is None or goal.hold:
                    plan = None
            elif plan is not None and obstacles_fresh and len(obstacles):
                if check_collision(plan.curve, obstacles, pp.width, pp.margin):
                    replan = True
                    simlog.events.append((t, "path blocked; replanning"))
            elif plan is None and blocked and obstacles_fresh and t - last_attempt >= BLOCKED_RETRY_PERIOD - 1e-9:
                replan = True
            obstacles_fresh = False
            if replan:
                plan = None
                blocked = False
                last_attempt = t
                if math.hypot(goal.pose.x - est_pose.x, goal.pose.y - est_pose.y) > 1e-6:
                    curve = local_waypoint_search(est_pose, goal.pose, obstacles, pp.width, pp.margin, pp.offsets)
                    if curve is None:
                        blocked = True
                        simlog.events.append((t, "no collision-free path"))
                    else:
                        plan = plan_speed(curve, obstacles, pp, est.velocity.u)
                        end = Pose2D(float(curve.p1[0]), float(curve.p1[1]), goal.pose.psi)
                        bb.get("flags")[PLANNED_GOAL] = (goal, end)
                        simlog.paths.append((t, plan.points))

            # ---- control
            if sc.due(k, sc.controller.rate):
                if plan is not None:
                    v_cmd, om_cmd = track(plan.points, est_pose, sc.follower, pp.v_cruise, plan.profile)
                else:
                    v_cmd, om_cmd = 0.0, 0.0
                tau = ctrl(v_cmd, om_cmd, est.velocity, truth.vel.u)
        except Exception as e:  # module failure ends the run as failed, never crashes
            log.exception("simulation aborted at t=%.2f", t)
            error = f"{type(e).__name__}: {e}"
            simlog.events.append((t, f"error: {error}"))
            bt_status = NodeStatus.FAILURE.value
            break

        g = goal.pose if goal is not None else None
        simlog.rows.append(
            (
                t,
                truth.pose.x,
                truth.pose.y,
                truth.pose.psi,
                truth.vel.u,
                truth.vel.v,
                truth.vel.omega,
                est.mean[0],
                est.mean[1],
                est.mean[2],
                est.mean[3],
                est.mean[4],
                est.mean[5],
                tau.fx,
                tau.fy,
                tau.fyaw,
                g.x if g else math.nan,
                g.y if g else math.nan,
                g.psi if g else math.nan,
                bt_status,
                fused_count,
            )
        )
        if k < n_steps:
            truth = dyn.step(truth, tau, sc.dt, sc.vessel, sc.coriolis_mode)

    metrics = compute_metrics(simlog, sc, bt_status, completion_time, error)
    return RunResult(simlog, metrics, sc)
