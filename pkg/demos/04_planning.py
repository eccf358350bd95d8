"""Hermite paths, the Newton collision check, goal shifting and the speed profile."""

import math

import numpy as np

from usvnav.dynamics import Pose2D
from usvnav.planner import (
    PlannerParams,
    check_collision,
    hermite_eval,
    local_waypoint_search,
    nearest_point_newton,
    plan_path,
    plan_speed,
)

start, goal = Pose2D(0, 0, 0), Pose2D(30, 10, math.pi / 4)
curve = plan_path(start, goal)
print("endpoints:", hermite_eval(curve, 0.0), hermite_eval(curve, 1.0))

q = (15.0, 2.0)
npt = nearest_point_newton(curve, q)
print(f"nearest to {q}: t={npt.t:.4f}, distance {npt.distance:.3f} m, lateral {npt.lateral:+.3f} m")

# a buoy sitting on the straight-ish middle of the path
obstacles = np.array([hermite_eval(curve, 0.5) + [0.3, -0.2], [40.0, -5.0]])
hits = check_collision(curve, obstacles, width=1.2, margin=0.5)
print("hits:", [(h.index, round(h.t, 3), round(h.distance, 2)) for h in hits])

# an obstacle right on the goal: the search slides the goal to a clear cell
obstacles = np.array([[30.0, 10.0], [29.0, 9.0]])
moved = local_waypoint_search(start, goal, obstacles, width=1.2, margin=0.5)
print("goal moved to", moved.p1, "hits after move:", check_collision(moved, obstacles, 1.2, 0.5))

# speed profile: start from rest, respect turn rate and stop at the end.
# Level spacing matters: a step from v to v + dv needs dv (2v + dv) <= 2 a ds,
# so 0.1 m/s levels with a = 0.3, ds = 0.5 top out near 1.5 m/s.
params = PlannerParams(v_cruise=2.0, a_max=0.3, a_dec=0.3, omega_max=0.4)
plan = plan_speed(curve, np.empty((0, 2)), params, v_start=0.0)
v = plan.profile.speeds
print(f"{len(v)} stations over {plan.stations[-1]:.1f} m, peak {v.max():.2f} m/s, final {v[-1]:.2f} m/s")
print("profile every 5 m:", np.round(np.interp(np.arange(0, plan.stations[-1], 5.0), plan.stations, v), 2))

fine = plan_speed(curve, np.empty((0, 2)), PlannerParams(v_cruise=2.0, a_max=0.3, a_dec=0.3, omega_max=0.4, n_levels=81), 0.0)
print(f"with 81 levels the peak is {fine.profile.speeds.max():.2f} m/s")
