"""Acceptance criteria, one test each.

Every test prints a single ``PASS``/``FAIL`` line with the measured value,
the tolerance and the wall time against its budget.  Run with ``-s`` to see
them, or read them from ``test_output.txt``.
"""

import datetime as dt
import itertools
import json
import math
import socket
import time

import numpy as np
from oracles import brute_force_profile_np, union_find_segments

from usvnav.dynamics import (
    BodyVelocity,
    Pose2D,
    PropellerParams,
    VesselParams,
    Wrench,
    allocate_thrust,
    coriolis_matrix,
    dynamics_derivative,
    inverse_allocation,
    mass_matrix,
    propeller_thrust,
    thrust_to_rev,
)
from usvnav.harness.cli import main as cli_main
from usvnav.harness.outputs import emit_outputs
from usvnav.harness.scenario import load_scenario, shipped_scenarios
from usvnav.harness.sim import run
from usvnav.harness.trials import figure_eight_trial, line_tracking_trial
from usvnav.heartbeat import (
    HeartbeatError,
    HeartbeatSentence,
    MockTDServer,
    StateSnapshot,
    client_run,
    decode,
    encode,
)
from usvnav.perception import Circle, ScanGeometry, World, hungarian, segment_scan, simulate_lidar
from usvnav.planner import (
    HermiteCurve,
    VelocityConstraint,
    check_collision,
    nearest_point_newton,
    velocity_graph_search,
)


def report(num, title, ok, detail, elapsed, budget):
    in_time = elapsed < budget
    status = "PASS" if ok and in_time else "FAIL"
    print(f"\n{status} criterion {num:2d}: {title} | {detail} | {elapsed:.2f} s (budget {budget:g} s)")
    assert ok, detail
    assert in_time, f"took {elapsed:.2f} s, budget {budget} s"


def rand_params(rng):
    return VesselParams(
        m=rng.uniform(50, 500),
        mx=rng.uniform(0, 100),
        my=rng.uniform(0, 200),
        Iz=rng.uniform(20, 800),
        Jz=rng.uniform(0, 100),
        w=rng.uniform(0.5, 3),
        lin_drag=tuple(rng.uniform(0, 400, 3)),
    )


def rand_curve(rng):
    return HermiteCurve(rng.normal(0, 5, 2), rng.normal(0, 5, 2), rng.normal(0, 8, 2), rng.normal(0, 8, 2))


def basis(ts):
    return np.column_stack([ts**3, ts**2, ts, np.ones_like(ts)])


def test_c01_dynamics_residual():
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    worst, worst_power = 0.0, 0.0
    for mode in ("paper_literal", "skew_corrected"):
        for _ in range(1000):
            p = rand_params(rng)
            nu = BodyVelocity(*rng.normal(0, 3, 3))
            tau = Wrench(*rng.normal(0, 200, 3))
            rate = dynamics_derivative(p, nu, tau, mode).as_array()
            C = coriolis_matrix(p, nu, mode)
            v = nu.as_array()
            res = mass_matrix(p) @ rate + C @ v + np.asarray(p.lin_drag) * v - tau.as_array()
            worst = max(worst, float(np.max(np.abs(res))))
            if mode == "skew_corrected":
                worst_power = max(worst_power, abs(float(v @ C @ v)))
    ok = worst < 1e-9 and worst_power < 1e-9
    report(1, "dynamics residual, both Coriolis modes", ok,
           f"max residual {worst:.2e}, max |nu.C.nu| {worst_power:.2e} (tol 1e-9)", time.perf_counter() - t0, 1.0)


def test_c02_allocation_and_propeller_round_trip():
    t0 = time.perf_counter()
    worst_alloc = 0.0
    for fx, fyaw, w in itertools.product(np.linspace(-300, 300, 13), np.linspace(-200, 200, 11), (0.5, 1.0, 2.0, 3.5)):
        fr, fl = inverse_allocation(Wrench(fx, 0.0, fyaw), w)
        back = allocate_thrust(fr, fl, w)
        worst_alloc = max(worst_alloc, abs(back.fx - fx), abs(back.fyaw - fyaw), abs(back.fy))
    prop = PropellerParams(rho=1025, Dp=0.25, k0=0.45, k1=-0.35, k2=-0.05, n_max=30)
    worst_prop, clamped_any = 0.0, False
    for up in np.linspace(0.0, 3.0, 13):
        t_max = propeller_thrust(prop.n_max, up, prop)
        for T in np.linspace(0.0, t_max, 41)[1:-1]:
            n, clamped = thrust_to_rev(T, up, prop)
            clamped_any |= clamped
            worst_prop = max(worst_prop, abs(propeller_thrust(n, up, prop) - T) / max(1.0, T))
    ok = worst_alloc < 1e-12 and worst_prop < 1e-6 and not clamped_any
    report(2, "allocation and propeller inverse round trips", ok,
           f"allocation err {worst_alloc:.1e} (tol 1e-12), thrust rel err {worst_prop:.1e} (tol 1e-6)",
           time.perf_counter() - t0, 1.0)


def test_c03_figure_eight_localization():
    t0 = time.perf_counter()
    res = figure_eight_trial(duration=120.0, seed=0)
    rmse = res.rmse_position
    report(3, "figure-eight EKF position RMSE over 120 s", rmse < 0.5,
           f"RMSE {rmse:.3f} m (bar 0.5 m)", time.perf_counter() - t0, 10.0)


def test_c04_newton_nearest_point():
    t0 = time.perf_counter()
    rng = np.random.default_rng(104)
    ts = np.linspace(0.0, 1.0, 100_001)
    BT = np.ascontiguousarray(basis(ts).T)  # (4, n): row-major sampling is cache friendly
    worst, misses = 0.0, 0
    for _ in range(10_000):
        c = rand_curve(rng)
        q = rng.normal(0, 8, 2)
        coef = c.coefficients
        P = coef.T @ BT
        P -= q[:, None]
        P *= P
        k = int(np.argmin(P[0] + P[1]))
        # finer grid over the two cells around the dense minimum
        tf = np.linspace(ts[max(k - 1, 0)], ts[min(k + 1, len(ts) - 1)], 2001)
        pf = basis(tf) @ coef
        d_ref = float(np.min(np.hypot(pf[:, 0] - q[0], pf[:, 1] - q[1])))
        d = nearest_point_newton(c, q).distance
        worst = max(worst, abs(d - d_ref))
        misses += abs(d - d_ref) >= 1e-6
    report(4, "Newton nearest point vs dense oracle, 1e4 pairs", misses == 0,
           f"max |d - d_oracle| {worst:.2e} (tol 1e-6), {misses} mismatches", time.perf_counter() - t0, 30.0)


def test_c05_collision_hit_sets():
    t0 = time.perf_counter()
    rng = np.random.default_rng(105)
    ts = np.linspace(0.0, 1.0, 100_001)
    BT = np.ascontiguousarray(basis(ts).T)
    mismatches = 0
    for _ in range(1000):
        c = rand_curve(rng)
        obs = rng.normal(0, 6, (8, 2))
        width, margin = rng.uniform(0.2, 2.0), rng.uniform(0.0, 1.0)
        px, py = c.coefficients.T @ BT
        expected = set()
        for i, q in enumerate(obs):
            d2 = (px - q[0]) ** 2 + (py - q[1]) ** 2
            k = int(np.argmin(d2))
            if 0 < k < len(ts) - 1 and math.sqrt(d2[k]) < width + margin:
                expected.add(i)
        got = {h.index for h in check_collision(c, obs, width, margin)}
        mismatches += got != expected
    report(5, "collision hit sets vs dense oracle, 1e3 scenes", mismatches == 0,
           f"{mismatches} scenes differ", time.perf_counter() - t0, 10.0)


def test_c06_velocity_graph_search():
    t0 = time.perf_counter()
    rng = np.random.default_rng(106)
    mismatches, violations = 0, 0
    for _ in range(500):
        n = int(rng.integers(2, 7))
        ds = rng.uniform(0.3, 2.0, n - 1)
        s = np.concatenate([[0.0], np.cumsum(ds)])
        levels = np.concatenate([[0.0], np.sort(rng.uniform(0.2, 3.0, 4))])
        lim = rng.uniform(0.0, 3.5, n)
        v0 = float(rng.choice(levels[levels <= lim[0]]))
        a = rng.uniform(0.2, 2.0)
        prof = velocity_graph_search([VelocityConstraint(s, lim)], s, a, levels, v0)
        ref = brute_force_profile_np(lim, ds, a, levels, v0)
        if ref is None:
            mismatches += prof.feasible
            continue
        mismatches += not prof.feasible or not np.allclose(prof.speeds, ref[1], rtol=0, atol=1e-12)
        v = prof.speeds
        violations += bool(np.any(v > lim + 1e-9)) or bool(np.any(np.abs(np.diff(v**2)) > 2 * a * ds + 1e-9))
    report(6, "velocity graph search vs brute force, 500 instances", mismatches == 0 and violations == 0,
           f"{mismatches} mismatches, {violations} constraint violations", time.perf_counter() - t0, 10.0)


def test_c07_hungarian():
    t0 = time.perf_counter()
    rng = np.random.default_rng(107)
    perms = {n: np.array(list(itertools.permutations(range(n)))) for n in range(1, 7)}
    worst = 0.0
    for _ in range(500):
        n = int(rng.integers(1, 7))
        C = rng.uniform(0, 10, (n, n))
        if rng.random() < 0.3:
            C = np.round(C)  # plenty of ties
        pairs = hungarian(C)
        got = sum(C[i, j] for i, j in pairs)
        assert sorted(i for i, _ in pairs) == list(range(n)) and sorted(j for _, j in pairs) == list(range(n))
        best = C[np.arange(n), perms[n]].sum(axis=1).min()
        worst = max(worst, abs(got - best))
    report(7, "Hungarian vs permutation brute force, up to 6x6", worst < 1e-9,
           f"max cost gap {worst:.1e}", time.perf_counter() - t0, 5.0)


def test_c08_segmentation():
    t0 = time.perf_counter()
    rng = np.random.default_rng(108)
    geo = ScanGeometry(-math.pi, 2 * math.pi / 360, 360, 30.0)
    origin = Pose2D(0, 0, 0)
    mismatches, scenes = 0, 0
    while scenes < 200:
        k = int(rng.integers(1, 8))
        shapes = tuple(Circle(*rng.uniform(-15, 15, 2), rng.uniform(0.2, 2.0)) for _ in range(k))
        if any(math.hypot(c.x, c.y) <= c.r + 0.1 for c in shapes):
            continue
        scenes += 1
        scan = simulate_lidar(World(obstacles=shapes), origin, geo, 0.03, rng)
        base, slope, mp = rng.uniform(0.1, 0.6), rng.uniform(0.0, 0.1), int(rng.integers(1, 4))
        got = sorted(sorted(c.indices) for c in segment_scan(scan, base, slope, mp))
        ref = union_find_segments(scan.ranges, scan.angles, base, slope, mp, scan.wraps)
        mismatches += got != ref
    report(8, "scan segmentation vs union-find, 200 scenes", mismatches == 0,
           f"{mismatches} scenes differ", time.perf_counter() - t0, 5.0)


def test_c09_pure_pursuit_settles():
    t0 = time.perf_counter()
    res = line_tracking_trial(offset=2.0, length=50.0, duration=60.0)
    ct = np.abs(res.cross_track)
    above = np.flatnonzero(ct >= 0.1)
    settle = res.t[above[-1] + 1] if len(above) and above[-1] + 1 < len(ct) else (0.0 if not len(above) else math.inf)
    no_divergence = ct.max() <= 2.0 + 1e-9 and ct[-1] < 0.1
    report(9, "pure pursuit from 2 m offset on a 50 m line", settle <= 60.0 and no_divergence,
           f"below 0.1 m for good from t={settle:.2f} s, final {ct[-1]:.1e} m, max {ct.max():.2f} m",
           time.perf_counter() - t0, 5.0)


def test_c10_two_gates(tmp_path, capsys):
    t0 = time.perf_counter()
    path = next(p for p in shipped_scenarios() if p.stem == "two_gates")
    code = cli_main(["run", str(path), "--out", str(tmp_path)])
    capsys.readouterr()
    m = json.loads((tmp_path / "metrics.json").read_text())
    order = [g["gate"] for g in m["gate_crossings"]]
    report(10, "two-gate behaviour tree end to end", code == 0 and order == [0, 1],
           f"exit {code}, gate order {order}, completed at {m['completion_time']} s",
           time.perf_counter() - t0, 30.0)


def test_c11_heartbeat():
    t0 = time.perf_counter()
    rng = np.random.default_rng(111)
    round_trip_bad = 0
    for _ in range(1000):
        d = dt.datetime(2000, 1, 1) + dt.timedelta(seconds=int(rng.integers(0, 99 * 365 * 86400)))
        s = HeartbeatSentence(
            d.strftime("%d%m%y"), d.strftime("%H%M%S"),
            rng.uniform(0, 90), "NS"[rng.integers(2)], rng.uniform(0, 180), "EW"[rng.integers(2)],
            "".join(rng.choice(list("ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789"), int(rng.integers(1, 9)))),
            int(rng.integers(1, 4)),
        )
        round_trip_bad += decode(encode(s)) != s

    line = encode(HeartbeatSentence("170926", "235959", 21.309912, "N", 157.888123, "W", "OUXT", 2))
    undetected = 0
    for i in range(1, line.index("*")):
        for b in range(32, 127):
            if chr(b) != line[i]:
                try:
                    decode(line[:i] + chr(b) + line[i + 1:])
                    undetected += 1
                except HeartbeatError:
                    pass

    with MockTDServer() as srv:
        with socket.create_connection(("127.0.0.1", srv.port)) as c:
            c.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            for b in (line * 2).encode():
                c.sendall(bytes([b]))
            srv.wait_for(2)
        frag_ok = [r.sentence for r in srv.records] == [decode(line)] * 2

    with MockTDServer() as srv:
        client_run(("127.0.0.1", srv.port), lambda: StateSnapshot(10.0, 5.0), rate_hz=1.0, duration=10.0)
        time.sleep(0.2)
        count = len(srv.valid())
    ok = round_trip_bad == 0 and undetected == 0 and frag_ok and 9 <= count <= 11
    report(11, "heartbeat codec, corruption, fragmentation, 10 s at 1 Hz", ok,
           f"{round_trip_bad} round-trip failures, {undetected} undetected corruptions, "
           f"fragmented stream {'ok' if frag_ok else 'broken'}, {count} sentences in 10 s",
           time.perf_counter() - t0, 15.0)


def test_c12_determinism(tmp_path):
    t0 = time.perf_counter()
    differing = []
    names = []
    for path in shipped_scenarios():
        sc = load_scenario(path)
        names.append(path.stem)
        a = emit_outputs(run(sc), tmp_path / f"{path.stem}_a")["log"].read_bytes()
        b = emit_outputs(run(sc), tmp_path / f"{path.stem}_b")["log"].read_bytes()
        if a != b:
            differing.append(path.stem)
    report(12, "byte-identical log.csv on repeated runs", not differing and len(names) >= 1,
           f"scenarios {names}, differing {differing}", time.perf_counter() - t0, 60.0)
