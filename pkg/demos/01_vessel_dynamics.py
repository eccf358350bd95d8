"""Drive the twin-hull model straight, then through a turn, then let it coast."""

import numpy as np

from usvnav.dynamics import (
    BodyVelocity,
    Pose2D,
    PropellerParams,
    VesselParams,
    VesselState,
    Wrench,
    allocate_thrust,
    inverse_allocation,
    kinetic_energy,
    propeller_thrust,
    step,
    thrust_to_rev,
)

vessel = VesselParams(m=250, mx=25, my=125, Iz=400, Jz=80, w=2.0, lin_drag=(50, 400, 300))
prop = PropellerParams(rho=1025, Dp=0.25, k0=0.45, k1=-0.35, k2=-0.05, n_max=30)
dt = 0.02

# 60 N per hull gives fx = 60 N; drag balances it at u = 60 / 50
state = VesselState(Pose2D(0, 0, 0), BodyVelocity())
for k in range(2000):
    state = step(state, allocate_thrust(60.0, 60.0, vessel.w), dt, vessel)
print(f"steady surge after 40 s: u={state.vel.u:.4f} m/s (drag balance 1.2)")

# differential thrust turns the boat
for k in range(1, 1001):
    state = step(state, allocate_thrust(80.0, 40.0, vessel.w), dt, vessel)
    if k % 250 == 0:
        p, v = state.pose, state.vel
        print(f"  turn +{k * dt:4.1f}s  x={p.x:6.2f} y={p.y:6.2f} psi={p.psi:+.2f}  u={v.u:.2f} r={v.omega:+.3f}")

# with no thrust the kinetic energy only decays
e = [kinetic_energy(vessel, state.vel)]
for _ in range(500):
    state = step(state, Wrench(), dt, vessel)
    e.append(kinetic_energy(vessel, state.vel))
print(f"coasting: {e[0]:.1f} J -> {e[-1]:.3f} J, monotone={bool(np.all(np.diff(e) <= 1e-9))}")

# wrench request -> per-hull forces -> shaft speeds
fr, fl = inverse_allocation(Wrench(100.0, 0.0, 30.0), vessel.w)
for name, f in (("right", fr), ("left", fl)):
    n, clamped = thrust_to_rev(f, 1.0, prop)
    print(f"{name}: {f:.1f} N -> n={n:.3f} rev/s, thrust back {propeller_thrust(n, 1.0, prop):.4f} N, clamped={clamped}")
