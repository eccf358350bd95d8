"""Pure pursuit pulling the boat onto a straight line from 2 m off."""

import numpy as np

from usvnav.dynamics import Pose2D
from usvnav.follower import lookahead_target, pursuit_command
from usvnav.harness.trials import line_tracking_trial

path = np.column_stack([np.arange(0, 50.5, 0.5), np.zeros(101)])

# geometry of one tick
pose = Pose2D(0.0, 2.0, 0.0)
tgt = lookahead_target(path, pose, L=4.0, extension_len=10.0)
v, omega = pursuit_command(pose, tgt.point, v_des=0.7, L=4.0)
print(f"target {np.round(tgt.point, 3)}, command v={v} m/s omega={omega:+.3f} rad/s")

# closed loop on the full dynamics
res = line_tracking_trial(offset=2.0, length=50.0, duration=60.0)
ct = np.abs(res.cross_track)
for t in (0, 5, 10, 15, 20, 30, 45, 60):
    k = int(round(t / 0.02))
    print(f"t={t:2d}s  cross-track {ct[k]:.4f} m")
above = np.flatnonzero(ct >= 0.1)
print(f"below 0.1 m for good from t={res.t[above[-1] + 1]:.2f} s")
