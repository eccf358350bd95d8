"""EKF on GNSS (1 Hz) + IMU heading (50 Hz), first standalone, then closed loop on a figure-eight."""

import numpy as np

from usvnav.dynamics import BodyVelocity, Pose2D
from usvnav.harness.trials import figure_eight_trial
from usvnav.localization import EkfState, GnssMeasurement, ImuMeasurement, PlanarEkf

rng = np.random.default_rng(1)

# boat moving east at 1 m/s; the filter starts believing it is parked
ekf = PlanarEkf(EkfState.initial(Pose2D(0, 0, 0), BodyVelocity(0, 0, 0)))
for k in range(1, 1501):
    t = k * 0.02
    ekf.imu(t, ImuMeasurement(rng.normal(0, 0.02), rng.normal(0, 0.01), 0.02, 0.01))
    if k % 50 == 0:
        ekf.gnss(t, GnssMeasurement(t + rng.normal(0, 0.3), rng.normal(0, 0.3), 0.3))
    if k % 250 == 0:
        m = ekf.state.mean
        sd = np.sqrt(np.diag(ekf.state.cov))
        print(f"t={t:4.0f}s  x={m[0]:6.2f} (true {t:5.1f})  u={m[3]:.2f} +/- {sd[3]:.2f}")

# a stale fix is dropped, not applied
ekf.gnss(5.0, GnssMeasurement(0.0, 0.0, 0.3))
print("stale measurements dropped:", ekf.dropped)

# closed loop: pursuit steers on the estimate, not on truth
res = figure_eight_trial(duration=120.0, seed=0)
err = np.hypot(*(res.truth[:, :2] - res.estimate[:, :2]).T)
print(f"figure-eight RMSE {res.rmse_position:.3f} m, worst {err.max():.2f} m, heading err "
      f"{np.degrees(np.max(np.abs(np.angle(np.exp(1j * (res.truth[:, 2] - res.estimate[:, 2])))))):.1f} deg")
