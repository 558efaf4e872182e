"""Follow a 4 m circle at 0.5 m/s.

Guidance turns path errors into speed and lean targets; ESO-MPC and the
phase-weighted roll controller track them.  Prints the path error once
per eighth of a revolution.
"""

import math
import time

import numpy as np

from spheremotion.harness import circle_scenario, run_scenario


def main():
    sc = circle_scenario()
    t0 = time.perf_counter()
    res = run_scenario(sc)
    print(f"simulated {sc.duration:.0f} s in {time.perf_counter() - t0:.1f} s")
    period = 2 * math.pi / sc.trajectory.omega
    t = res.telemetry.t
    for frac in np.arange(0.125, 1.01, 0.125):
        k = min(int(np.searchsorted(t, frac * period)), len(t) - 1)
        x, y, _ = res.pose[k]
        print(f"{frac:5.3f} rev  t {t[k]:5.1f} s  position ({x:5.2f}, {y:5.2f})  path error {res.path_error[k]:.4f} m")
    after = res.path_error[t >= period / 4]
    print(f"worst error after the first quarter turn: {after.max():.4f} m")


if __name__ == "__main__":
    main()
