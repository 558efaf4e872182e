"""Speed control on a plant the controller does not quite know.

The plant is 10% heavier than the model and rolls against Coulomb plus
viscous friction.  ESO-MPC, the same MPC with its disturbance estimate
frozen at zero, and the cascaded PID baseline all chase a 0.5 m/s step.
"""

import numpy as np

from spheremotion.controllers import ESOMPCVelocityController, VelocityMPCConfig
from spheremotion.dynamics import GeneralizedState, simulate_hold
from spheremotion.harness import CONTROL_DT, PLANT_DT, run_scenario, velocity_step_scenario


def frozen_observer_speed(scenario):
    plant = scenario.plant()
    ctrl = ESOMPCVelocityController(scenario.params, VelocityMPCConfig(use_observer=False))
    s = GeneralizedState()
    for k in range(int(round(scenario.duration / CONTROL_DT))):
        tau = ctrl.step(scenario.v_d(k * CONTROL_DT), s.q[0], s.qdot[0], s.qdot[1])
        s = simulate_hold(plant, scenario.friction, s, (tau, 0.0), PLANT_DT, int(CONTROL_DT / PLANT_DT))
    return s.qdot[1]


def main():
    mpc = run_scenario(velocity_step_scenario())
    pid = run_scenario(velocity_step_scenario(controller="pid"))
    for name, res in (("ESO-MPC", mpc), ("cascaded PID", pid)):
        m = res.metrics["velocity"]
        print(f"{name:13s} t_r {m.t_r:.2f} s  t_s {m.t_s:.2f} s  overshoot {m.sigma:.1f}%  "
              f"final error {abs(res.telemetry.v[-1] - 0.5):.1e} m/s")
    print(f"settling-time ratio MPC/PID: {mpc.metrics['velocity'].t_s / pid.metrics['velocity'].t_s:.2f}")

    print(f"MPC without the estimate: final error {abs(frozen_observer_speed(velocity_step_scenario()) - 0.5):.3f} m/s")

    tel = mpc.telemetry
    print("\n  t [s]   v [m/s]  alpha [rad]  tau1 [N m]")
    for t in (0.0, 0.2, 0.4, 0.6, 1.0, 2.0, 5.0, 10.0):
        k = int(np.argmin(np.abs(tel.t - t)))
        print(f"{tel.t[k]:7.2f} {tel.v[k]:9.4f} {tel.alpha[k]:12.4f} {tel.tau1[k]:11.3f}")


if __name__ == "__main__":
    main()
