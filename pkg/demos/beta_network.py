"""Train the network that maps (speed, lean) to the pendulum reference angle.

The targets come from the steady turn balance m_p g l sin(beta) =
M v^2 tan(phi) on a 9 x 10 grid; Levenberg-Marquardt fits a 10-unit tanh
network with a 70/15/15 split and early stopping on the validation set.
"""

import numpy as np

from spheremotion.controllers import steady_roll_pendulum_angle
from spheremotion.dynamics import RobotParams
from spheremotion.mlp import fit_beta_model


def main():
    p = RobotParams()
    fit = fit_beta_model(p)
    h = fit.history
    print(f"split {fit.dataset.counts()}")
    print(f"stopped after {len(h.train_mse) - 1} epochs ({h.stop_reason}); best validation epoch {h.best_epoch}")
    print(f"test MSE {fit.test_mse():.2e} rad^2")

    print("\n  v     phi     beta (balance)  beta (network)")
    for v, phi in ((0.3, 0.1), (0.75, -0.2), (1.0, 0.25), (0.55, 0.05)):
        exact = steady_roll_pendulum_angle(p, v, phi)
        print(f"{v:5.2f} {phi:6.2f} {exact:14.6f} {float(fit.params(v, phi)):15.6f}")
    grid = np.linspace(0, 1, 21)
    err = max(abs(float(fit.params(v, 0.13)) - steady_roll_pendulum_angle(p, v, 0.13)) for v in grid)
    print(f"\noff-grid worst error along phi = 0.13: {err:.1e} rad")


if __name__ == "__main__":
    main()
