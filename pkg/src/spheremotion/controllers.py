"""Closed-loop controllers: ESO-MPC for speed, phase-weighted MPC for roll, PID baseline.

Every controller is a small stateful object advanced once per control
period.  Controllers only see measurements (pendulum and shell angles and
rates, shell speed); plant friction and disturbances stay hidden.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import RobotParams, SingularMass, centripetal_friction
from .eso import apply_disturbance, augment, design_gains, eso_update, init_observer
from .linmodel import LONGITUDINAL, TRANSVERSE, linearize, select_states
from .qp import Infeasible, MaxIterations, MPCConfig, build_prediction, condense, solve_qp

__all__ = [
    "Phase",
    "PhaseThresholds",
    "PhaseWeights",
    "PhaseScheduler",
    "phase_transition",
    "default_phase_weights",
    "PIDGains",
    "PID",
    "pid_step",
    "CascadedPID",
    "speed_pid",
    "roll_pid",
    "VelocityMPCConfig",
    "ESOMPCVelocityController",
    "OrientationMPCConfig",
    "PWMPCOrientationController",
    "steady_roll_pendulum_angle",
    "steady_roll_torque",
    "NoSteadyState",
    "FAILSAFE_LIMIT",
]

FAILSAFE_LIMIT = 5


class NoSteadyState(ValueError):
    pass


class Phase(str, enum.Enum):
    FAST_RESPONSE = "FastResponse"
    REDUCE_OVERSHOOT = "ReduceOvershoot"
    STABILIZATION = "Stabilization"


# ---------------------------------------------------------------- PID baseline

@dataclass(frozen=True)
class PIDGains:
    kp: float
    ki: float = 0.0
    kd: float = 0.0
    integral_clamp: float = math.inf
    output_clamp: float = math.inf

    def __post_init__(self):
        if not (self.integral_clamp > 0 and self.output_clamp > 0):
            raise ValueError("clamps must be positive")


@dataclass
class PID:
    """Positional PID, derivative on measurement, clamped integral term and output."""

    gains: PIDGains
    integral: float = 0.0
    last_measurement: float | None = None

    def step(self, setpoint: float, measurement: float, dt: float) -> float:
        return pid_step(self, setpoint, measurement, dt)

    def reset(self):
        self.integral = 0.0
        self.last_measurement = None


def pid_step(pid: PID, setpoint: float, measurement: float, dt: float) -> float:
    if not dt > 0:
        raise ValueError("dt must be positive")
    g = pid.gains
    err = setpoint - measurement
    pid.integral += g.ki * err * dt
    pid.integral = min(max(pid.integral, -g.integral_clamp), g.integral_clamp)
    deriv = 0.0 if pid.last_measurement is None else (measurement - pid.last_measurement) / dt
    pid.last_measurement = measurement
    out = g.kp * err + pid.integral - g.kd * deriv
    return min(max(out, -g.output_clamp), g.output_clamp)


class CascadedPID:
    """Speed PID producing a pendulum-angle setpoint, tracked by an inner angle PID.

    Outer loop: ``v_target - v -> alpha_ref`` (output clamp bounds the swing).
    Inner loop: ``alpha_ref - alpha -> tau``.
    """

    def __init__(self, outer: PIDGains, inner: PIDGains, T_s: float = 0.02):
        self.outer = PID(outer)
        self.inner = PID(inner)
        self.T_s = T_s

    def reset(self):
        self.outer.reset()
        self.inner.reset()

    def step(self, setpoint: float, measurement: float, angle: float) -> float:
        angle_ref = self.outer.step(setpoint, measurement, self.T_s)
        return self.inner.step(angle_ref, angle, self.T_s)


# Baseline gains: Ziegler-Nichols on each inner angle loop, then a grid
# refinement of the outer loop on the benchmark steps (0.5 m/s from rest
# with a 10% heavier plant; 0.1745 rad roll at 1 m/s).

def speed_pid(T_s: float = 0.02) -> CascadedPID:
    """Speed -> pendulum pitch -> tau1; settles a 0.5 m/s step in ~0.85 s."""
    return CascadedPID(PIDGains(2.0, 0.5, 0.0, integral_clamp=0.4, output_clamp=0.4),
                       PIDGains(40.0, 0.0, 6.0, output_clamp=10.0), T_s)


def roll_pid(T_s: float = 0.02) -> CascadedPID:
    """Roll -> pendulum roll -> tau2."""
    return CascadedPID(PIDGains(1.0, 2.0, 0.5, integral_clamp=0.5, output_clamp=0.5),
                       PIDGains(40.0, 0.0, 5.0, output_clamp=10.0), T_s)


# -------------------------------------------------------------- ESO-MPC speed

@dataclass
class VelocityMPCConfig:
    T_s: float = 0.02
    N_p: int = 50
    N_c: int = 20
    q_alpha: float = 1.0
    q_alpha_rate: float = 0.1
    q_v: float = 200.0
    R: float = 0.005
    du_max: float | None = None
    observer_poles: tuple = (0.8, 0.8, 0.8, 0.75, 0.75)
    use_observer: bool = True

    def mpc(self, tau_max: float) -> MPCConfig:
        Q = np.diag([self.q_alpha, self.q_alpha_rate, self.q_v])
        return MPCConfig(self.N_p, self.N_c, Q, self.R, Q, -tau_max, tau_max, self.du_max)


# reduced longitudinal state [alpha, alpha_dot, x_dot]; x is a pure integrator
_LONG_KEEP = (0, 1, 3)
_LONG_CHANNELS = (1, 2)


class ESOMPCVelocityController:
    """Offset-free linear MPC on the longitudinal axis.

    Constant disturbances on the two acceleration rows are estimated from
    ``(alpha, alpha_dot, x_dot)`` and folded into the prediction model.  The
    steady target ``(alpha_s, u_s)`` is recomputed every cycle from the
    corrected model so the cost minimum coincides with ``x_dot = v_target``.
    """

    def __init__(self, params: RobotParams, config: VelocityMPCConfig | None = None):
        self.params = params
        self.config = config or VelocityMPCConfig()
        full = linearize(params, LONGITUDINAL, T_s=self.config.T_s)
        self.model = select_states(full, _LONG_KEEP)
        self.aug = augment(self.model, _LONG_CHANNELS, outputs=(0, 1, 2))
        self.L = design_gains(self.aug, self.config.observer_poles)
        self.mpc = self.config.mpc(params.tau_max)
        self.pred = build_prediction(self.model, self.mpc)
        self.reset()

    def reset(self):
        self.observer = None
        self.u_prev = 0.0
        self.U_prev = None
        self.failures = 0
        self.last_status = "init"

    @property
    def d_hat(self) -> np.ndarray:
        return np.zeros(len(_LONG_CHANNELS)) if self.observer is None else self.observer.d_hat

    def steady_target(self, model, v_target: float) -> tuple[float, float]:
        """Pendulum angle and torque holding ``x_dot = v_target`` in ``model``."""
        E = model.A_d - np.eye(3)
        lhs = np.column_stack([E[1:, 0], model.B_d[1:]])
        rhs = -E[1:, 2] * v_target - model.C_d[1:]
        alpha_s, u_s = np.linalg.solve(lhs, rhs)
        return float(alpha_s), float(u_s)

    def step(self, v_target: float, alpha: float, alpha_rate: float, v: float) -> float:
        y = np.array([alpha, alpha_rate, v])
        if self.observer is None:
            self.observer = init_observer(self.aug, self.L, y)
        d_hat = self.observer.d_hat if self.config.use_observer else np.zeros(len(_LONG_CHANNELS))
        model = apply_disturbance(self.model, d_hat, _LONG_CHANNELS)
        alpha_s, u_s = self.steady_target(model, v_target)
        u_s = min(max(u_s, self.mpc.u_min), self.mpc.u_max)
        X_ref = np.tile([alpha_s, 0.0, v_target], self.mpc.N_p)
        # the offset moved, so only C_qp needs rebuilding: C_qp is linear in C_d
        pred = _with_offset(self.pred, self.model, model)
        tau = self._solve(pred, y, X_ref, u_s)
        self.observer = eso_update(self.observer, self.aug, tau, y)
        return tau

    def _solve(self, pred, x0, X_ref, U_ref) -> float:
        qp = condense(pred, self.mpc, x0, X_ref, U_ref, self.u_prev if self.mpc.du_max else None)
        warm = None if self.U_prev is None else np.append(self.U_prev[1:], self.U_prev[-1])
        try:
            sol = solve_qp(qp, warm)
        except (Infeasible, MaxIterations) as exc:
            self.failures += 1
            self.last_status = type(exc).__name__
            if self.failures >= FAILSAFE_LIMIT:
                self.u_prev = 0.0
            return self.u_prev
        self.failures = 0
        self.last_status = "optimal"
        self.U_prev = sol.U
        tau = float(np.clip(sol.U[0], self.mpc.u_min, self.mpc.u_max))
        self.u_prev = tau
        return tau


def _with_offset(pred, base, shifted):
    """Prediction matrices of ``shifted``, which differs from ``base`` only in ``C_d``."""
    from .qp import PredictionMatrices

    n = base.n
    Np = pred.C_qp.size // n
    dC = shifted.C_d - base.C_d
    if not np.any(dC):
        return pred
    extra = np.zeros(Np * n)
    acc = np.zeros(n)
    for k in range(Np):
        acc = base.A_d @ acc + dC
        extra[k * n:(k + 1) * n] = acc
    return PredictionMatrices(pred.A_qp, pred.B_qp, pred.C_qp + extra)


# ------------------------------------------------------------- PWMPC roll

@dataclass(frozen=True)
class PhaseThresholds:
    fraction_remaining: float = 0.7
    band: float = 0.02
    rate_band: float = 0.05
    hold_time: float = 0.3


@dataclass(frozen=True)
class PhaseWeights:
    Q: np.ndarray
    R: float
    P: np.ndarray | None = None

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=float)
        if Q.ndim == 1:
            Q = np.diag(Q)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "P", Q.copy() if self.P is None else np.asarray(self.P, dtype=float))
        if not self.R > 0:
            raise ValueError("R must be strictly positive")


def default_phase_weights() -> dict:
    # state order [beta, beta_dot, phi, phi_dot]
    return {
        # both angles weighted hard: quick to move, but rings if kept
        Phase.FAST_RESPONSE: PhaseWeights(np.diag([400.0, 0.0, 400.0, 0.0]), 0.01),
        # release the pendulum angle, add roll-rate weight and input damping
        Phase.REDUCE_OVERSHOOT: PhaseWeights(np.diag([0.0, 0.0, 400.0, 0.5]), 0.1),
        Phase.STABILIZATION: PhaseWeights(np.diag([1.0, 0.1, 400.0, 1.0]), 0.01),
    }


@dataclass
class PhaseScheduler:
    """Fast response -> reduce overshoot -> stabilization, restarted by each new target."""

    thresholds: PhaseThresholds = field(default_factory=PhaseThresholds)
    phase: Phase = Phase.FAST_RESPONSE
    target: float | None = None
    initial_error: float = 0.0
    held: float = 0.0

    def update(self, phi: float, phi_rate: float, phi_d: float, dt: float) -> Phase:
        th = self.thresholds
        if self.target is None or abs(phi_d - self.target) > th.band:
            self.target = phi_d
            self.initial_error = phi_d - phi
            self.phase = Phase.FAST_RESPONSE
            self.held = 0.0
        err = abs(phi - phi_d)
        if self.phase is Phase.FAST_RESPONSE and err <= th.fraction_remaining * abs(self.initial_error):
            self.phase = Phase.REDUCE_OVERSHOOT
        if self.phase is Phase.REDUCE_OVERSHOOT:
            if err < th.band and abs(phi_rate) < th.rate_band:
                self.held += dt
                if self.held >= th.hold_time - 1e-12:
                    self.phase = Phase.STABILIZATION
            else:
                self.held = 0.0
        return self.phase


def phase_transition(scheduler: PhaseScheduler, phi, phi_rate, phi_d, dt) -> Phase:
    return scheduler.update(phi, phi_rate, phi_d, dt)


def steady_roll_pendulum_angle(params: RobotParams, v: float, phi: float, alpha: float = 0.0,
                               xtol: float = 1e-14) -> float:
    """Pendulum roll angle balancing the centripetal friction of a steady turn.

    Solves ``m_p g l cos(alpha) sin(beta) = F_fy(v, phi) r`` by bisection on
    ``[-pi/2, pi/2]``.
    """
    from scipy.optimize import bisect

    rhs = centripetal_friction(params, v, phi) * params.r
    k = params.m_p * params.g * params.l * math.cos(alpha)

    def g(beta):
        return k * math.sin(beta) - rhs

    lo, hi = -math.pi / 2, math.pi / 2
    if g(lo) * g(hi) > 0:
        raise NoSteadyState(f"no pendulum angle balances v={v}, phi={phi}")
    if rhs == 0.0:
        return 0.0
    return float(bisect(g, lo, hi, xtol=xtol, maxiter=500))


def steady_roll_torque(params: RobotParams, beta_d: float, phi_d: float, v: float, alpha: float = 0.0) -> float:
    """Inverse model: least-squares torque zeroing both transverse accelerations at rest."""
    from .linmodel import substate_derivative

    s = np.array([beta_d, 0.0, phi_d, 0.0])
    acc0 = substate_derivative(params, TRANSVERSE, s, 0.0, alpha, speed=v)[[1, 3]]
    acc1 = substate_derivative(params, TRANSVERSE, s, 1.0, alpha, speed=v)[[1, 3]]
    b = acc1 - acc0
    return float(-(b @ acc0) / (b @ b))


@dataclass
class OrientationMPCConfig:
    T_s: float = 0.02
    N_p: int = 50
    N_c: int = 10
    du_max: float | None = 0.5
    thresholds: PhaseThresholds = field(default_factory=PhaseThresholds)
    weights: dict = field(default_factory=default_phase_weights)
    phased: bool = True


class PWMPCOrientationController:
    """Roll controller with a learned pendulum reference and phase-scheduled weights.

    ``beta_reference(v, phi_d)`` supplies the desired pendulum angle (an
    ``MLP`` or any callable).  With ``phased=False`` the fast-response
    weights are used throughout, i.e. a plain fixed-weight MPC.
    """

    def __init__(self, params: RobotParams, beta_reference, config: OrientationMPCConfig | None = None):
        self.params = params
        self.config = config or OrientationMPCConfig()
        self.beta_reference = beta_reference
        self.mpcs = {
            ph: MPCConfig(self.config.N_p, self.config.N_c, w.Q, w.R, w.P,
                          -params.tau_max, params.tau_max, self.config.du_max)
            for ph, w in self.config.weights.items()
        }
        self.reset()

    def reset(self):
        self.scheduler = PhaseScheduler(self.config.thresholds)
        self.u_prev = 0.0
        self.U_prev = None
        self.failures = 0
        self.last_status = "init"
        self.phase = Phase.FAST_RESPONSE
        self.reference = (0.0, 0.0)

    def step(self, phi_d: float, v: float, q, qdot) -> float:
        if not abs(phi_d) < math.pi / 2:
            raise ValueError("|phi_d| must be below pi/2")
        beta, phi = q[2], q[3]
        dt = self.config.T_s
        phase = self.scheduler.update(phi, qdot[3], phi_d, dt)
        self.phase = phase if self.config.phased else Phase.FAST_RESPONSE
        mpc = self.mpcs[self.phase]
        try:
            model = linearize(self.params, TRANSVERSE, q, qdot, speed=v, T_s=dt)
        except SingularMass:
            return self._fail("SingularMass")
        beta_d = float(self.beta_reference(v, phi_d))
        u_rd = steady_roll_torque(self.params, beta_d, phi_d, v, q[0])
        u_rd = min(max(u_rd, mpc.u_min), mpc.u_max)
        self.reference = (beta_d, u_rd)
        pred = build_prediction(model, mpc)
        x0 = np.array([beta, qdot[2], phi, qdot[3]])
        X_ref = np.tile([beta_d, 0.0, phi_d, 0.0], mpc.N_p)
        qp = condense(pred, mpc, x0, X_ref, u_rd, self.u_prev if mpc.du_max else None)
        warm = None if self.U_prev is None else np.append(self.U_prev[1:], self.U_prev[-1])
        try:
            sol = solve_qp(qp, warm)
        except (Infeasible, MaxIterations) as exc:
            return self._fail(type(exc).__name__)
        self.failures = 0
        self.last_status = "optimal"
        self.U_prev = sol.U
        self.u_prev = float(np.clip(sol.U[0], mpc.u_min, mpc.u_max))
        return self.u_prev

    def _fail(self, status):
        self.failures += 1
        self.last_status = status
        if self.failures >= FAILSAFE_LIMIT:
            self.u_prev = 0.0
        return self.u_prev
