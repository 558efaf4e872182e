"""Whole-body dynamics of a pendulum-driven spherical robot.

Generalized coordinates are ``q = [alpha, x, beta, phi]``: pendulum pitch
swing, shell travel along x, pendulum roll swing and shell roll.  The model
is ``M(q) qdd + N(q, qd) = E tau`` with a block-diagonal mass matrix, so the
longitudinal pair ``(alpha, x)`` and the transverse pair ``(beta, phi)`` are
each solved as an independent 2x2 system.

Friction arguments follow the sign convention of ``N``: a positive ``F_fx``
or ``F_fy`` opposes positive motion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "SingularMass",
    "RobotParams",
    "GeneralizedState",
    "FrictionConfig",
    "mass_matrix",
    "bias_vector",
    "forward_dynamics",
    "centripetal_friction",
    "ground_friction",
    "plant_step",
    "simulate_hold",
    "mechanical_energy",
]

_DET_EPS = 1e-12


class SingularMass(ArithmeticError):
    """A 2x2 block of the mass matrix is (numerically) singular."""


@dataclass(frozen=True)
class RobotParams:
    """Physical parameters of the robot.

    The defaults describe a ~20 kg sphere of 0.3 m radius with a 10 kg
    pendulum; they are chosen so the steady roll-balance pendulum angle
    stays below 0.3 rad for speeds up to 1 m/s and leans up to 15 degrees.
    """

    m_s: float = 4.0
    m_f: float = 6.0
    m_p: float = 10.0
    I_sx: float = 0.24
    I_sy: float = 0.24
    I_fx: float = 0.10
    I_fy: float = 0.10
    I_px: float = 0.50
    I_py: float = 0.50
    r: float = 0.3
    l: float = 0.2
    zeta: float = 0.05
    g: float = 9.81
    k_t: float = 0.5
    tau_max: float = 10.0

    def __post_init__(self):
        positive = ("m_s", "m_f", "m_p", "I_sx", "I_sy", "I_fx", "I_fy", "I_px", "I_py", "r", "l")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        for name in ("zeta", "k_t", "tau_max"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    def total_mass(self) -> float:
        return self.m_s + self.m_f + self.m_p

    def scaled(self, factor: float) -> "RobotParams":
        """Uniformly heavier (or lighter) robot: every mass and inertia times ``factor``."""
        names = ("m_s", "m_f", "m_p", "I_sx", "I_sy", "I_fx", "I_fy", "I_px", "I_py")
        return replace(self, **{n: getattr(self, n) * factor for n in names})


@dataclass(frozen=True)
class GeneralizedState:
    q: np.ndarray = field(default_factory=lambda: np.zeros(4))
    qdot: np.ndarray = field(default_factory=lambda: np.zeros(4))

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float).reshape(4))
        object.__setattr__(self, "qdot", np.asarray(self.qdot, dtype=float).reshape(4))

    @classmethod
    def from_vector(cls, y) -> "GeneralizedState":
        y = np.asarray(y, dtype=float)
        return cls(y[:4].copy(), y[4:].copy())

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.q, self.qdot])

    @property
    def velocity(self) -> float:
        return float(self.qdot[1])


@dataclass(frozen=True)
class FrictionConfig:
    """Ground friction truth model used by the plant.

    Along x: Coulomb ``mu_c*M*g*sign(xdot)`` plus viscous ``c_v*xdot``.
    Along y: the centripetal force needed to hold the turning circle.
    """

    mu_c: float = 0.0
    c_v: float = 0.0
    x_enabled: bool = True
    y_enabled: bool = True

    def __post_init__(self):
        if self.mu_c < 0 or self.c_v < 0:
            raise ValueError("friction coefficients must be nonnegative")


def mass_matrix(params: RobotParams, q) -> np.ndarray:
    alpha, beta = q[0], q[2]
    p = params
    M = p.total_mass()
    ca, cb = math.cos(alpha), math.cos(beta)
    out = np.zeros((4, 4))
    out[0, 0] = p.I_fy + p.I_py
    out[0, 1] = p.m_p * p.l * ca
    out[1, 0] = p.m_p * p.r * p.l * ca
    out[1, 1] = M * p.r + p.I_sy / p.r
    out[2, 2] = p.I_px
    out[2, 3] = out[3, 2] = p.m_p * p.r * p.l * cb
    out[3, 3] = M * p.r**2 + p.I_sx + p.I_fx
    return out


def bias_vector(params: RobotParams, q, qdot, F_fx: float = 0.0, F_fy: float = 0.0) -> np.ndarray:
    alpha, _, beta, _ = q
    da, dx, db, dphi = qdot
    p = params
    sa, ca = math.sin(alpha), math.cos(alpha)
    sb, cb = math.sin(beta), math.cos(beta)
    mgl = p.m_p * p.g * p.l
    mrl = p.m_p * p.r * p.l
    return np.array([
        mgl * sa * cb + p.zeta * (da + dx * ca / p.r),
        -mrl * da**2 * sa + p.zeta * (da * ca + dx / p.r) + F_fx * p.r,
        mgl * ca * sb + p.zeta * (db + dphi * cb),
        -mrl * db**2 * sb + p.zeta * (dphi + db * cb) + F_fy * p.r,
    ])


def _solve2(a11, a12, a21, a22, r1, r2):
    det = a11 * a22 - a12 * a21
    if abs(det) < _DET_EPS:
        raise SingularMass(f"2x2 mass block determinant {det:.3e}")
    return (a22 * r1 - a12 * r2) / det, (a11 * r2 - a21 * r1) / det


def forward_dynamics(params: RobotParams, q, qdot, tau, F_fx: float = 0.0, F_fy: float = 0.0) -> np.ndarray:
    """Accelerations ``qdd = M(q)^-1 (E tau - N)`` via two independent 2x2 solves."""
    Mq = mass_matrix(params, q)
    N = bias_vector(params, q, qdot, F_fx, F_fy)
    t1, t2 = tau
    dda, ddx = _solve2(Mq[0, 0], Mq[0, 1], Mq[1, 0], Mq[1, 1], t1 - N[0], t1 - N[1])
    ddb, ddphi = _solve2(Mq[2, 2], Mq[2, 3], Mq[3, 2], Mq[3, 3], t2 - N[2], t2 - N[3])
    return np.array([dda, ddx, ddb, ddphi])


def centripetal_friction(params: RobotParams, v: float, phi: float) -> float:
    """Lateral friction holding a turn of radius ``r / tan(phi)``: ``M v^2 tan(phi) / r``."""
    if not abs(phi) < math.pi / 2:
        raise ValueError("roll angle must satisfy |phi| < pi/2")
    return params.total_mass() * v * v * math.tan(phi) / params.r


def ground_friction(params: RobotParams, friction: FrictionConfig, qdot, phi: float) -> tuple[float, float]:
    """Plant-side ``(F_fx, F_fy)`` in the sign convention of ``bias_vector``."""
    dx = qdot[1]
    F_fx = 0.0
    if friction.x_enabled:
        F_fx = friction.mu_c * params.total_mass() * params.g * float(np.sign(dx)) + friction.c_v * dx
    F_fy = centripetal_friction(params, dx, phi) if friction.y_enabled else 0.0
    return F_fx, F_fy


def _rhs(params, friction, y, tau):
    # scalar transcription of forward_dynamics + ground_friction; the
    # integrator calls it four times per step so numpy overhead dominates
    p = params
    alpha, _, beta, phi, da, dx, db, dphi = y
    t1, t2 = tau
    M = p.m_s + p.m_f + p.m_p
    sa, ca = math.sin(alpha), math.cos(alpha)
    sb, cb = math.sin(beta), math.cos(beta)
    mgl = p.m_p * p.g * p.l
    mrl = p.m_p * p.r * p.l
    F_fx = 0.0
    if friction.x_enabled:
        sgn = (dx > 0) - (dx < 0)
        F_fx = friction.mu_c * M * p.g * sgn + friction.c_v * dx
    F_fy = M * dx * dx * math.tan(phi) / p.r if friction.y_enabled else 0.0
    n1 = mgl * sa * cb + p.zeta * (da + dx * ca / p.r)
    n2 = -mrl * da * da * sa + p.zeta * (da * ca + dx / p.r) + F_fx * p.r
    n3 = mgl * ca * sb + p.zeta * (db + dphi * cb)
    n4 = -mrl * db * db * sb + p.zeta * (dphi + db * cb) + F_fy * p.r
    dda, ddx = _solve2(p.I_fy + p.I_py, p.m_p * p.l * ca, mrl * ca, M * p.r + p.I_sy / p.r, t1 - n1, t1 - n2)
    ddb, ddphi = _solve2(p.I_px, mrl * cb, mrl * cb, M * p.r * p.r + p.I_sx + p.I_fx, t2 - n3, t2 - n4)
    return (da, dx, db, dphi, dda, ddx, ddb, ddphi)


def plant_step(params: RobotParams, friction: FrictionConfig, state: GeneralizedState, tau, dt: float) -> GeneralizedState:
    """One classical RK4 step of the nonlinear plant; torques saturate at ``tau_max``."""
    return GeneralizedState.from_vector(_rk4(params, friction, state.as_vector().tolist(), tau, dt))


def _rk4(params, friction, y, tau, dt):
    if not dt > 0:
        raise ValueError("dt must be positive")
    lim = params.tau_max
    tau = (min(max(float(tau[0]), -lim), lim), min(max(float(tau[1]), -lim), lim))
    k1 = _rhs(params, friction, y, tau)
    k2 = _rhs(params, friction, [a + 0.5 * dt * b for a, b in zip(y, k1)], tau)
    k3 = _rhs(params, friction, [a + 0.5 * dt * b for a, b in zip(y, k2)], tau)
    k4 = _rhs(params, friction, [a + dt * b for a, b in zip(y, k3)], tau)
    h = dt / 6.0
    return [a + h * (b1 + 2 * b2 + 2 * b3 + b4) for a, b1, b2, b3, b4 in zip(y, k1, k2, k3, k4)]


def simulate_hold(params: RobotParams, friction: FrictionConfig, state: GeneralizedState, tau, dt: float,
                  steps: int) -> GeneralizedState:
    """``steps`` RK4 steps under a constant (zero-order-held) torque."""
    y = state.as_vector().tolist()
    for _ in range(steps):
        y = _rk4(params, friction, y, tau, dt)
    return GeneralizedState.from_vector(y)


def mechanical_energy(params: RobotParams, state: GeneralizedState) -> float:
    """Kinetic plus potential energy; conserved when unforced, undamped and friction-free.

    The second row of the longitudinal block is the x-equation scaled by r,
    so the kinetic energy uses ``M + I_sy/r^2`` for the translational term.
    Potential energy is zero with the pendulum hanging straight down.
    """
    p = params
    alpha, _, beta, _ = state.q
    da, dx, db, dphi = state.qdot
    M = p.total_mass()
    mrl = p.m_p * p.r * p.l
    T_long = (0.5 * (p.I_fy + p.I_py) * da**2 + p.m_p * p.l * math.cos(alpha) * da * dx
              + 0.5 * (M + p.I_sy / p.r**2) * dx**2)
    T_trans = (0.5 * p.I_px * db**2 + mrl * math.cos(beta) * db * dphi
               + 0.5 * (M * p.r**2 + p.I_sx + p.I_fx) * dphi**2)
    V = p.m_p * p.g * p.l * (1.0 - math.cos(alpha) * math.cos(beta))
    return T_long + T_trans + V
