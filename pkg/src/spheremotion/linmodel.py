"""Affine sub-models ``xdot = A x + B u + C`` and their forward-Euler discretization.

Transverse state is ``[beta, beta_dot, phi, phi_dot]`` driven by ``tau2``;
longitudinal state is ``[alpha, alpha_dot, x, x_dot]`` driven by ``tau1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import RobotParams, SingularMass, centripetal_friction

__all__ = [
    "LONGITUDINAL",
    "TRANSVERSE",
    "LinearModel",
    "linearize",
    "discretize",
    "numeric_jacobian",
    "axis_state",
    "substate_derivative",
    "select_states",
]

LONGITUDINAL = "longitudinal"
TRANSVERSE = "transverse"


@dataclass(frozen=True)
class LinearModel:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    A_d: np.ndarray
    B_d: np.ndarray
    C_d: np.ndarray
    T_s: float
    axis: str

    @property
    def n(self) -> int:
        return self.A_d.shape[0]

    @classmethod
    def from_continuous(cls, A, B, C, T_s, axis):
        A_d, B_d, C_d = discretize(A, B, C, T_s)
        return cls(np.asarray(A, float), np.asarray(B, float).reshape(-1),
                   np.asarray(C, float).reshape(-1), A_d, B_d, C_d, T_s, axis)

    def step(self, x, u) -> np.ndarray:
        return self.A_d @ x + self.B_d * u + self.C_d


def discretize(A, B, C, T_s: float):
    """Forward Euler: ``(I + A T_s, B T_s, C T_s)``."""
    if not T_s > 0:
        raise ValueError("T_s must be positive")
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float).reshape(-1)
    C = np.asarray(C, dtype=float).reshape(-1)
    return np.eye(A.shape[0]) + A * T_s, B * T_s, C * T_s


def numeric_jacobian(f, point, h: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian, one column per coordinate of ``point``."""
    if not h > 0:
        raise ValueError("h must be positive")
    point = np.asarray(point, dtype=float)
    cols = []
    for i in range(point.size):
        e = np.zeros_like(point)
        e[i] = h
        cols.append((np.atleast_1d(f(point + e)) - np.atleast_1d(f(point - e))) / (2 * h))
    return np.column_stack(cols)


def axis_state(axis: str, q, qdot) -> np.ndarray:
    """Extract the 4-dim sub-model state of ``axis`` from generalized coordinates."""
    if axis == LONGITUDINAL:
        return np.array([q[0], qdot[0], q[1], qdot[1]], dtype=float)
    if axis == TRANSVERSE:
        return np.array([q[2], qdot[2], q[3], qdot[3]], dtype=float)
    raise ValueError(f"unknown axis {axis!r}")


def _blocks(params: RobotParams, axis: str, s, other, F: float, speed):
    """Mass block, bias, and their partials w.r.t. the substate ``s``.

    ``other`` is the swing angle of the other axis (held fixed).  Returns
    ``(Mb, dMb_ds0, N, dN)`` with ``dN`` of shape (2, 4).
    """
    p = params
    mrl = p.m_p * p.r * p.l
    mgl = p.m_p * p.g * p.l
    ang, dang, _, dlin = s
    sa, ca = math.sin(ang), math.cos(ang)
    co = math.cos(other)
    dN = np.zeros((2, 4))
    if axis == LONGITUDINAL:
        ml = p.m_p * p.l
        Mb = np.array([[p.I_fy + p.I_py, ml * ca], [mrl * ca, p.total_mass() * p.r + p.I_sy / p.r]])
        dMb = np.array([[0.0, -ml * sa], [-mrl * sa, 0.0]])
        N = np.array([
            mgl * sa * co + p.zeta * (dang + dlin * ca / p.r),
            -mrl * dang**2 * sa + p.zeta * (dang * ca + dlin / p.r) + F * p.r,
        ])
        dN[0] = [mgl * ca * co - p.zeta * dlin * sa / p.r, p.zeta, 0.0, p.zeta * ca / p.r]
        dN[1] = [-mrl * dang**2 * ca - p.zeta * dang * sa, -2 * mrl * dang * sa + p.zeta * ca, 0.0, p.zeta / p.r]
    elif axis == TRANSVERSE:
        phi = s[2]
        Mb = np.array([[p.I_px, mrl * ca], [mrl * ca, p.total_mass() * p.r**2 + p.I_sx + p.I_fx]])
        dMb = np.array([[0.0, -mrl * sa], [-mrl * sa, 0.0]])
        F_total = F
        dF_dphi = 0.0
        if speed is not None:
            F_total += centripetal_friction(p, speed, phi)
            dF_dphi = p.total_mass() * speed**2 / (p.r * math.cos(phi) ** 2)
        N = np.array([
            mgl * co * sa + p.zeta * (dang + dlin * ca),
            -mrl * dang**2 * sa + p.zeta * (dlin + dang * ca) + F_total * p.r,
        ])
        dN[0] = [mgl * co * ca - p.zeta * dlin * sa, p.zeta, 0.0, p.zeta * ca]
        dN[1] = [-mrl * dang**2 * ca - p.zeta * dang * sa, -2 * mrl * dang * sa + p.zeta * ca, dF_dphi * p.r, p.zeta]
    else:
        raise ValueError(f"unknown axis {axis!r}")
    if abs(np.linalg.det(Mb)) < 1e-12:
        raise SingularMass(f"{axis} mass block is singular")
    return Mb, dMb, N, dN


def substate_derivative(params: RobotParams, axis: str, s, u: float, other: float = 0.0,
                        friction_estimate: float = 0.0, speed: float | None = None) -> np.ndarray:
    """Nonlinear sub-model ``d/dt s`` with the other axis' swing angle frozen at ``other``."""
    s = np.asarray(s, dtype=float)
    Mb, _, N, _ = _blocks(params, axis, s, other, friction_estimate, speed)
    acc = np.linalg.solve(Mb, u - N)
    return np.array([s[1], acc[0], s[3], acc[1]])


def linearize(params: RobotParams, axis: str, q=None, qdot=None, friction_estimate: float = 0.0,
              speed: float | None = None, T_s: float = 0.02) -> LinearModel:
    """Linearize one sub-model about the operating point ``(q, qdot)``.

    ``friction_estimate`` is a constant friction force on the axis (``F_fx``
    or ``F_fy``).  For the transverse axis, passing ``speed`` additionally
    models the centripetal friction as a function of roll, so its stiffness
    enters ``A``.  The offset is ``C = f(p, 0) - A p`` which reduces to
    ``f(0, 0)`` at the origin.
    """
    q = np.zeros(4) if q is None else np.asarray(q, dtype=float)
    qdot = np.zeros(4) if qdot is None else np.asarray(qdot, dtype=float)
    s = axis_state(axis, q, qdot)
    other = q[2] if axis == LONGITUDINAL else q[0]
    Mb, dMb, N, dN = _blocks(params, axis, s, other, friction_estimate, speed)
    acc0 = np.linalg.solve(Mb, -N)
    # d(M^-1 (E u - N))/ds = M^-1 (-dN/ds - dM/ds * acc); M depends only on s[0]
    rhs = -dN
    rhs[:, 0] -= dMb @ acc0
    dacc = np.linalg.solve(Mb, rhs)
    A = np.zeros((4, 4))
    A[0, 1] = 1.0
    A[2, 3] = 1.0
    A[1], A[3] = dacc[0], dacc[1]
    b = np.linalg.solve(Mb, np.ones(2))
    B = np.array([0.0, b[0], 0.0, b[1]])
    f0 = np.array([s[1], acc0[0], s[3], acc0[1]])
    C = f0 - A @ s
    return LinearModel.from_continuous(A, B, C, T_s, axis)


def select_states(model: LinearModel, keep) -> LinearModel:
    """Restrict a model to the states in ``keep``.

    Valid only when the dropped states do not influence the kept ones (e.g.
    the shell position ``x``, a pure integrator of ``x_dot``).
    """
    keep = list(keep)
    drop = [i for i in range(model.n) if i not in keep]
    if drop and np.any(model.A[np.ix_(keep, drop)] != 0):
        raise ValueError("dropped states feed the kept ones")
    ix = np.ix_(keep, keep)
    return LinearModel(model.A[ix], model.B[keep], model.C[keep], model.A_d[ix],
                       model.B_d[keep], model.C_d[keep], model.T_s, model.axis)
