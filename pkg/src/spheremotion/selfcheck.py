"""Oracle self-tests behind the ``check`` command.

Each check compares library output against an independent computation:
analytic Jacobians against central differences, QP solutions against KKT
conditions and brute-force active-set enumeration, and the integrator
against conservation of mechanical energy.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .dynamics import FrictionConfig, GeneralizedState, RobotParams, mechanical_energy, simulate_hold
from .linmodel import LONGITUDINAL, TRANSVERSE, axis_state, linearize, numeric_jacobian, substate_derivative
from .qp import QPProblem, kkt_residual, objective, solve_qp

__all__ = ["CheckResult", "check_jacobians", "jacobian_relative_error", "check_qp", "check_energy",
           "enumerate_box_qp", "run_checks"]


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str


def jacobian_relative_error(ana, num, floor: float = 1e-6) -> np.ndarray:
    """Elementwise ``|ana - num| / max(|ana|, |num|, floor)``.

    Central differences at h = 1e-6 carry ~1e-12 of round-off, so entries
    far below ``floor`` (near-cancelling damping terms) are compared
    against the floor instead of their own size.
    """
    den = np.maximum(np.maximum(np.abs(num), np.abs(ana)), floor)
    return np.abs(num - ana) / den


def check_jacobians(points: int = 20, seed: int = 0, tol: float = 1e-5) -> CheckResult:
    p = RobotParams()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(points):
        q = rng.uniform(-0.2, 0.2, 4)
        qd = rng.uniform(-0.5, 0.5, 4)
        for axis in (LONGITUDINAL, TRANSVERSE):
            speed = float(rng.uniform(0, 1)) if axis == TRANSVERSE else None
            other = q[2] if axis == LONGITUDINAL else q[0]
            model = linearize(p, axis, q, qd, speed=speed)

            def f(z, axis=axis, other=other, speed=speed):
                return substate_derivative(p, axis, z[:4], z[4], other, speed=speed)

            num = numeric_jacobian(f, np.append(axis_state(axis, q, qd), 0.0), h=1e-6)
            ana = np.column_stack([model.A, model.B])
            worst = max(worst, float(jacobian_relative_error(ana, num).max()))
    return CheckResult("jacobian", worst < tol, f"max elementwise relative error {worst:.2e}")


def enumerate_box_qp(H, f, lo, hi):
    """Exact minimizer of a small strictly convex box QP by trying every active set."""
    n = len(f)
    best, best_val = None, np.inf
    for pattern in itertools.product((0, 1, 2), repeat=n):
        U = np.zeros(n)
        fixed = [i for i in range(n) if pattern[i]]
        free = [i for i in range(n) if not pattern[i]]
        for i in fixed:
            U[i] = lo[i] if pattern[i] == 1 else hi[i]
        if free:
            rhs = -f[free] - H[np.ix_(free, fixed)] @ U[fixed]
            U[free] = np.linalg.solve(H[np.ix_(free, free)], rhs)
        if np.all(U >= lo - 1e-12) and np.all(U <= hi + 1e-12):
            val = 0.5 * U @ H @ U + f @ U
            if val < best_val:
                best, best_val = U, val
    return best


def random_box_qp(rng, n):
    M = rng.standard_normal((n, n))
    H = M @ M.T + 0.1 * np.eye(n)
    f = rng.standard_normal(n) * 3
    lo = -rng.uniform(0.1, 2, n)
    hi = rng.uniform(0.1, 2, n)
    return QPProblem(H, f, np.eye(n), lo, hi)


def check_qp(problems: int = 300, seed: int = 0, tol: float = 1e-8) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst_kkt = worst_gap = 0.0
    for _ in range(problems):
        n = int(rng.integers(1, 9))
        qp = random_box_qp(rng, n)
        sol = solve_qp(qp)
        worst_kkt = max(worst_kkt, *kkt_residual(qp, sol.U, sol.lam))
        if n <= 4:
            ref = enumerate_box_qp(qp.H, qp.f, qp.d_lo, qp.d_hi)
            worst_gap = max(worst_gap, float(np.max(np.abs(sol.U - ref))),
                            abs(objective(qp, sol.U) - objective(qp, ref)))
    ok = worst_kkt < tol and worst_gap < tol
    return CheckResult("qp", ok, f"max KKT residual {worst_kkt:.2e}, max gap to enumeration {worst_gap:.2e}")


def check_energy(duration: float = 5.0, tol: float = 1e-8) -> CheckResult:
    p = RobotParams(zeta=0.0)
    state = GeneralizedState(q=[0.4, 0.0, -0.3, 0.1], qdot=[0.5, 0.2, -0.4, 0.3])
    e0 = mechanical_energy(p, state)
    end = simulate_hold(p, FrictionConfig(x_enabled=False, y_enabled=False), state, (0.0, 0.0), 1e-3,
                        int(round(duration / 1e-3)))
    drift = abs(mechanical_energy(p, end) - e0) / abs(e0)
    return CheckResult("energy", drift < tol, f"relative energy drift {drift:.2e} over {duration:g} s")


def run_checks() -> list[CheckResult]:
    return [check_jacobians(), check_qp(), check_energy()]
