"""Condensed linear MPC: prediction stacking, QP construction and a dense QP solver.

Predicted states ``X = [x_1; ...; x_Np]`` are affine in the input sequence
``U = [u_0, ..., u_{Nc-1}]`` (inputs past the control horizon repeat the
last one), so the tracking cost collapses to ``1/2 U'HU + U'f`` subject to
two-sided linear constraints ``d_lo <= D U <= d_hi``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

from .linmodel import LinearModel

__all__ = [
    "DimensionMismatch",
    "Infeasible",
    "MaxIterations",
    "MPCConfig",
    "PredictionMatrices",
    "QPProblem",
    "QPSolution",
    "build_prediction",
    "condense",
    "solve_qp",
    "kkt_residual",
    "objective",
]


class DimensionMismatch(ValueError):
    pass


class Infeasible(RuntimeError):
    pass


class MaxIterations(RuntimeError):
    pass


@dataclass
class MPCConfig:
    N_p: int
    N_c: int
    Q: np.ndarray
    R: float
    P: np.ndarray | None = None
    u_min: float = -np.inf
    u_max: float = np.inf
    du_max: float | None = None
    x_min: np.ndarray | None = None
    x_max: np.ndarray | None = None

    def __post_init__(self):
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        self.P = self.Q.copy() if self.P is None else np.atleast_2d(np.asarray(self.P, dtype=float))
        if not 1 <= self.N_c <= self.N_p:
            raise ValueError("need 1 <= N_c <= N_p")
        if self.R < 0:
            raise ValueError("R must be nonnegative")
        for name in ("Q", "P"):
            W = getattr(self, name)
            if W.shape[0] != W.shape[1] or not np.allclose(W, W.T):
                raise ValueError(f"{name} must be symmetric")
            if np.linalg.eigvalsh(W).min() < -1e-12:
                raise ValueError(f"{name} must be positive semidefinite")
        if self.P.shape != self.Q.shape:
            raise DimensionMismatch("P and Q differ in shape")
        if self.u_min > self.u_max:
            raise ValueError("u_min > u_max")

    @property
    def n(self) -> int:
        return self.Q.shape[0]


@dataclass(frozen=True)
class PredictionMatrices:
    A_qp: np.ndarray
    B_qp: np.ndarray
    C_qp: np.ndarray

    def predict(self, x0, U) -> np.ndarray:
        return self.A_qp @ x0 + self.B_qp @ U + self.C_qp


@dataclass
class QPProblem:
    H: np.ndarray
    f: np.ndarray
    D: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    d_lo: np.ndarray = field(default_factory=lambda: np.zeros(0))
    d_hi: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        self.f = np.asarray(self.f, dtype=float).reshape(-1)
        n = self.f.size
        self.D = np.asarray(self.D, dtype=float).reshape(-1, n) if np.size(self.D) else np.zeros((0, n))
        self.d_lo = np.asarray(self.d_lo, dtype=float).reshape(-1)
        self.d_hi = np.asarray(self.d_hi, dtype=float).reshape(-1)
        if self.H.shape != (n, n):
            raise DimensionMismatch("H and f disagree")
        if self.d_lo.size != self.D.shape[0] or self.d_hi.size != self.D.shape[0]:
            raise DimensionMismatch("bounds and D disagree")
        if np.any(self.d_lo > self.d_hi):
            raise Infeasible("d_lo > d_hi")


@dataclass
class QPSolution:
    U: np.ndarray
    lam: np.ndarray
    status: str
    iterations: int
    active: list


def build_prediction(model: LinearModel, cfg: MPCConfig) -> PredictionMatrices:
    n = model.n
    if cfg.n != n:
        raise DimensionMismatch(f"model has {n} states, weights have {cfg.n}")
    Ad, Bd, Cd = model.A_d, model.B_d, model.C_d
    A_qp = np.zeros((cfg.N_p * n, n))
    B_qp = np.zeros((cfg.N_p * n, cfg.N_c))
    C_qp = np.zeros(cfg.N_p * n)
    Ak, Bk, Ck = np.eye(n), np.zeros((n, cfg.N_c)), np.zeros(n)
    for k in range(cfg.N_p):
        Ak = Ad @ Ak
        Bk = Ad @ Bk
        Bk[:, min(k, cfg.N_c - 1)] += Bd
        Ck = Ad @ Ck + Cd
        rows = slice(k * n, (k + 1) * n)
        A_qp[rows], B_qp[rows], C_qp[rows] = Ak, Bk, Ck
    return PredictionMatrices(A_qp, B_qp, C_qp)


def _weight_blocks(cfg: MPCConfig) -> np.ndarray:
    W = np.repeat(cfg.Q[None], cfg.N_p, axis=0)
    W[-1] = cfg.P
    return W


def condense(pred: PredictionMatrices, cfg: MPCConfig, x0, X_ref, U_ref, u_prev: float | None = None) -> QPProblem:
    """``H = 2(B'QB + R)``, ``f = 2[B'Q(A x0 + C - X_ref) - R U_ref]`` plus bound rows.

    ``D`` holds one identity row per input for the box bounds, first
    differences when ``du_max`` is set (the first one against ``u_prev``),
    and predicted-state rows when state bounds are configured.
    """
    n, Np, Nc = cfg.n, cfg.N_p, cfg.N_c
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    X_ref = np.asarray(X_ref, dtype=float).reshape(-1)
    U_ref = np.broadcast_to(np.asarray(U_ref, dtype=float), (Nc,))
    if x0.size != n or X_ref.size != n * Np or pred.B_qp.shape != (n * Np, Nc):
        raise DimensionMismatch("condense inputs disagree with the configuration")
    W = _weight_blocks(cfg)
    Bb = pred.B_qp.reshape(Np, n, Nc)
    QB = np.einsum("kij,kjc->kic", W, Bb).reshape(Np * n, Nc)
    free = pred.A_qp @ x0 + pred.C_qp
    H = 2.0 * (pred.B_qp.T @ QB + cfg.R * np.eye(Nc))
    H = 0.5 * (H + H.T)
    f = 2.0 * (QB.T @ (free - X_ref) - cfg.R * U_ref)

    rows, lo, hi = [np.eye(Nc)], [np.full(Nc, cfg.u_min)], [np.full(Nc, cfg.u_max)]
    if cfg.du_max is not None:
        Ddiff = np.eye(Nc) - np.eye(Nc, k=-1)
        dlo, dhi = np.full(Nc, -cfg.du_max), np.full(Nc, cfg.du_max)
        if u_prev is None:
            Ddiff, dlo, dhi = Ddiff[1:], dlo[1:], dhi[1:]
        else:
            dlo[0] += u_prev
            dhi[0] += u_prev
        rows.append(Ddiff), lo.append(dlo), hi.append(dhi)
    if cfg.x_min is not None or cfg.x_max is not None:
        xmin = np.tile(np.full(n, -np.inf) if cfg.x_min is None else cfg.x_min, Np)
        xmax = np.tile(np.full(n, np.inf) if cfg.x_max is None else cfg.x_max, Np)
        finite = np.isfinite(xmin) | np.isfinite(xmax)
        rows.append(pred.B_qp[finite]), lo.append(xmin[finite] - free[finite]), hi.append(xmax[finite] - free[finite])
    return QPProblem(H, f, np.vstack(rows), np.concatenate(lo), np.concatenate(hi))


def objective(qp: QPProblem, U) -> float:
    U = np.asarray(U, dtype=float)
    return float(0.5 * U @ qp.H @ U + U @ qp.f)


def kkt_residual(qp: QPProblem, U, lam) -> tuple[float, float, float]:
    """Stationarity ``||HU + f + D'lam||_inf``, primal infeasibility, complementarity.

    ``lam[i] > 0`` acts on the upper bound of row i, ``lam[i] < 0`` on the lower.
    """
    U = np.asarray(U, dtype=float)
    lam = np.asarray(lam, dtype=float).reshape(-1)
    stat = float(np.max(np.abs(qp.H @ U + qp.f + qp.D.T @ lam))) if U.size else 0.0
    if qp.D.shape[0] == 0:
        return stat, 0.0, 0.0
    DU = qp.D @ U
    feas = float(max(0.0, np.max(qp.d_lo - DU), np.max(DU - qp.d_hi)))
    with np.errstate(invalid="ignore"):
        slack = np.where(lam > 0, qp.d_hi - DU, DU - qp.d_lo)
        comp = np.where(lam != 0, np.abs(lam) * slack, 0.0)
    return stat, feas, float(np.max(np.abs(comp)))


class _Constraints:
    """Two-sided rows unfolded into ``normal' x >= b``; equal bounds become equalities."""

    def __init__(self, qp: QPProblem):
        normals, b, row, sign, eq = [], [], [], [], []
        for i in range(qp.D.shape[0]):
            lo, hi, d = qp.d_lo[i], qp.d_hi[i], qp.D[i]
            if lo == hi:
                normals.append(d), b.append(lo), row.append(i), sign.append(-1.0), eq.append(True)
                continue
            if np.isfinite(lo):
                normals.append(d), b.append(lo), row.append(i), sign.append(-1.0), eq.append(False)
            if np.isfinite(hi):
                normals.append(-d), b.append(-hi), row.append(i), sign.append(1.0), eq.append(False)
        n = qp.f.size
        self.N = np.array(normals).reshape(-1, n)
        self.b = np.array(b, dtype=float)
        self.row = np.array(row, dtype=int)
        self.sign = np.array(sign)
        self.eq = np.array(eq, dtype=bool)
        self.m_rows = qp.D.shape[0]

    def __len__(self):
        return self.b.size

    def lam(self, active, u) -> np.ndarray:
        lam = np.zeros(self.m_rows)
        for j, uj in zip(active, u):
            lam[self.row[j]] += self.sign[j] * uj
        return lam


def _equality_solve(qp, cons, active):
    """Solve the KKT system with ``active`` held as equalities; None if singular."""
    n, q = qp.f.size, len(active)
    Na = cons.N[active].T
    K = np.zeros((n + q, n + q))
    K[:n, :n] = qp.H
    K[:n, n:] = -Na
    K[n:, :n] = Na.T
    rhs = np.concatenate([-qp.f, cons.b[active]])
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(sol)):
        return None
    return sol[:n], sol[n:]


def _is_optimal(cons, x, u, active, tol):
    if len(cons) and np.any(cons.N @ x - cons.b < -tol):
        return False
    return not any(ui < -tol and not cons.eq[j] for j, ui in zip(active, u))


def solve_qp(qp: QPProblem, warm_start=None, tol: float = 1e-11) -> QPSolution:
    """Dual active-set (Goldfarb-Idnani) solve of a strictly convex QP.

    Starts from the unconstrained minimizer and adds the most violated
    constraint (lowest index on ties) until primal feasibility; constraints
    whose multiplier would turn negative are dropped along the way.  A warm
    start first tries the active set implied by ``warm_start`` and returns
    immediately if that set is already optimal.
    """
    n = qp.f.size
    cons = _Constraints(qp)
    m = len(cons)
    try:
        Lc = cho_factor(qp.H, lower=True)
    except np.linalg.LinAlgError as exc:
        raise ValueError("H is not positive definite") from exc

    if warm_start is not None and m:
        xw = np.asarray(warm_start, dtype=float).reshape(n)
        slack = cons.N @ xw - cons.b
        scale = 1e-9 * (1.0 + np.abs(cons.b))
        guess = [j for j in range(m) if cons.eq[j] or abs(slack[j]) <= scale[j]]
        if len(guess) <= n:
            res = _equality_solve(qp, cons, guess)
            if res is not None and _is_optimal(cons, res[0], res[1], guess, 1e-10):
                return QPSolution(res[0], cons.lam(guess, res[1]), "optimal", 0, guess)

    x = -cho_solve(Lc, qp.f)
    if m == 0:
        return QPSolution(x, np.zeros(0), "optimal", 0, [])

    L = Lc[0]
    Linv = solve_triangular(np.tril(L), np.eye(n), lower=True)
    active: list[int] = []
    u = np.zeros(0)
    max_iter = 10 * (cons.m_rows + n)
    it = 0

    def factor(act):
        if not act:
            return Linv.T, np.zeros((0, 0))
        Qf, Rf = np.linalg.qr(Linv @ cons.N[act].T, mode="complete")
        return Linv.T @ Qf, Rf[: len(act), : len(act)]

    J, R = factor(active)
    while True:
        s = cons.N @ x - cons.b
        s[active] = 0.0
        # equalities are always pulled into the active set
        pending_eq = [j for j in range(m) if cons.eq[j] and j not in active]
        if pending_eq:
            p = pending_eq[0]
            if s[p] > 0:
                cons.N[p], cons.b[p], cons.sign[p] = -cons.N[p], -cons.b[p], 1.0
        else:
            p = int(np.argmin(s))
            if s[p] >= -tol:
                break
        u_p = 0.0
        while True:
            it += 1
            if it > max_iter:
                raise MaxIterations(f"active-set iterations exceeded {max_iter}")
            q = len(active)
            npv = cons.N[p]
            d = J.T @ npv
            z = J[:, q:] @ d[q:]
            r = solve_triangular(R, d[:q]) if q else np.zeros(0)
            t1, k = np.inf, -1
            for idx in range(q):
                j = active[idx]
                if r[idx] > 0 and not cons.eq[j]:
                    ratio = u[idx] / r[idx]
                    if ratio < t1:
                        t1, k = ratio, idx
            znp = z @ npv
            sp = npv @ x - cons.b[p]
            t2 = -sp / znp if znp > 1e-14 * max(1.0, npv @ npv) else np.inf
            t = min(t1, t2)
            if not np.isfinite(t):
                raise Infeasible("constraints are inconsistent")
            if not np.isfinite(t2):
                u = u - t * r
                u_p += t
                u = np.delete(u, k)
                active.pop(k)
                J, R = factor(active)
                continue
            x = x + t * z
            u = u - t * r
            u_p += t
            if t == t2:
                active.append(p)
                u = np.append(u, u_p)
                J, R = factor(active)
                break
            u = np.delete(u, k)
            active.pop(k)
            J, R = factor(active)

    # polish x and multipliers on the final active set
    res = _equality_solve(qp, cons, active) if active else (-cho_solve(Lc, qp.f), np.zeros(0))
    if res is not None and _is_optimal(cons, res[0], res[1], active, 1e-9):
        x, u = res
    u = np.where(cons.eq[active], u, np.maximum(u, 0.0)) if active else u
    return QPSolution(x, cons.lam(active, u), "optimal", it, list(active))
