"""Extended-state observer for offset-free prediction models.

Model mismatch is lumped into constant disturbances that act on selected
acceleration rows of a discrete sub-model.  The observer runs on the
augmented state ``[x; d]`` and its disturbance estimate is folded back into
the model's affine offset before each MPC solve.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.signal import place_poles

from .linmodel import LinearModel

__all__ = [
    "UnobservableAugmentation",
    "PlacementFailed",
    "AugmentedModel",
    "ObserverState",
    "augment",
    "observability_matrix",
    "design_gains",
    "eso_update",
    "apply_disturbance",
    "init_observer",
]


class UnobservableAugmentation(ValueError):
    pass


class PlacementFailed(ValueError):
    pass


@dataclass(frozen=True)
class AugmentedModel:
    A_a: np.ndarray
    B_a: np.ndarray
    C_a: np.ndarray
    offset: np.ndarray
    n_d: int
    channels: tuple
    outputs: tuple
    T_s: float

    @property
    def n(self) -> int:
        return self.A_a.shape[0] - self.n_d


@dataclass(frozen=True)
class ObserverState:
    x_hat: np.ndarray
    d_hat: np.ndarray
    L: np.ndarray

    @property
    def z(self) -> np.ndarray:
        return np.concatenate([self.x_hat, self.d_hat])


def observability_matrix(A, C) -> np.ndarray:
    A, C = np.atleast_2d(A), np.atleast_2d(C)
    blocks, M = [], C
    for _ in range(A.shape[0]):
        blocks.append(M)
        M = M @ A
    return np.vstack(blocks)


def augment(model: LinearModel, disturbance_channels, outputs=None) -> AugmentedModel:
    """Append one constant disturbance per channel; ``outputs`` index measured states.

    A disturbance ``d`` on row ``i`` is an unmodeled acceleration, so it adds
    ``T_s * d`` to that row per step.
    """
    n = model.n
    channels = tuple(int(c) for c in disturbance_channels)
    outputs = tuple(range(n)) if outputs is None else tuple(int(o) for o in outputs)
    n_d = len(channels)
    A_a = np.eye(n + n_d)
    A_a[:n, :n] = model.A_d
    for j, ch in enumerate(channels):
        A_a[ch, n + j] = model.T_s
    B_a = np.concatenate([model.B_d, np.zeros(n_d)])
    C_a = np.zeros((len(outputs), n + n_d))
    for i, o in enumerate(outputs):
        C_a[i, o] = 1.0
    offset = np.concatenate([model.C_d, np.zeros(n_d)])
    if n_d:
        s = np.linalg.svd(observability_matrix(A_a, C_a), compute_uv=False)
        if s.size < n + n_d or s[n + n_d - 1] <= 1e-8:
            raise UnobservableAugmentation(
                f"augmented pair not observable (sigma_min={s[-1] if s.size else 0:.2e})")
    return AugmentedModel(A_a, B_a, C_a, offset, n_d, channels, outputs, model.T_s)


def _cyclic_placement(A, C, poles, rng):
    # Heymann: a random output injection makes A cyclic, then a single
    # combined output admits Ackermann's formula for any pole multiplicity.
    n, p = A.shape[0], C.shape[0]
    for _ in range(20):
        L0 = 0.1 * rng.standard_normal((n, p))
        w = rng.standard_normal(p)
        A0 = A - L0 @ C
        c = w @ C
        O = observability_matrix(A0, c[None, :])
        if np.linalg.matrix_rank(O) < n:
            continue
        coeffs = np.real(np.poly(poles))
        phi = sum(ck * np.linalg.matrix_power(A0, n - k) for k, ck in enumerate(coeffs))
        ell = phi @ np.linalg.solve(O, np.eye(n)[:, -1])
        return L0 + np.outer(ell, w)
    raise PlacementFailed("could not find a cyclic output combination")


def design_gains(aug: AugmentedModel, poles, seed: int = 0) -> np.ndarray:
    """Output-injection gain ``L`` placing ``eig(A_a - L C_a)`` at ``poles``."""
    poles = np.asarray(poles, dtype=complex)
    N = aug.A_a.shape[0]
    if poles.size != N:
        raise ValueError(f"need {N} poles, got {poles.size}")
    if np.any(np.abs(poles) >= 1):
        raise ValueError("observer poles must lie strictly inside the unit circle")
    O = observability_matrix(aug.A_a, aug.C_a)
    if np.linalg.matrix_rank(O) < N:
        raise PlacementFailed("pair (A_a, C_a) is not observable")
    p_arg = poles.real if np.all(poles.imag == 0) else poles
    try:
        L = place_poles(aug.A_a.T, aug.C_a.T, p_arg).gain_matrix.T
    except ValueError:
        L = _cyclic_placement(aug.A_a, aug.C_a, poles, np.random.default_rng(seed))
    return np.real_if_close(L).astype(float)


def init_observer(aug: AugmentedModel, L, x0=None) -> ObserverState:
    x0 = np.zeros(aug.n) if x0 is None else np.asarray(x0, dtype=float)
    return ObserverState(x0, np.zeros(aug.n_d), np.asarray(L, dtype=float))


def eso_update(obs: ObserverState, aug: AugmentedModel, u: float, y) -> ObserverState:
    """``z+ = A_a z + B_a u + c + L (y - C_a z)``; returns the one-step-ahead estimate."""
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.size != aug.C_a.shape[0]:
        raise ValueError("measurement size does not match the output map")
    z = obs.z
    z_next = aug.A_a @ z + aug.B_a * u + aug.offset + obs.L @ (y - aug.C_a @ z)
    return replace(obs, x_hat=z_next[: aug.n], d_hat=z_next[aug.n:])


def apply_disturbance(model: LinearModel, d_hat, channels) -> LinearModel:
    """Fold disturbance estimates into the affine terms; ``A`` and ``B`` untouched."""
    d_hat = np.asarray(d_hat, dtype=float).reshape(-1)
    if d_hat.size != len(channels):
        raise ValueError("one estimate per channel required")
    C, C_d = model.C.copy(), model.C_d.copy()
    for ch, d in zip(channels, d_hat):
        C[ch] += d
        C_d[ch] += d * model.T_s
    return replace(model, C=C, C_d=C_d)
