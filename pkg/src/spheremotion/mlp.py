"""Two-layer perceptron for the pendulum roll reference ``beta_d(v, phi)``.

A single tanh hidden layer feeds a linear output.  Inputs are mapped to
``[-1, 1]`` per feature using the training split; the output is scaled the
same way.  Training uses Levenberg-Marquardt on the normalized residuals
with validation-based early stopping.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .controllers import steady_roll_pendulum_angle
from .dynamics import RobotParams

__all__ = [
    "BadFractions",
    "JacobianSingular",
    "MLPParams",
    "Dataset",
    "TrainingHistory",
    "BetaFit",
    "TRAIN",
    "VALIDATION",
    "TEST",
    "forward",
    "init_params",
    "lm_step",
    "lm_train",
    "split_dataset",
    "beta_samples",
    "fit_beta_model",
    "train_beta_model",
    "mse",
    "save_model",
    "load_model",
    "DEFAULT_V_GRID",
    "DEFAULT_PHI_GRID",
]

TRAIN, VALIDATION, TEST = "train", "validation", "test"

DEFAULT_V_GRID = tuple(np.linspace(0.0, 1.0, 9))
DEFAULT_PHI_GRID = tuple(np.linspace(-0.2618, 0.2618, 10))

LAMBDA_MAX = 1e10


class BadFractions(ValueError):
    pass


class JacobianSingular(ArithmeticError):
    pass


@dataclass(frozen=True)
class MLPParams:
    """Weights plus affine normalization ``x_n = (x - in_offset) / in_scale``."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: float
    in_offset: np.ndarray = field(default_factory=lambda: np.zeros(2))
    in_scale: np.ndarray = field(default_factory=lambda: np.ones(2))
    out_offset: float = 0.0
    out_scale: float = 1.0
    seed: int | None = None

    def __post_init__(self):
        W1 = np.atleast_2d(np.asarray(self.W1, dtype=float))
        h = W1.shape[0]
        object.__setattr__(self, "W1", W1)
        object.__setattr__(self, "b1", np.asarray(self.b1, dtype=float).reshape(h))
        object.__setattr__(self, "W2", np.asarray(self.W2, dtype=float).reshape(1, h))
        object.__setattr__(self, "b2", float(self.b2))
        object.__setattr__(self, "in_offset", np.asarray(self.in_offset, dtype=float).reshape(W1.shape[1]))
        object.__setattr__(self, "in_scale", np.asarray(self.in_scale, dtype=float).reshape(W1.shape[1]))
        object.__setattr__(self, "out_offset", float(self.out_offset))
        object.__setattr__(self, "out_scale", float(self.out_scale))
        if np.any(self.in_scale == 0) or self.out_scale == 0:
            raise ValueError("normalization scales must be nonzero")
        if not np.all(np.isfinite(self.vector())):
            raise ValueError("parameters must be finite")

    @property
    def layer_sizes(self) -> tuple:
        return (self.W1.shape[1], self.W1.shape[0], 1)

    @property
    def hidden(self) -> int:
        return self.W1.shape[0]

    def vector(self) -> np.ndarray:
        return np.concatenate([self.W1.ravel(), self.b1, self.W2.ravel(), [self.b2]])

    def with_vector(self, w) -> "MLPParams":
        h, n_in = self.W1.shape
        i = h * n_in
        return MLPParams(w[:i].reshape(h, n_in), w[i:i + h], w[i + h:i + 2 * h], w[-1],
                         self.in_offset, self.in_scale, self.out_offset, self.out_scale, self.seed)

    def __call__(self, v, phi):
        return forward(self, v, phi)


def _hidden(params: MLPParams, Xn):
    return np.tanh(Xn @ params.W1.T + params.b1)


def forward(params: MLPParams, v, phi):
    """``beta_d`` for scalar or array inputs; scalars in, float out."""
    X = np.column_stack([np.ravel(v), np.ravel(phi)]).astype(float)
    Xn = (X - params.in_offset) / params.in_scale
    yn = _hidden(params, Xn) @ params.W2[0] + params.b2
    y = yn * params.out_scale + params.out_offset
    if np.ndim(v) == 0 and np.ndim(phi) == 0:
        return float(y[0])
    return y.reshape(np.broadcast(np.asarray(v), np.asarray(phi)).shape)


def init_params(h: int, X, y, seed: int = 0) -> MLPParams:
    """Random weights plus ``[-1, 1]`` normalization fitted to ``(X, y)``."""
    if h < 1:
        raise ValueError("need at least one hidden unit")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    lo, hi = X.min(axis=0), X.max(axis=0)
    in_scale = np.where(hi > lo, (hi - lo) / 2, 1.0)
    y_lo, y_hi = y.min(), y.max()
    out_scale = (y_hi - y_lo) / 2 if y_hi > y_lo else 1.0
    rng = np.random.default_rng(seed)
    n_in = X.shape[1]
    return MLPParams(rng.uniform(-1, 1, (h, n_in)), rng.uniform(-1, 1, h), rng.uniform(-1, 1, h) / h, 0.0,
                     (hi + lo) / 2, in_scale, (y_hi + y_lo) / 2, out_scale, seed)


def _residuals(params: MLPParams, X, y):
    Xn = (X - params.in_offset) / params.in_scale
    yn = (y - params.out_offset) / params.out_scale
    A = _hidden(params, Xn)
    return A @ params.W2[0] + params.b2 - yn, Xn, A


def _jacobian(params: MLPParams, Xn, A):
    w2 = params.W2[0]
    G = (1 - A**2) * w2
    n, h = A.shape
    dW1 = (G[:, :, None] * Xn[:, None, :]).reshape(n, -1)
    return np.hstack([dW1, G, A, np.ones((n, 1))])


def lm_step(J, e, lam: float) -> np.ndarray:
    """Solve ``(J^T J + lam I) dw = -J^T e``."""
    H = J.T @ J + lam * np.eye(J.shape[1])
    return np.linalg.solve(H, -J.T @ e)


def mse(params: MLPParams, X, y) -> float:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        return math.nan
    return float(np.mean((forward(params, X[:, 0], X[:, 1]) - y) ** 2))


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    split: np.ndarray
    seed: int
    fractions: tuple

    def part(self, name: str):
        m = self.split == name
        return self.X[m], self.y[m]

    def counts(self) -> dict:
        return {k: int(np.sum(self.split == k)) for k in (TRAIN, VALIDATION, TEST)}


def _largest_remainder(n: int, fractions) -> list[int]:
    raw = [f * n for f in fractions]
    counts = [math.floor(r + 1e-9) for r in raw]
    left = n - sum(counts)
    # ties go to the later part so (0.7, 0.15, 0.15) of 90 becomes 63/13/14
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), -i))
    for i in order[:left]:
        counts[i] += 1
    return counts


def split_dataset(samples, fractions=(0.70, 0.15, 0.15), seed: int = 0) -> Dataset:
    """Shuffle by ``seed`` and cut contiguous train/validation/test blocks.

    ``samples`` is either a sequence of ``((v, phi), beta)`` pairs or an
    ``(X, y)`` tuple of arrays.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1) > 1e-9:
        raise BadFractions(f"fractions must be three nonnegative numbers summing to 1, got {fractions}")
    if isinstance(samples, tuple) and len(samples) == 2 and np.ndim(samples[0]) == 2:
        X, y = np.asarray(samples[0], float), np.asarray(samples[1], float)
    else:
        X = np.array([s[0] for s in samples], dtype=float).reshape(-1, 2)
        y = np.array([s[1] for s in samples], dtype=float)
    n = len(y)
    counts = _largest_remainder(n, fractions)
    perm = np.random.default_rng(seed).permutation(n)
    split = np.empty(n, dtype=object)
    start = 0
    for name, c in zip((TRAIN, VALIDATION, TEST), counts):
        split[perm[start:start + c]] = name
        start += c
    return Dataset(X, y, split.astype(str), seed, fractions)


@dataclass
class TrainingHistory:
    train_mse: list = field(default_factory=list)
    val_mse: list = field(default_factory=list)
    lam: list = field(default_factory=list)
    best_epoch: int = 0
    stop_reason: str = ""


def _geodesic_correction(params, w, dw, e, J, H, X, y, h=0.1):
    # second directional derivative of the residuals along dw, by finite
    # differences; the correction bends the step along curved valleys
    e2 = _residuals(params.with_vector(w + h * dw), X, y)[0]
    rpp = 2.0 / h * ((e2 - e) / h - J @ dw)
    return -np.linalg.solve(H, J.T @ rpp)


def lm_train(dataset: Dataset, h: int = 10, max_epochs: int = 1000, lambda0: float = 1e-3, seed: int = 0,
             max_fail: int = 6, goal: float = 0.0, min_grad: float = 1e-12, geodesic: bool = True):
    """Levenberg-Marquardt training; returns ``(params, history)``.

    Accepted steps shrink the damping by 10, rejected ones grow it by 10.
    Training stops at ``max_epochs``, when the damping exceeds 1e10, when
    the train MSE reaches ``goal``, or after ``max_fail`` consecutive epochs
    without a new best validation MSE.  The parameters with the lowest
    validation MSE (or the last ones if there is no validation split) are
    returned.

    With ``geodesic`` each step gets a second-order correction (rejected,
    with more damping, when it exceeds 3/8 of the step).  Plain LM crawls
    along the flat valleys of near-linear fits; the correction does not.
    """
    X, y = dataset.part(TRAIN)
    if len(y) == 0:
        raise ValueError("training split is empty")
    Xv, yv = dataset.part(VALIDATION)
    has_val = len(yv) > 0
    params = init_params(h, X, y, seed)
    hist = TrainingHistory()
    lam = lambda0
    w = params.vector()
    e, Xn, A = _residuals(params, X, y)
    sse = float(e @ e)
    s2 = params.out_scale**2

    def record(p, epoch_sse):
        hist.train_mse.append(epoch_sse / len(y) * s2)
        hist.val_mse.append(mse(p, Xv, yv) if has_val else math.nan)
        hist.lam.append(lam)

    record(params, sse)
    best, best_val, fails = params, hist.val_mse[0], 0
    for epoch in range(1, max_epochs + 1):
        if hist.train_mse[-1] <= goal:
            hist.stop_reason = "goal"
            break
        J = _jacobian(params, Xn, A)
        grad = J.T @ e
        if np.linalg.norm(grad) * math.sqrt(s2) < min_grad:
            hist.stop_reason = "min_grad"
            break
        accepted = False
        solved_any = False
        while lam <= LAMBDA_MAX:
            H = J.T @ J + lam * np.eye(J.shape[1])
            try:
                dw = np.linalg.solve(H, -grad)
                solved_any = True
                if geodesic:
                    acc = _geodesic_correction(params, w, dw, e, J, H, X, y)
                    if 2 * np.linalg.norm(acc) > 0.75 * np.linalg.norm(dw):
                        lam *= 10
                        continue
                    dw = dw + 0.5 * acc
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            trial = params.with_vector(w + dw)
            e_t, Xn_t, A_t = _residuals(trial, X, y)
            sse_t = float(e_t @ e_t)
            if sse_t < sse:
                params, w, e, Xn, A, sse = trial, w + dw, e_t, Xn_t, A_t, sse_t
                lam *= 0.1
                accepted = True
                break
            lam *= 10
        if not solved_any:
            raise JacobianSingular("damped normal equations unsolvable up to lambda = 1e10")
        if not accepted:
            hist.stop_reason = "lambda_max"
            break
        record(params, sse)
        if has_val:
            if hist.val_mse[-1] < best_val:
                best, best_val, fails = params, hist.val_mse[-1], 0
                hist.best_epoch = epoch
            else:
                fails += 1
                if fails >= max_fail:
                    hist.stop_reason = "validation"
                    break
        else:
            best, hist.best_epoch = params, epoch
    else:
        hist.stop_reason = "max_epochs"
    if not has_val:
        best = params
        hist.best_epoch = len(hist.train_mse) - 1
    return best, hist


def beta_samples(params: RobotParams, v_grid=DEFAULT_V_GRID, phi_grid=DEFAULT_PHI_GRID) -> list:
    """Ground-truth ``((v, phi), beta_d)`` pairs from the steady roll balance."""
    return [((float(v), float(phi)), steady_roll_pendulum_angle(params, float(v), float(phi)))
            for v in v_grid for phi in phi_grid]


@dataclass
class BetaFit:
    params: MLPParams
    dataset: Dataset
    history: TrainingHistory

    def test_mse(self) -> float:
        return mse(self.params, *self.dataset.part(TEST))


def fit_beta_model(plant: RobotParams, v_grid=DEFAULT_V_GRID, phi_grid=DEFAULT_PHI_GRID, h: int = 10,
                   seed: int = 0, fractions=(0.70, 0.15, 0.15), max_epochs: int = 1000) -> BetaFit:
    data = split_dataset(beta_samples(plant, v_grid, phi_grid), fractions, seed)
    params, hist = lm_train(data, h=h, max_epochs=max_epochs, seed=seed)
    return BetaFit(params, data, hist)


def train_beta_model(plant: RobotParams, v_grid=DEFAULT_V_GRID, phi_grid=DEFAULT_PHI_GRID, h: int = 10,
                     seed: int = 0) -> MLPParams:
    return fit_beta_model(plant, v_grid, phi_grid, h, seed).params


def _to_doc(params: MLPParams) -> dict:
    return {
        "layer_sizes": list(params.layer_sizes),
        "W1": params.W1.ravel().tolist(),
        "b1": params.b1.tolist(),
        "W2": params.W2.ravel().tolist(),
        "b2": params.b2,
        "in_offset": params.in_offset.tolist(),
        "in_scale": params.in_scale.tolist(),
        "out_offset": params.out_offset,
        "out_scale": params.out_scale,
        "seed": params.seed,
    }


def save_model(params: MLPParams, path) -> None:
    """JSON with shortest round-trip float reprs, written atomically."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".json")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(_to_doc(params), fh, indent=1)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_model(path) -> MLPParams:
    with open(path) as fh:
        doc = json.load(fh)
    n_in, h, n_out = doc["layer_sizes"]
    if n_out != 1:
        raise ValueError("only single-output networks are supported")
    return MLPParams(np.array(doc["W1"]).reshape(h, n_in), doc["b1"], doc["W2"], doc["b2"],
                     doc["in_offset"], doc["in_scale"], doc["out_offset"], doc["out_scale"], doc.get("seed"))
