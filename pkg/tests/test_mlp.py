import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from spheremotion.dynamics import RobotParams
from spheremotion.mlp import (
    TEST,
    TRAIN,
    VALIDATION,
    BadFractions,
    JacobianSingular,
    MLPParams,
    beta_samples,
    fit_beta_model,
    forward,
    lm_step,
    lm_train,
    load_model,
    mse,
    save_model,
    split_dataset,
)

P = RobotParams()


@pytest.fixture(scope="module")
def beta_fit():
    return fit_beta_model(P)


def line_dataset(y):
    X = np.column_stack([np.linspace(0, 1, len(y)), np.zeros(len(y))])
    return split_dataset((X, np.asarray(y, dtype=float)), (1.0, 0.0, 0.0))


def test_zero_network():
    p = MLPParams(np.zeros((4, 2)), np.zeros(4), np.zeros(4), 0.0)
    assert forward(p, 0.7, -0.2) == 0.0
    assert not forward(p, np.linspace(-3, 3, 7), np.ones(7)).any()


def test_hand_evaluated_network():
    p = MLPParams([[1.0, 0.0]], [0.0], [[2.0]], 0.0)
    for phi in (-5.0, 0.0, 0.3):
        assert forward(p, 0.5, phi) == pytest.approx(2 * math.tanh(0.5), rel=1e-15)
    assert forward(p, 0.5, 0.0) == pytest.approx(0.9242, abs=5e-5)


@given(hnp.arrays(float, (3, 2), elements=st.floats(-3, 3)), hnp.arrays(float, 3, elements=st.floats(-3, 3)),
       hnp.arrays(float, 3, elements=st.floats(-3, 3)), st.floats(-3, 3), st.floats(0.1, 5), st.floats(-2, 2),
       st.floats(-1e3, 1e3), st.floats(-1e3, 1e3))
def test_output_bounded(W1, b1, W2, b2, s, o, v, phi):
    p = MLPParams(W1, b1, W2, b2, out_scale=s, out_offset=o)
    bound = abs(o) + s * (np.abs(W2).sum() + abs(b2))
    assert abs(forward(p, v, phi)) <= bound + 1e-12


def test_invalid_normalization():
    with pytest.raises(ValueError):
        MLPParams([[1.0, 0.0]], [0.0], [[1.0]], 0.0, in_scale=[0.0, 1.0])


def test_fits_a_line():
    params, hist = lm_train(line_dataset(2 * np.linspace(0, 1, 10)), h=2, max_epochs=200)
    assert len(hist.train_mse) - 1 <= 200
    assert hist.train_mse[-1] < 1e-10


def test_constant_targets():
    data = line_dataset(np.full(10, 0.3))
    params, hist = lm_train(data, h=3, max_epochs=200)
    assert mse(params, *data.part(TRAIN)) < 1e-20


def test_training_is_deterministic():
    data = split_dataset(beta_samples(P, np.linspace(0, 1, 4), np.linspace(-0.2, 0.2, 5)), seed=2)
    a, ha = lm_train(data, h=4, max_epochs=30, seed=5)
    b, hb = lm_train(data, h=4, max_epochs=30, seed=5)
    assert a.vector().tobytes() == b.vector().tobytes()
    assert ha.train_mse == hb.train_mse and ha.lam == hb.lam


def test_damping_schedule():
    data = split_dataset(beta_samples(P, np.linspace(0, 1, 4), np.linspace(-0.2, 0.2, 5)), seed=2)
    _, hist = lm_train(data, h=4, max_epochs=40, lambda0=1e-3)
    steps = np.log10(np.array(hist.lam[1:]) / np.array(hist.lam[:-1]))
    # each accepted epoch: some x10 rejections, then one /10
    np.testing.assert_allclose(steps, np.round(steps), atol=1e-9)
    assert np.all(np.round(steps) >= -1)
    assert all(b <= a for a, b in zip(hist.train_mse, hist.train_mse[1:]))


def test_early_stopping_returns_best_validation(beta_fit):
    h = beta_fit.history
    best = min(h.val_mse)
    assert mse(beta_fit.params, *beta_fit.dataset.part(VALIDATION)) <= best
    assert h.val_mse[h.best_epoch] == best


def test_large_damping_is_gradient_descent():
    rng = np.random.default_rng(0)
    J, e = rng.standard_normal((30, 8)), rng.standard_normal(30)
    dw, g = lm_step(J, e, 1e8), -J.T @ e
    angle = math.degrees(math.acos(dw @ g / (np.linalg.norm(dw) * np.linalg.norm(g))))
    assert angle < 1.0


def test_singular_normal_equations(monkeypatch):
    def broken(*_a, **_k):
        raise np.linalg.LinAlgError("singular")

    monkeypatch.setattr(np.linalg, "solve", broken)
    with pytest.raises(JacobianSingular):
        lm_train(line_dataset(np.linspace(0, 1, 5)), h=2, max_epochs=5)


def test_empty_training_split():
    data = line_dataset(np.linspace(0, 1, 5))
    data.split[:] = TEST
    with pytest.raises(ValueError):
        lm_train(data, h=2)


def test_largest_remainder_split():
    samples = [((float(i), 0.0), 0.0) for i in range(90)]
    d = split_dataset(samples, (0.70, 0.15, 0.15), seed=1)
    assert d.counts() == {TRAIN: 63, VALIDATION: 13, TEST: 14}
    assert split_dataset(samples, (1, 0, 0)).counts() == {TRAIN: 90, VALIDATION: 0, TEST: 0}
    assert np.array_equal(split_dataset(samples, seed=9).split, split_dataset(samples, seed=9).split)
    assert not np.array_equal(split_dataset(samples, seed=9).split, split_dataset(samples, seed=10).split)


@given(st.integers(1, 300), st.floats(0.05, 0.9), st.floats(0.05, 0.5))
def test_split_sizes_within_one_sample(n, a, b):
    c = 1.0 - a - b
    if c <= 0:
        return
    d = split_dataset((np.zeros((n, 2)), np.zeros(n)), (a, b, c))
    counts = d.counts()
    assert sum(counts.values()) == n
    for name, f in zip((TRAIN, VALIDATION, TEST), (a, b, c)):
        assert abs(counts[name] - f * n) < 1


@pytest.mark.parametrize("fractions", [(0.7, 0.15, 0.2), (0.5, 0.5), (1.2, -0.1, -0.1)])
def test_bad_fractions(fractions):
    with pytest.raises(BadFractions):
        split_dataset([((0.0, 0.0), 0.0)], fractions)


def test_ground_truth_symmetries():
    data = dict(beta_samples(P))
    for (v, phi), beta in data.items():
        if v == 0:
            assert beta == 0.0
        assert data[(v, -phi)] == pytest.approx(-beta, abs=1e-14)


def test_ground_truth_balances_the_turn():
    for (v, phi), beta in beta_samples(P, [0.5, 1.0], [0.1, -0.2]):
        assert P.m_p * P.g * P.l * math.sin(beta) == pytest.approx(P.total_mass() * v * v * math.tan(phi),
                                                                   rel=1e-12)


def test_beta_model_accuracy(beta_fit):
    assert beta_fit.dataset.counts() == {TRAIN: 63, VALIDATION: 13, TEST: 14}
    assert beta_fit.test_mse() < 1e-6


def test_trained_network_mirror_symmetry(beta_fit):
    v, phi = np.meshgrid(np.linspace(0, 1, 9), np.linspace(-0.2618, 0.2618, 10))
    f = beta_fit.params
    assert np.max(np.abs(f(v, phi) + f(v, -phi))) < 1e-3


def test_model_file_round_trip(tmp_path, beta_fit):
    path = tmp_path / "model.json"
    save_model(beta_fit.params, path)
    back = load_model(path)
    assert back.vector().tobytes() == beta_fit.params.vector().tobytes()
    for name in ("in_offset", "in_scale"):
        assert np.array_equal(getattr(back, name), getattr(beta_fit.params, name))
    assert (back.out_offset, back.out_scale, back.seed) == (beta_fit.params.out_offset, beta_fit.params.out_scale,
                                                          beta_fit.params.seed)
    assert [p.name for p in tmp_path.iterdir()] == ["model.json"]
