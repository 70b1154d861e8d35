import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ndtsim.model import (
    PredictorConfig,
    SampleSet,
    WindowSpec,
    build_samples,
    dataset_loss,
    evaluate,
    init_params,
    local_update,
    loss_gradient,
    predict,
    quadratic_loss,
)
from oracles import mlp_forward

LIN = PredictorConfig(kind="linear")
MLP = PredictorConfig(kind="mlp", hidden=(4,))


def test_window_indexing_recent_only():
    s = build_samples([1, 2, 3, 4], WindowSpec(a=1, b=0, rho=1))
    assert s.inputs.tolist() == [[1], [2], [3]]
    assert s.targets.tolist() == [2, 3, 4]


def test_window_indexing_with_cyclic_lag():
    s = build_samples([1, 2, 3, 4, 5], WindowSpec(a=1, b=1, rho=2))
    assert s.inputs[0].tolist() == [2, 1]
    assert s.targets[0] == 3


def test_constant_series_windows():
    s = build_samples([7.0] * 30, WindowSpec(a=2, b=1, rho=5))
    assert np.all(s.inputs == 7.0) and np.all(s.targets == 7.0)


def test_short_series_rejected():
    with pytest.raises(ValueError, match="too short"):
        build_samples([1, 2, 3], WindowSpec(a=1, b=1, rho=3))


@given(
    a=st.integers(0, 4), b=st.integers(0, 3), rho=st.integers(1, 6), extra=st.integers(1, 40)
)
def test_sample_count(a, b, rho, extra):
    if a + b == 0:
        return
    w = WindowSpec(a, b, rho)
    L = a + rho * b + extra
    assert len(build_samples(np.arange(L, dtype=float), w)) == L - max(a, rho * b)


def test_linear_predict_cases():
    assert predict(np.zeros(3), LIN, [4.0, -2.0]) == 0.0
    assert predict(np.array([1.0, 0.0, 0.0]), LIN, [3.0, 5.0]) == 3.0


def test_mlp_forward_matches_hand_rolled():
    theta = init_params(MLP, 2, seed=7)
    assert theta.size == MLP.n_params(2) == 2 * 4 + 4 + 4 + 1
    expected = mlp_forward(theta, [2, 4, 1], [1.0, 1.0])
    assert predict(theta, MLP, [1.0, 1.0]) == pytest.approx(expected, abs=1e-14)


def test_wrong_dimension_rejected():
    with pytest.raises(ValueError, match="expected"):
        predict(np.zeros(5), LIN, [1.0, 2.0])


@pytest.mark.parametrize("pred,target,loss", [(2, 2, 0), (3, 1, 4), (-1, 1, 4)])
def test_quadratic_loss(pred, target, loss):
    assert quadratic_loss(pred, target) == loss


def test_gradient_descent_hand_step():
    cfg = PredictorConfig(lr=0.1, batch=1, local_epochs=1)
    s = SampleSet(np.array([[1.0]]), np.array([1.0]))
    out = local_update(np.zeros(2), cfg, s, seed=0)
    assert out == pytest.approx([0.2, 0.2], abs=1e-15)


def test_zero_lr_and_perfect_fit_unchanged():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(20, 3))
    theta = np.array([0.5, -1.0, 2.0, 0.3])
    s = SampleSet(X, X @ theta[:-1] + theta[-1])
    assert np.array_equal(local_update(theta, PredictorConfig(lr=0.0), s, 1), theta)
    assert local_update(theta, PredictorConfig(lr=0.05, batch=4), s, 1) == pytest.approx(theta, abs=1e-12)


def test_empty_samples_rejected():
    with pytest.raises(ValueError):
        local_update(np.zeros(2), LIN, SampleSet(np.zeros((0, 1)), np.zeros(0)), 0)


@pytest.mark.parametrize("cfg", [LIN, PredictorConfig(kind="mlp", hidden=(5, 3))], ids=["linear", "mlp"])
def test_gradient_check(cfg):
    rng = np.random.default_rng(123)
    n_feat = 4
    worst = 0.0
    for _ in range(100):
        theta = rng.normal(scale=0.7, size=cfg.n_params(n_feat))
        X = rng.normal(size=(rng.integers(1, 9), n_feat))
        y = rng.normal(size=len(X))
        g = loss_gradient(theta, cfg, X, y)
        fd = np.empty_like(theta)
        h = 1e-6
        s = SampleSet(X, y)
        for j in range(theta.size):
            e = np.zeros_like(theta)
            e[j] = h
            fd[j] = (dataset_loss(theta + e, cfg, s) - dataset_loss(theta - e, cfg, s)) / (2 * h)
        rel = np.linalg.norm(g - fd) / max(np.linalg.norm(g) + np.linalg.norm(fd), 1e-12)
        worst = max(worst, rel)
    assert worst < 1e-5, worst


def test_local_update_decreases_loss():
    rng = np.random.default_rng(5)
    cfg = PredictorConfig(lr=0.01, batch=16)
    decreased = 0
    for seed in range(20):
        X = rng.normal(size=(64, 3))
        w = rng.normal(size=3)
        s = SampleSet(X, X @ w + 0.1 * rng.normal(size=64))
        theta = rng.normal(size=4)
        before = dataset_loss(theta, cfg, s)
        after = dataset_loss(local_update(theta, cfg, s, seed), cfg, s)
        decreased += after < before
    assert decreased == 20


def test_local_update_deterministic():
    rng = np.random.default_rng(1)
    s = SampleSet(rng.normal(size=(50, 2)), rng.normal(size=50))
    cfg = PredictorConfig(lr=0.01, batch=8, local_epochs=2)
    a = local_update(np.zeros(3), cfg, s, 42)
    assert np.array_equal(a, local_update(np.zeros(3), cfg, s, 42))
    assert not np.array_equal(a, local_update(np.zeros(3), cfg, s, 43))


def test_evaluate_cases():
    X = np.array([[0.0], [0.0]])
    assert evaluate(np.zeros(2), LIN, SampleSet(X, np.zeros(2))) == (0.0, 0.0)
    assert evaluate(np.zeros(2), LIN, SampleSet(X, np.array([1.0, -3.0]))) == (2.0, 5.0)
    assert evaluate(np.zeros(2), LIN, SampleSet(X, np.full(2, 1e6)), cap=100) == (100.0, 100.0)
    assert evaluate(np.array([np.inf, 0.0]), LIN, SampleSet(np.ones((2, 1)), np.zeros(2))) == (100.0, 100.0)


@settings(max_examples=50)
@given(st.lists(st.floats(-1e4, 1e4), min_size=1, max_size=20), st.floats(0.1, 1e3), st.floats(0.0, 1e3))
def test_evaluate_monotone_in_cap(errs, cap, extra):
    s = SampleSet(np.zeros((len(errs), 1)), np.asarray(errs))
    lo = evaluate(np.zeros(2), LIN, s, cap)
    hi = evaluate(np.zeros(2), LIN, s, cap + extra)
    assert hi[0] >= lo[0] and hi[1] >= lo[1]
    assert lo[0] <= cap and lo[1] <= cap


def test_init_params():
    assert np.array_equal(init_params(LIN, 4), np.zeros(5))
    m = init_params(MLP, 3, seed=2)
    assert np.all(np.abs(m) <= 0.1)
    assert np.array_equal(m, init_params(MLP, 3, seed=2))
