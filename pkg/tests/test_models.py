import json
import math

import numpy as np
import pytest

from fairgap.mitigation import MitigationConfig, combined_loss, combined_loss_grad_p
from fairgap.models import (
    DivergenceError,
    ModelSpec,
    ModelState,
    NumericOverflowError,
    TrainConfig,
    backward,
    dropout_mask,
    forward,
    init_params,
    sgd_step,
    state_from_dict,
    state_to_dict,
    train,
)

from oracles import central_diff, max_rel_error

BLR = ModelSpec(kind="blr")


def _frozen_masks(spec, state, n, seed):
    rng = np.random.default_rng(seed)
    return [dropout_mask((n, W.shape[0]), spec.dropout_rate, rng) for W in state.weights[:-1]]


KINK_MARGIN = 1e-3


def _kink_distance(spec, state, X, masks):
    """Smallest |pre-activation| of any hidden ReLU unit over the rows of X."""
    h, best = X, np.inf
    for i, (W, b) in enumerate(zip(state.weights[:-1], state.biases[:-1])):
        a = h @ W.T + b
        best = min(best, float(np.abs(a).min()))
        h = np.maximum(a, 0) * masks[i]
    return best


def model_gradient_error(spec, lam, seed=0, n=16, p=6, weighted=False, q=1, reduction="sum", return_redraws=False):
    """Max relative error of backprop against central differences of the full loss.

    Central differences are meaningless within a step of a ReLU kink, so an
    instance with a hidden pre-activation closer than ``KINK_MARGIN`` to zero
    is redrawn from the next seed.
    """
    for redraws in range(100):
        rng = np.random.default_rng([seed, redraws])
        X = rng.standard_normal((n, p))
        y = rng.integers(0, 2, n)
        y[:2] = [0, 1]
        z = rng.integers(0, 2, n)
        w = rng.uniform(0.5, 2.0, n)
        state = init_params(spec, p, seed=[seed, redraws, 1])
        # nonzero biases so every layer's bias gradient is exercised
        state = ModelState(state.weights, [rng.normal(0, 0.1, b.shape) for b in state.biases])
        masks = _frozen_masks(spec, state, n, [seed, redraws, 2])
        if _kink_distance(spec, state, X, masks) > KINK_MARGIN:
            break
    cfg = MitigationConfig(lam=lam, q=q, weighted=weighted, reduction=reduction)

    def loss_of(params, layer, which):
        ws = [a.copy() for a in state.weights]
        bs = [a.copy() for a in state.biases]
        (ws if which == "w" else bs)[layer] = params
        probs, _ = forward(ModelState(ws, bs), spec, X, train=True, masks=masks)
        return combined_loss(probs, y, z, cfg, w)

    probs, cache = forward(state, spec, X, train=True, masks=masks)
    grad = backward(state, spec, cache, combined_loss_grad_p(probs, y, z, cfg, w))
    worst = 0.0
    for i in range(len(state.weights)):
        num_w = central_diff(lambda a: loss_of(a, i, "w"), state.weights[i], h=1e-5)
        num_b = central_diff(lambda a: loss_of(a, i, "b"), state.biases[i], h=1e-5)
        worst = max(worst, max_rel_error(grad.weights[i], num_w), max_rel_error(grad.biases[i], num_b))
    return (worst, redraws) if return_redraws else worst


def test_spec_validation():
    with pytest.raises(ValueError):
        ModelSpec(kind="mlp", hidden_layers=0)
    with pytest.raises(ValueError):
        ModelSpec(dropout_rate=1.0)
    assert ModelSpec().hidden_layers == 3 and ModelSpec().hidden_width == 200
    assert ModelSpec().dropout_rate == 0.01


def test_init_shapes():
    s = init_params(BLR, 5)
    assert [W.shape for W in s.weights] == [(1, 5)]
    assert [b.shape for b in s.biases] == [(1,)]
    m = init_params(ModelSpec(), 40)
    assert [W.shape for W in m.weights] == [(200, 40), (200, 200), (200, 200), (1, 200)]
    assert all(np.all(b == 0) for b in m.biases)


def test_xavier_bound():
    bound = math.sqrt(6 / 400)
    assert bound == pytest.approx(0.1225, abs=1e-4)
    W = init_params(ModelSpec(), 200).weights[1]
    assert np.abs(W).max() <= bound
    assert np.abs(W).max() > 0.95 * bound


def test_he_normal_scale():
    W = init_params(ModelSpec(init="he_normal", hidden_width=400), 100).weights[1]
    assert W.std() == pytest.approx(math.sqrt(2 / 400), rel=0.02)


def test_forward_blr_zero_params():
    s = ModelState([np.zeros((1, 3))], [np.zeros(1)])
    p, _ = forward(s, BLR, np.random.default_rng(0).standard_normal((7, 3)))
    np.testing.assert_array_equal(p, 0.5)


def test_forward_blr_unit_coefficient():
    s = ModelState([np.array([[1.0, 0.0, 0.0]])], [np.zeros(1)])
    p, _ = forward(s, BLR, np.array([[1.0, 4.0, -2.0]]))
    assert p[0] == pytest.approx(1 / (1 + math.exp(-1)))
    assert p[0] == pytest.approx(0.7311, abs=1e-4)


def test_forward_probabilities_strictly_inside_unit_interval():
    s = ModelState([np.array([[200.0]])], [np.zeros(1)])
    p, _ = forward(s, BLR, np.array([[-5.0], [0.0], [5.0]]))
    assert np.all((p > 0) & (p < 1))


def test_dropout_zero_train_equals_eval():
    spec = ModelSpec(hidden_layers=2, hidden_width=8, dropout_rate=0.0)
    s = init_params(spec, 4, seed=3)
    X = np.random.default_rng(1).standard_normal((10, 4))
    p_train, _ = forward(s, spec, X, rng=np.random.default_rng(0), train=True)
    p_eval, _ = forward(s, spec, X)
    np.testing.assert_array_equal(p_train, p_eval)


def test_eval_is_mask_free_and_repeatable():
    spec = ModelSpec(hidden_layers=2, hidden_width=16, dropout_rate=0.5)
    s = init_params(spec, 4, seed=3)
    X = np.random.default_rng(1).standard_normal((50, 4))
    a, _ = forward(s, spec, X)
    b, _ = forward(s, spec, X)
    assert a.tobytes() == b.tobytes()
    t, _ = forward(s, spec, X, rng=np.random.default_rng(0), train=True)
    assert not np.array_equal(a, t)


def test_dropout_mask_statistics():
    rng = np.random.default_rng(0)
    for rate in (0.01, 0.05, 0.3):
        m = dropout_mask((2000, 100), rate, rng)
        assert set(np.unique(m)) == {0.0, 1 / (1 - rate)}
        assert (m == 0).mean() == pytest.approx(rate, rel=0.05)
        assert m.mean() == pytest.approx(1.0, abs=0.01)


def test_forward_rejects_wrong_width():
    with pytest.raises(ValueError):
        forward(init_params(BLR, 3), BLR, np.zeros((2, 4)))


def test_forward_overflow():
    s = ModelState([np.array([[1e308, 1e308]])], [np.zeros(1)])
    with pytest.raises(NumericOverflowError), np.errstate(all="ignore"):
        forward(s, BLR, np.array([[10.0, 10.0]]))


def test_backward_zero_upstream():
    spec = ModelSpec(hidden_layers=2, hidden_width=4)
    s = init_params(spec, 3)
    p, cache = forward(s, spec, np.ones((5, 3)), rng=np.random.default_rng(0), train=True)
    g = backward(s, spec, cache, np.zeros(5))
    assert all(np.all(a == 0) for a in g.flat_parts())


def test_blr_closed_form_gradient():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((40, 5))
    y = rng.integers(0, 2, 40)
    s = ModelState([rng.standard_normal((1, 5))], [np.array([0.3])])
    p, cache = forward(s, BLR, X)
    cfg = MitigationConfig(lam=0.0, reduction="mean")
    g = backward(s, BLR, cache, combined_loss_grad_p(p, y, np.zeros(40), cfg))
    np.testing.assert_allclose(g.weights[0][0], X.T @ (p - y) / 40, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(g.biases[0][0], (p - y).mean(), rtol=1e-10, atol=1e-12)


def test_two_layer_width4_finite_differences():
    assert model_gradient_error(ModelSpec(hidden_layers=2, hidden_width=4, dropout_rate=0.3), lam=0.0) < 1e-4


@pytest.mark.parametrize("lam", [0.0, 0.5])
@pytest.mark.parametrize(
    "spec",
    [BLR] + [ModelSpec(hidden_layers=k, hidden_width=4, dropout_rate=0.2) for k in (2, 3, 4)],
    ids=["blr", "mlp2", "mlp3", "mlp4"],
)
def test_gradient_check_architectures(spec, lam):
    assert model_gradient_error(spec, lam, seed=7) < 1e-4


def test_sgd_step_is_pure():
    s = init_params(BLR, 2, seed=0)
    g = ModelState([np.ones((1, 2))], [np.ones(1)])
    out = sgd_step(s, g, 0.5)
    np.testing.assert_allclose(out.weights[0], s.weights[0] - 0.5)
    assert not np.array_equal(out.weights[0], s.weights[0])


def _toy(n=2000, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, 2))
    y = (X[:, 0] + X[:, 1] > 0).astype(int)
    keep = np.abs(X[:, 0] + X[:, 1]) > 0.2
    X, y = X[keep], y[keep]
    return X, y, (X[:, 0] > 0).astype(int)


def test_zero_step_keeps_initial_state():
    X, y, z = _toy(500)
    res = train(X, y, z, BLR, TrainConfig(step_size=0.0, epochs=3, dtype="float64"))
    assert res.state.array_equal(res.initial_state)


def test_separable_toy_reaches_high_accuracy():
    X, y, z = _toy()
    res = train(X, y, z, BLR, TrainConfig(epochs=50, batch_size=100, dtype="float64"))
    p, _ = forward(res.state, BLR, X)
    assert ((p >= 0.5) == y).mean() >= 0.99


def test_trace_contract_and_best_epoch():
    X, y, z = _toy(600)
    res = train(X, y, z, BLR, TrainConfig(epochs=7, batch_size=64), MitigationConfig(lam=0.3))
    assert [r["epoch"] for r in res.trace] == list(range(1, 8))
    totals = [r["total_loss"] for r in res.trace]
    assert res.best_loss == min(totals)
    assert res.trace[res.best_epoch - 1]["total_loss"] == res.best_loss
    for r in res.trace:
        assert r["total_loss"] == pytest.approx(r["primary_loss"] + r["fairness_loss"])


def test_select_on_primary():
    X, y, z = _toy(600)
    res = train(X, y, z, BLR, TrainConfig(epochs=5, batch_size=64, select_on="primary"), MitigationConfig(lam=0.6))
    assert res.best_loss == min(r["primary_loss"] for r in res.trace)


def test_partial_batch_is_used():
    # 10 rows with batch 4 -> batches of 4, 4, 2; a dropped tail would leave row 9 unseen
    X = np.zeros((10, 1))
    X[9, 0] = 1.0
    y = np.zeros(10, int)
    y[9] = 1
    res = train(X, y, y, BLR, TrainConfig(epochs=1, batch_size=4, step_size=1.0, dtype="float64"))
    assert res.state.weights[0][0, 0] != res.initial_state.weights[0][0, 0]


def test_training_is_deterministic():
    X, y, z = _toy(400)
    spec = ModelSpec(hidden_layers=2, hidden_width=8)
    a = train(X, y, z, spec, TrainConfig(epochs=3, batch_size=50, seed=5), MitigationConfig(lam=0.2))
    b = train(X, y, z, spec, TrainConfig(epochs=3, batch_size=50, seed=5), MitigationConfig(lam=0.2))
    assert a.state.array_equal(b.state)
    c = train(X, y, z, spec, TrainConfig(epochs=3, batch_size=50, seed=6), MitigationConfig(lam=0.2))
    assert not a.state.array_equal(c.state)


def test_divergence_names_epoch():
    X, y, z = _toy(200)
    with pytest.raises(DivergenceError) as info, np.errstate(all="ignore"):
        train(X * 1e30, y, z, ModelSpec(hidden_layers=1, hidden_width=4), TrainConfig(epochs=3, step_size=1e30, dtype="float64"))
    assert 1 <= info.value.epoch <= 3
    assert f"epoch {info.value.epoch}" in str(info.value)


def test_validation_columns_in_trace():
    X, y, z = _toy(300)
    res = train(X, y, z, BLR, TrainConfig(epochs=2), MitigationConfig(lam=0.5), validation=(X[:50], y[:50], z[:50], None))
    assert {"test_primary_loss", "test_fairness_loss", "test_total_loss"} <= set(res.trace[0])


def test_state_json_round_trip():
    s = init_params(ModelSpec(hidden_layers=2, hidden_width=5), 3, seed=1)
    doc = json.loads(json.dumps(state_to_dict(s)))
    back = state_from_dict(doc)
    assert back.array_equal(s)
    with pytest.raises(ValueError):
        state_from_dict({**doc, "format": "other/9"})
