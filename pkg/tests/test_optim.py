import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vehicle_color.errors import ConfigError, NonFiniteError, ShapeError
from vehicle_color.optim import OptimizerState, TrainConfig, lr_at, sgd_step


def one_param(w, g, v=0.0):
    params = {"w": np.array([w], dtype=np.float64)}
    grads = {"w": np.array([g], dtype=np.float64)}
    state = OptimizerState({"w": np.array([v], dtype=np.float64)})
    return params, grads, state


def test_defaults():
    cfg = TrainConfig()
    assert (cfg.batch_size, cfg.momentum, cfg.weight_decay, cfg.base_lr) == (115, 0.9, 0.0005, 0.01)
    assert (cfg.lr_step, cfg.lr_factor, cfg.max_iter, cfg.dropout_rate) == (50_000, 0.1, 200_000, 0.5)


@pytest.mark.parametrize(
    "it,lr",
    [(0, 0.01), (49_999, 0.01), (50_000, 0.001), (100_000, 0.0001), (150_000, 1e-5), (199_999, 1e-5)],
)
def test_lr_schedule_exact(it, lr):
    assert lr_at(it, TrainConfig()) == lr


def test_lr_rejects_negative():
    with pytest.raises(ValueError):
        lr_at(-1, TrainConfig())


def test_plain_gradient_descent():
    cfg = TrainConfig(momentum=0.0, weight_decay=0.0)
    params, grads, state = one_param(1.0, 0.5)
    sgd_step(state, params, grads, cfg, lr=0.01)
    assert params["w"][0] == pytest.approx(0.995, abs=1e-15)
    assert state.iteration == 1


def test_momentum_and_decay_hand_value():
    # v' = 0.9 * 0 - 0.01 * (0.5 + 0.0005 * 1) = -0.005005; w' = 1 + v'.
    params, grads, state = one_param(1.0, 0.5)
    sgd_step(state, params, grads, TrainConfig(), lr=0.01)
    assert state.velocity["w"][0] == pytest.approx(-0.005005, abs=1e-15)
    assert params["w"][0] == pytest.approx(0.994995, abs=1e-15)


def test_velocity_decays_geometrically():
    cfg = TrainConfig(weight_decay=0.0)
    params, grads, state = one_param(1.0, 0.5)
    sgd_step(state, params, grads, cfg, lr=0.01)
    v0 = state.velocity["w"][0]
    grads["w"][:] = 0
    for k in (1, 2):
        sgd_step(state, params, grads, cfg, lr=0.01)
        assert state.velocity["w"][0] == pytest.approx(v0 * 0.9**k, rel=1e-14)


@settings(max_examples=40, deadline=None)
@given(
    st.lists(st.floats(-10, 10), min_size=1, max_size=6),
    st.floats(1e-4, 1.0),
    st.floats(0.0, 0.01),
)
def test_weight_decay_alone_shrinks_weights(ws, lr, decay):
    w = np.array(ws)
    params = {"w": w.copy()}
    cfg = TrainConfig(momentum=0.0, weight_decay=decay)
    sgd_step(OptimizerState(), params, {"w": np.zeros_like(w)}, cfg, lr=lr)
    np.testing.assert_allclose(params["w"], w * (1 - lr * decay), rtol=1e-12, atol=1e-300)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3), st.floats(0.0, 0.99))
def test_velocity_norm_contracts_by_momentum(vs, momentum):
    v = np.array(vs)
    params = {"w": np.ones(3)}
    state = OptimizerState({"w": v.copy()})
    cfg = TrainConfig(momentum=momentum, weight_decay=0.0)
    sgd_step(state, params, {"w": np.zeros(3)}, cfg, lr=0.1)
    assert np.linalg.norm(state.velocity["w"]) == pytest.approx(momentum * np.linalg.norm(v), rel=1e-12, abs=1e-12)


def test_step_uses_schedule_and_counts():
    cfg = TrainConfig(momentum=0.0, weight_decay=0.0, lr_step=2, base_lr=1.0)
    params, grads, state = one_param(0.0, 1.0)
    for _ in range(3):
        sgd_step(state, params, grads, cfg)
    assert state.iteration == 3
    assert params["w"][0] == pytest.approx(-2.1)


def test_step_validates_before_mutating():
    params = {"a": np.ones(2), "b": np.ones(3)}
    grads = {"a": np.ones(2), "b": np.array([1.0, np.inf, 0.0])}
    state = OptimizerState()
    with pytest.raises(NonFiniteError, match="b"):
        sgd_step(state, params, grads, TrainConfig())
    assert (params["a"] == 1).all() and state.iteration == 0
    with pytest.raises(ShapeError):
        sgd_step(state, params, {"a": np.ones(3), "b": np.ones(3)}, TrainConfig())


def test_config_text_round_trip(tmp_path):
    cfg = TrainConfig(batch_size=7, color_space="hsv", network="tiny", seed=3)
    assert TrainConfig.from_text(cfg.to_text()) == cfg
    path = tmp_path / "c.cfg"
    cfg.save(path)
    assert TrainConfig.load(path) == cfg
    assert cfg.config_hash() == TrainConfig.load(path).config_hash()
    assert cfg.config_hash() != TrainConfig().config_hash()


def test_config_comments_and_underscores():
    cfg = TrainConfig.from_text("# note\nmax_iter = 10_000  # short\n\nlrn_override = true\n")
    assert cfg.max_iter == 10_000 and cfg.lrn_override


@pytest.mark.parametrize(
    "text",
    [
        "batch_sise = 3",
        "seed = 1\nseed = 2",
        "momentum = fast",
        "just words",
        "batch_size = 0",
        "momentum = 1.0",
        "base_lr = 0",
        "dropout_rate = 1",
        "color_space = yuv",
        "network = huge",
        "lrn_alpha = 0.001",
    ],
)
def test_config_errors(text):
    with pytest.raises(ConfigError):
        TrainConfig.from_text(text)


def test_lrn_override():
    cfg = TrainConfig(lrn_override=True, lrn_alpha=0.001)
    assert cfg.network_spec().lrn.alpha == 0.001
    assert TrainConfig().network_spec().lrn.alpha == 1e-4
