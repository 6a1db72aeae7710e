import numpy as np
import pytest

from fermech.backbone import (
    BackboneConfig,
    BackboneState,
    backward,
    forward,
    gap,
    gap_grad,
    init_backbone,
    load_checkpoint,
    save_checkpoint,
    sgd_step,
)
from fermech.errors import ConfigError, ShapeError, TrainingError
from fermech.losses import LossConfig, mixed_loss, mixed_loss_grad
from fermech.numerics import finite_diff_grad, max_rel_error, softmax

from conftest import GRAD_POINTS, GRAD_TOL

TINY = BackboneConfig(input_shape=(8,), mid_channels=4, mid_spatial=(2, 2), high_dim=8, seed=3)


def _flatten(params):
    names = sorted(params)
    return names, np.concatenate([params[n].ravel() for n in names])


def _unflatten(names, shapes, theta):
    out, k = {}, 0
    for n in names:
        size = int(np.prod(shapes[n]))
        out[n] = theta[k:k + size].reshape(shapes[n])
        k += size
    return out


def test_zero_everything_gives_uniform_scores():
    state = init_backbone(TINY)
    zero = BackboneState({k: np.zeros_like(v) for k, v in state.params.items()})
    taps = forward(zero, np.zeros(8), TINY)
    np.testing.assert_allclose(softmax(taps.logits), np.full(6, 1 / 6), atol=1e-15)


def test_forward_deterministic():
    cfg = BackboneConfig(input_shape=(8,), mid_channels=4, mid_spatial=(2, 2), high_dim=8, seed=42)
    x = np.linspace(-1, 1, 8)
    a = forward(init_backbone(cfg), x, cfg)
    b = forward(init_backbone(cfg), x, cfg)
    for name in ("mid", "high", "logits"):
        assert np.array_equal(getattr(a, name), getattr(b, name))


def test_tap_shapes():
    taps = forward(init_backbone(TINY), np.ones((5, 8)), TINY)
    assert taps.mid.shape == (5, 4, 2, 2)
    assert taps.high.shape == (5, 8)
    assert taps.logits.shape == (5, 6)


def test_layer_order(rng):
    state = init_backbone(TINY)
    x = rng.normal(size=(4, 8))
    base = forward(state, x, TINY)
    bumped = dict(state.params)
    bumped["w_mid"] = state.params["w_mid"] + 0.1 * rng.normal(size=state.params["w_mid"].shape)
    after = forward(BackboneState(bumped), x, TINY)
    # the mid tap comes strictly before w_mid
    assert np.array_equal(after.mid, base.mid)
    assert not np.array_equal(after.logits, base.logits)
    bumped = dict(state.params)
    bumped["w_in"] = state.params["w_in"] + 0.1
    after = forward(BackboneState(bumped), x, TINY)
    assert not np.array_equal(after.mid, base.mid)
    assert not np.array_equal(after.logits, base.logits)
    assert np.array_equal(after.cache["x"], base.cache["x"])


def test_payload_shape_mismatch():
    with pytest.raises(ShapeError):
        forward(init_backbone(TINY), np.ones(7), TINY)


def test_image_input():
    cfg = BackboneConfig(input_kind="image", input_shape=(6, 6, 3), mid_channels=2, mid_spatial=(3, 3), high_dim=4)
    taps = forward(init_backbone(cfg), np.ones((2, 6, 6, 3)), cfg)
    assert taps.mid.shape == (2, 2, 3, 3)


def test_config_validation():
    with pytest.raises(ConfigError):
        BackboneConfig(num_classes=5)
    with pytest.raises(ConfigError):
        BackboneConfig(mid_channels=0)
    with pytest.raises(ConfigError):
        BackboneConfig(input_kind="image", input_shape=(8,))


def test_gap_examples():
    assert gap(np.full((3, 2, 2), 1.5)).tolist() == [1.5] * 3
    m = np.array([[[7.0]], [[-2.0]]])
    assert gap(m).tolist() == [7.0, -2.0]
    assert gap(np.array([[[1.0, 2.0], [3.0, 4.0]]])).tolist() == [2.5]


def test_gap_grad_matches_fd(rng):
    r = rng.normal(size=3)
    x = rng.normal(size=(3, 2, 4))
    fd = finite_diff_grad(lambda m: float(gap(m) @ r), x)
    assert max_rel_error(gap_grad(r, (2, 4)), fd) <= GRAD_TOL


def _end_to_end(cfg, x, y, r_mid, r_high, loss_cfg):
    shapes = {k: v.shape for k, v in init_backbone(cfg).params.items()}
    names = sorted(shapes)

    def value(theta):
        state = BackboneState(_unflatten(names, shapes, theta))
        taps = forward(state, x, cfg)
        return float(np.sum(mixed_loss(taps.logits, y, loss_cfg)) + np.sum(gap(taps.mid) * r_mid)
                     + np.sum(taps.high * r_high))

    def grad(theta):
        state = BackboneState(_unflatten(names, shapes, theta))
        taps = forward(state, x, cfg)
        g = backward(state, taps, cfg, d_logits=mixed_loss_grad(taps.logits, y, loss_cfg),
                     d_high=r_high, d_mid=gap_grad(r_mid, cfg.mid_spatial))
        return np.concatenate([g[n].ravel() for n in names])

    return value, grad


@pytest.mark.parametrize("high_activation", ["relu", "identity"])
def test_end_to_end_gradient(high_activation):
    cfg = BackboneConfig(input_shape=(8,), mid_channels=4, mid_spatial=(2, 2), high_dim=8,
                         high_activation=high_activation)
    rng = np.random.default_rng(11)
    worst = 0.0
    for k in range(GRAD_POINTS):
        x = rng.normal(size=(3, 8))
        y = rng.integers(0, 6, size=3)
        value, grad = _end_to_end(cfg, x, y, rng.normal(size=(3, 4)), rng.normal(size=(3, 8)),
                                  LossConfig(0.7, 0.2, 0.1))
        _, theta = _flatten(init_backbone(cfg, np.random.default_rng(k)).params)
        worst = max(worst, max_rel_error(grad(theta), finite_diff_grad(value, theta)))
    assert worst <= GRAD_TOL


def test_sgd_examples():
    state = BackboneState({"w": np.array([1.0])})
    g = {"w": np.array([1.0])}
    same = sgd_step(state, g, 0.0)
    assert same.params["w"].tolist() == [1.0] and same.step == 1
    assert sgd_step(state, g, 0.001).params["w"].tolist() == [0.999]
    two = sgd_step(sgd_step(state, g, 0.0005), g, 0.0005)
    assert two.params["w"][0] == pytest.approx(0.999, abs=1e-15)
    assert two.step == 2


def test_sgd_rejects_non_finite():
    state = BackboneState({"w_in": np.ones(2)})
    with pytest.raises(TrainingError, match="w_in"):
        sgd_step(state, {"w_in": np.array([1.0, np.inf])}, 0.1)


def test_sgd_returns_new_state():
    state = BackboneState({"w": np.ones(2)})
    sgd_step(state, {"w": np.ones(2)}, 0.5)
    assert state.params["w"].tolist() == [1.0, 1.0] and state.step == 0


def test_training_loss_decreases():
    cfg = BackboneConfig(input_shape=(8,), mid_channels=4, mid_spatial=(2, 2), high_dim=8, seed=5)
    rng = np.random.default_rng(0)
    centers = np.eye(6, 8) * 4.0
    y = np.repeat(np.arange(6), 10)
    x = centers[y] + 0.3 * rng.normal(size=(60, 8))
    state = init_backbone(cfg)
    lcfg = LossConfig()

    def full_loss(st):
        return float(np.sum(mixed_loss(forward(st, x, cfg).logits, y, lcfg)))

    losses = [full_loss(state)]
    for _ in range(10):
        for idx in np.array_split(rng.permutation(60), 6):
            taps = forward(state, x[idx], cfg)
            g = backward(state, taps, cfg, d_logits=mixed_loss_grad(taps.logits, y[idx], lcfg))
            state = sgd_step(state, g, cfg.lr)
        losses.append(full_loss(state))
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_checkpoint_roundtrip(tmp_path, rng):
    params = {"a": rng.normal(size=(3, 2)), "b": np.array([np.pi, -0.0, 1e-300, 5e-324])}
    path = tmp_path / "ck.json"
    save_checkpoint(path, params, {"mid_spatial": (2, 2)}, step=9)
    loaded, config, step = load_checkpoint(path)
    assert step == 9 and config == {"mid_spatial": [2, 2]}
    for k, v in params.items():
        assert loaded[k].shape == v.shape
        assert loaded[k].tobytes() == v.tobytes()
    path2 = tmp_path / "ck2.json"
    save_checkpoint(path2, loaded, {"mid_spatial": (2, 2)}, step=9)
    assert path.read_bytes() == path2.read_bytes()
