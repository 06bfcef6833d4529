import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fimcb.model import (PARAM_NAMES, CheckpointError, CosineSchedule, SGDConfig, SmallCNN, backward,
                         cosine_lr, cross_entropy, forward, images_to_batch, init_params, load_checkpoint,
                         param_shapes, predict, save_checkpoint, sgd_step, softmax)


def loss_at(net, batch, labels):
    return cross_entropy(forward(net, batch), labels)


def fd_check(net, batch, labels, n_samples, seed, h=1e-5, rtol=1e-4, atol=1e-8):
    """Sampled analytic gradients vs central differences.

    Returns ``(worst relative error, failures)``; a sample fails when it
    misses both ``rtol`` and the ``atol`` floor.
    """
    _, grads = backward(net, batch, labels)
    rng = np.random.default_rng(seed)
    names = list(PARAM_NAMES)
    sizes = np.array([net.params[k].size for k in names])
    worst, failures = 0.0, 0
    for _ in range(n_samples):
        k = names[rng.choice(len(names), p=sizes / sizes.sum())]
        idx = tuple(rng.integers(s) for s in net.params[k].shape)
        theta = net.params[k]
        old = theta[idx]
        theta[idx] = old + h
        up = loss_at(net, batch, labels)
        theta[idx] = old - h
        down = loss_at(net, batch, labels)
        theta[idx] = old
        numeric, analytic = (up - down) / (2 * h), grads[k][idx]
        diff = abs(numeric - analytic)
        rel = diff / max(abs(numeric), abs(analytic), 1e-300)
        worst = max(worst, rel)
        failures += rel > rtol and diff > atol
    return worst, failures


def random_net(seed, bias_scale=0.1):
    net = init_params(seed)
    rng = np.random.default_rng(seed + 1)
    for k in PARAM_NAMES:
        if k.endswith(".b"):
            net.params[k] = rng.normal(0, bias_scale, net.params[k].shape)
    return net


def test_gradient_check_small():
    rng = np.random.default_rng(0)
    net = random_net(1)
    batch = rng.normal(size=(3, 3, 8, 8))
    assert fd_check(net, batch, [0, 1, 1], 60, seed=2)[1] == 0


def test_cross_entropy_examples():
    assert cross_entropy(np.array([[0.0, 0.0]]), [0]) == pytest.approx(math.log(2), abs=1e-12)
    assert cross_entropy(np.array([[100.0, -100.0]]), [0]) == pytest.approx(0, abs=1e-12)
    assert cross_entropy(np.array([[1.0, 0.0]]), [0]) == pytest.approx(-math.log(math.e / (math.e + 1)), abs=1e-12)
    assert math.isfinite(cross_entropy(np.array([[1e4, -1e4]]), [1]))


logit_rows = arrays(np.float64, st.tuples(st.integers(1, 6), st.just(2)),
                    elements=st.floats(-50, 50, allow_nan=False))


@given(logit_rows)
def test_softmax_rows_sum_to_one(logits):
    assert np.allclose(softmax(logits).sum(axis=1), 1, atol=1e-12, rtol=0)


@given(logit_rows, st.floats(-100, 100), st.integers(0, 1))
def test_cross_entropy_shift_invariant(logits, c, label):
    labels = [label] * len(logits)
    assert cross_entropy(logits + c, labels) == pytest.approx(cross_entropy(logits, labels), abs=1e-9)


def test_zero_weight_net_outputs_bias():
    net = SmallCNN({k: np.zeros(s) for k, s in param_shapes().items()})
    net.params["fc.b"] = np.array([0.3, -0.7])
    out = forward(net, np.random.default_rng(0).normal(size=(4, 3, 16, 16)))
    assert np.array_equal(out, np.tile([0.3, -0.7], (4, 1)))


def test_zero_image_logits_depend_only_on_biases():
    a, b = init_params(0), init_params(0)
    for k in PARAM_NAMES:
        if k.endswith(".w") and k != "fc.w":
            b.params[k] = b.params[k] * 3.0  # weights before the head see only zeros
    zeros = images_to_batch([np.zeros((16, 16, 3), dtype=np.uint8)] * 2)
    assert np.array_equal(forward(a, zeros), forward(b, zeros))


@given(st.permutations(range(5)))
@settings(max_examples=10, deadline=None)
def test_forward_is_batch_order_equivariant(perm):
    net = random_net(3)
    batch = np.random.default_rng(1).normal(size=(5, 3, 8, 8))
    assert np.allclose(forward(net, batch[list(perm)]), forward(net, batch)[list(perm)], atol=1e-12)


def test_duplicated_sample_duplicates_row_and_keeps_gradient():
    net = random_net(4)
    batch = np.random.default_rng(2).normal(size=(2, 3, 8, 8))
    out = forward(net, np.concatenate([batch, batch[:1]]))
    assert np.allclose(out[0], out[2], atol=1e-12)
    _, g1 = backward(net, batch, [0, 1])
    _, g2 = backward(net, np.concatenate([batch, batch]), [0, 1, 0, 1])
    for k in PARAM_NAMES:
        assert np.allclose(g1[k], g2[k], atol=1e-12)


def test_final_bias_gradient_vanishes_for_uniform_balanced_case():
    net = SmallCNN({k: np.zeros(s) for k, s in param_shapes().items()})
    _, g = backward(net, np.ones((4, 3, 8, 8)), [0, 1, 0, 1])
    assert np.allclose(g["fc.b"], 0, atol=1e-15)


@pytest.mark.parametrize("shape", [(2, 1, 8, 8), (2, 3, 8, 9), (2, 3, 4, 4), (3, 8, 8)])
def test_forward_shape_errors(shape):
    with pytest.raises(ValueError):
        forward(init_params(0), np.zeros(shape))


def test_backward_label_shape_error():
    with pytest.raises(ValueError):
        backward(init_params(0), np.zeros((2, 3, 8, 8)), [0, 1, 0])


def test_sgd_examples():
    p, g = {"w": np.array([1.0])}, {"w": np.array([1.0])}
    vanilla, _ = sgd_step(p, g, None, SGDConfig(0.5), 0.5)
    assert vanilla["w"][0] == 0.5
    still, _ = sgd_step(p, {"w": np.array([0.0])}, {"w": np.array([0.0])}, SGDConfig(0.1, 0.9), 0.1)
    assert still["w"][0] == 1.0
    cfg = SGDConfig(0.1, momentum=0.1)
    p1, v1 = sgd_step(p, g, None, cfg, 0.1)
    p2, _ = sgd_step(p1, g, v1, cfg, 0.1)
    assert p2["w"][0] == pytest.approx(0.79, abs=1e-15)


def test_weight_decay_is_coupled_into_gradient():
    p, g = {"w": np.array([2.0])}, {"w": np.array([0.0])}
    out, v = sgd_step(p, g, None, SGDConfig(1.0, weight_decay=0.5), 0.1)
    assert v["w"][0] == 1.0 and out["w"][0] == pytest.approx(1.9)


@pytest.mark.parametrize("kwargs", [{"lr": 0}, {"lr": 0.1, "momentum": 1.0}, {"lr": 0.1, "weight_decay": -1}])
def test_sgd_config_validation(kwargs):
    with pytest.raises(ValueError):
        SGDConfig(**kwargs)


def test_cosine_examples_and_range():
    s = CosineSchedule(0.1, 50, 0.001)
    assert cosine_lr(s, 0) == 0.1
    assert cosine_lr(s, 50) == pytest.approx(0.001, abs=1e-15)
    assert cosine_lr(CosineSchedule(0.4, 10), 5) == pytest.approx(0.2, abs=1e-15)
    for bad in (-1, 51):
        with pytest.raises(ValueError):
            cosine_lr(s, bad)
    with pytest.raises(ValueError):
        CosineSchedule(0.1, 0)
    with pytest.raises(ValueError):
        CosineSchedule(0.1, 10, 0.2)


@given(st.floats(1e-4, 1), st.integers(1, 100), st.floats(0, 1))
def test_cosine_is_monotone_nonincreasing(eta0, total, frac):
    s = CosineSchedule(eta0, total, eta0 * frac * 0.5)
    values = [cosine_lr(s, t) for t in range(total + 1)]
    assert all(a >= b - 1e-15 for a, b in zip(values, values[1:]))


def test_init_params():
    a, b = init_params(9), init_params(9)
    for k in PARAM_NAMES:
        assert np.array_equal(a.params[k], b.params[k])
        if k.endswith(".b"):
            assert not a.params[k].any()
        else:
            bound = math.sqrt(6 / np.prod(a.params[k].shape[1:]))
            assert np.abs(a.params[k]).max() <= bound
    assert not np.array_equal(init_params(10).params["conv1.w"], a.params["conv1.w"])


def test_images_to_batch_layout_and_scale():
    img = np.zeros((8, 8, 3), dtype=np.uint8)
    img[..., 0] = 255
    batch = images_to_batch([img])
    assert batch.shape == (1, 3, 8, 8)
    assert batch[0, 0].min() == 1.0 and batch[0, 1:].max() == 0.0
    assert images_to_batch([img], mean=0.5, std=0.5)[0, 0, 0, 0] == 1.0


def test_separable_toy_set_reaches_full_train_accuracy():
    rng = np.random.default_rng(0)
    bright = [np.clip(rng.normal(190, 10, (8, 8, 3)), 0, 255).astype(np.uint8) for _ in range(8)]
    dark = [np.clip(rng.normal(60, 10, (8, 8, 3)), 0, 255).astype(np.uint8) for _ in range(8)]
    batch = images_to_batch(bright + dark, mean=0.5, std=0.25)
    labels = np.array([0] * 8 + [1] * 8)
    net, vel, cfg = init_params(1), None, SGDConfig(0.1, momentum=0.05)
    sched = CosineSchedule(cfg.lr, 50)
    for epoch in range(50):
        _, grads = backward(net, batch, labels)
        params, vel = sgd_step(net.params, grads, vel, cfg, cosine_lr(sched, epoch))
        net = SmallCNN(params)
    assert (predict(net, batch) == labels).all()


def test_checkpoint_round_trip(tmp_path):
    net = random_net(5)
    save_checkpoint(tmp_path / "c.bin", net, SGDConfig(0.01, 0.1, 1e-5), 7)
    loaded, cfg, epoch = load_checkpoint(tmp_path / "c.bin")
    assert cfg == SGDConfig(0.01, 0.1, 1e-5) and epoch == 7
    for k in PARAM_NAMES:
        assert np.array_equal(loaded.params[k], net.params[k])


def test_checkpoint_corruption_detected(tmp_path):
    path = tmp_path / "c.bin"
    save_checkpoint(path, init_params(0), SGDConfig(0.1), 1)
    blob = bytearray(path.read_bytes())
    blob[100] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
    path.write_bytes(b"garbage")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
