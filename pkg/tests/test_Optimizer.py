import numpy as np
import pytest

import OSADPython

tc = OSADPython.tensor_core
optimizer = OSADPython.optimizer


def test_zero_gradient():
    params = {"w": np.array([1.0, -2.0, 3.0])}
    grads = {"w": np.zeros(3)}
    new, moments = OSADPython.adam_step(params, grads, OSADPython.AdamMoments.zeros_like(params), lr=0.1, t=1)
    assert np.array_equal(new["w"], params["w"])
    assert not np.any(moments.m["w"]) and not np.any(moments.v["w"])


def test_single_step():
    params = {"w": np.array([[0.5, -1.0], [2.0, 0.0]]), "b": np.array([1.0])}
    grads = {"w": np.array([[0.1, -3.0], [2e-3, 7.0]]), "b": np.array([-0.4])}
    moments = OSADPython.AdamMoments.zeros_like(params)
    lr = 1e-2
    eps = 1e-8

    new, updated = OSADPython.adam_step(params, grads, moments, lr=lr, t=1, eps=eps)
    for name in params:
        expected = params[name] - lr * grads[name] / (np.abs(grads[name]) + eps)
        assert np.allclose(new[name], expected, rtol=0, atol=1e-12)
        assert np.allclose(updated.m[name], 0.1 * grads[name])
        assert np.allclose(updated.v[name], 0.001 * grads[name] ** 2)
    # inputs untouched
    assert params["b"][0] == 1.0
    assert not np.any(moments.m["w"])


def test_second_step():
    params = {"w": np.array([1.0])}
    g1, g2 = 0.5, -0.25
    new, moments = OSADPython.adam_step(params, {"w": np.array([g1])}, OSADPython.AdamMoments.zeros_like(params),
                                        lr=0.1, t=1)
    new, moments = OSADPython.adam_step(new, {"w": np.array([g2])}, moments, lr=0.1, t=2)

    m = 0.9 * 0.1 * g1 + 0.1 * g2
    v = 0.999 * 0.001 * g1 ** 2 + 0.001 * g2 ** 2
    step2 = 0.1 * (m / (1 - 0.9 ** 2)) / (np.sqrt(v / (1 - 0.999 ** 2)) + 1e-8)
    assert np.isclose(new["w"][0], 1.0 - 0.1 * g1 / (abs(g1) + 1e-8) - step2, rtol=0, atol=1e-12)


def test_errors():
    params = {"w": np.zeros(2)}
    moments = OSADPython.AdamMoments.zeros_like(params)
    with pytest.raises(optimizer.OptimizerError):
        OSADPython.adam_step(params, {"w": np.zeros(2)}, moments, lr=0.1, t=0)
    with pytest.raises(optimizer.OptimizerError):
        OSADPython.adam_step(params, {"v": np.zeros(2)}, moments, lr=0.1, t=1)
    with pytest.raises(optimizer.OptimizerError):
        OSADPython.adam_step(params, {"w": np.zeros(3)}, moments, lr=0.1, t=1)


def _train(steps):
    encoder = OSADPython.Encoder(channels=(2, 2, 2, 2, 2), seed=5)
    adam = OSADPython.AdamOptimizer(encoder, lr=1e-2)
    image = OSADPython.Tensor(np.random.default_rng(0).uniform(size=(3, 32, 32)))
    losses = []
    for _ in range(steps):
        encoder.zero_grad()
        with OSADPython.GradTape() as tape:
            pyramid = encoder.encode(image)
            loss = tc.tensor_sum(tc.mul(pyramid.level(2), pyramid.level(2)))
            tape.backward(loss)
        losses.append(loss.item())
        adam.step()
    return encoder, adam, losses


def test_optimizer_deterministic():
    first, adam_first, losses_first = _train(10)
    second, adam_second, losses_second = _train(10)

    assert adam_first.t == 10
    assert losses_first == losses_second
    for name, tensor in first.parameters().items():
        assert np.array_equal(tensor.data, second.parameters()[name].data)
        assert np.array_equal(adam_first.moments.m[name], adam_second.moments.m[name])
    assert losses_first[-1] <= losses_first[0]


def test_optimizer_without_gradients():
    encoder = OSADPython.Encoder(channels=(2, 2, 2, 2, 2), seed=1)
    before = {name: tensor.data.copy() for name, tensor in encoder.parameters().items()}
    adam = OSADPython.AdamOptimizer(encoder)
    adam.step()
    assert adam.t == 1
    for name, tensor in encoder.parameters().items():
        assert np.array_equal(tensor.data, before[name])


def test_load_state():
    encoder = OSADPython.Encoder(channels=(2, 2, 2, 2, 2), seed=1)
    adam = OSADPython.AdamOptimizer(encoder)
    params = {name: tensor.data for name, tensor in encoder.parameters().items()}
    adam.load_state(4, OSADPython.AdamMoments.zeros_like(params))
    assert adam.t == 4

    with pytest.raises(optimizer.OptimizerError):
        adam.load_state(1, OSADPython.AdamMoments(m={"w": np.zeros(1)}, v={"w": np.zeros(1)}))
