import numpy as np
import pytest

import OSADPython

tc = OSADPython.tensor_core


def _t(arr):
    return OSADPython.Tensor(arr, dtype=np.float64)


def _weighted(out, w):
    # random weights give every output element its own gradient
    return tc.tensor_sum(tc.mul(out, _t(w)))


def conv_naive(x, kernel, bias=None, stride=1):
    c_out, c_in, k, _ = kernel.shape
    pad = (k - 1) // 2
    _, h, w = x.shape
    xpad = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    h_out = (h - 1) // stride + 1
    w_out = (w - 1) // stride + 1
    out = np.zeros((c_out, h_out, w_out))
    for o in range(c_out):
        for y in range(h_out):
            for xx in range(w_out):
                acc = 0.0
                for c in range(c_in):
                    for di in range(k):
                        for dj in range(k):
                            acc += kernel[o, c, di, dj] * xpad[c, y * stride + di, xx * stride + dj]
                out[o, y, xx] = acc + (0.0 if bias is None else bias[o])
    return out


def test_matmul_identity():
    a = _t(np.eye(2))
    b = _t([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(tc.matmul(a, b).data, [[1.0, 2.0], [3.0, 4.0]])
    sel = tc.matmul(_t([[1.0, 0.0]]), _t([[5.0], [7.0]]))
    assert sel.data.tolist() == [[5.0]]


@pytest.mark.parametrize("seed", range(20))
def test_matmul_naive(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(4, 2))
    expected = np.zeros((3, 2))
    for i in range(3):
        for j in range(2):
            for k in range(4):
                expected[i, j] += a[i, k] * b[k, j]
    assert np.allclose(tc.matmul(_t(a), _t(b)).data, expected, rtol=0, atol=1e-12)


def test_matmul_shape_mismatch():
    with pytest.raises(OSADPython.TensorDimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        tc.matmul(_t(np.ones((2, 3))), _t(np.ones((2, 3))))


def test_softmax():
    assert np.allclose(tc.softmax(_t([0.0, 0.0, 0.0])).data, [1 / 3, 1 / 3, 1 / 3])

    stable = tc.softmax(_t([1000.0, 0.0])).data
    assert np.all(np.isfinite(stable))
    assert np.isclose(stable[0], 1.0)
    assert stable[1] < 1e-300 or np.isclose(stable[1], 0.0)

    big = tc.softmax(_t(np.random.default_rng(1).uniform(-1e3, 1e3, size=(4, 6))), axis=1).data
    assert np.all(np.abs(big.sum(axis=1) - 1.0) < 1e-6)


@pytest.mark.parametrize("seed", range(20))
def test_softmax_formula(seed):
    x = np.random.default_rng(seed).normal(size=5)
    expected = np.exp(x) / np.exp(x).sum()
    assert np.max(np.abs(tc.softmax(_t(x)).data - expected)) < 1e-9


def test_softmax_axis_out_of_range():
    with pytest.raises(OSADPython.TensorDimensionError):
        tc.softmax(_t([1.0, 2.0]), axis=1)


def test_conv2d_identity_kernels():
    x = np.random.default_rng(0).normal(size=(3, 5, 4))

    eye = np.eye(3).reshape(3, 3, 1, 1)
    assert np.allclose(tc.conv2d(_t(x), _t(eye)).data, x)

    delta = np.zeros((3, 3, 3, 3))
    for c in range(3):
        delta[c, c, 1, 1] = 1.0
    assert np.allclose(tc.conv2d(_t(x), _t(delta)).data, x)


@pytest.mark.parametrize("seed", range(20))
def test_conv2d_naive(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(2, 5, 5))
    kernel = rng.normal(size=(3, 2, 3, 3))
    bias = rng.normal(size=3)
    assert np.max(np.abs(tc.conv2d(_t(x), _t(kernel), _t(bias)).data - conv_naive(x, kernel, bias))) < 1e-10

    strided = tc.conv2d(_t(x), _t(kernel), stride=2).data
    assert strided.shape == (3, 3, 3)
    assert np.max(np.abs(strided - conv_naive(x, kernel, stride=2))) < 1e-10


def test_conv2d_errors():
    with pytest.raises(OSADPython.TensorDimensionError):
        tc.conv2d(_t(np.ones((2, 4, 4))), _t(np.ones((1, 3, 3, 3))))
    with pytest.raises(OSADPython.TensorDimensionError):
        tc.conv2d(_t(np.ones((2, 4, 4))), _t(np.ones((1, 2, 5, 5))))


def test_global_max_pool():
    const = tc.global_max_pool(_t(np.full((3, 4, 4), 2.5))).data
    assert np.array_equal(const, [2.5, 2.5, 2.5])

    single = np.array([[[1.0]], [[-2.0]]])
    assert np.array_equal(tc.global_max_pool(_t(single)).data, [1.0, -2.0])

    x = np.random.default_rng(3).normal(size=(4, 3, 5))
    expected = []
    for c in range(4):
        best = -np.inf
        for v in x[c].reshape(-1):
            best = max(best, v)
        expected.append(best)
    assert np.array_equal(tc.global_max_pool(_t(x)).data, expected)


def test_global_max_pool_tie_gradient():
    x = OSADPython.Tensor(np.array([[[1.0, 3.0], [3.0, 0.0]]]), requires_grad=True, dtype=np.float64)
    with OSADPython.GradTape() as tape:
        out = tc.tensor_sum(tc.global_max_pool(x))
        tape.backward(out)
    assert np.array_equal(x.grad, [[[0.0, 1.0], [0.0, 0.0]]])


def test_bilinear_upsample():
    const = tc.bilinear_upsample(_t(np.full((2, 3, 3), 0.7))).data
    assert const.shape == (2, 6, 6)
    assert np.allclose(const, 0.7)

    cell = tc.bilinear_upsample(_t([[[4.0]]])).data
    assert np.allclose(cell, np.full((1, 2, 2), 4.0))

    # ramp x[i, j] = 2 i + j; sampling positions -0.25 (clamped), 0.25, 0.75, 1.25 (clamped)
    ramp = _t([[[0.0, 1.0], [2.0, 3.0]]])
    cols = np.array([0.0, 0.25, 0.75, 1.0])
    rows = np.array([0.0, 0.5, 1.5, 2.0])
    assert np.allclose(tc.bilinear_upsample(ramp).data[0], rows[:, None] + cols[None, :])


def test_backward_analytic():
    x_val = np.array([1.0, -2.0, 3.0])
    x = OSADPython.Tensor(x_val, requires_grad=True, dtype=np.float64)
    with OSADPython.GradTape() as tape:
        tape.backward(tc.tensor_sum(tc.mul(x, x)))
    assert np.allclose(x.grad, 2 * x_val)

    x_val = np.array([0.3, -1.2, 0.8, 2.0])
    x = OSADPython.Tensor(x_val, requires_grad=True, dtype=np.float64)
    with OSADPython.GradTape() as tape:
        s = tc.softmax(x)
        first = tc.tensor_sum(tc.mul(s, _t([1.0, 0.0, 0.0, 0.0])))
        tape.backward(first)
    s_val = np.exp(x_val) / np.exp(x_val).sum()
    expected = s_val[0] * (np.eye(4)[0] - s_val)
    assert np.allclose(x.grad, expected, atol=1e-12)


def test_backward_accumulates_reuse():
    x = OSADPython.Tensor([2.0, 5.0], requires_grad=True, dtype=np.float64)
    with OSADPython.GradTape() as tape:
        y = tc.add(tc.mul(x, 3.0), x)
        tape.backward(tc.tensor_sum(y))
    assert np.allclose(x.grad, [4.0, 4.0])


def test_backward_errors():
    x = OSADPython.Tensor([1.0, 2.0], requires_grad=True, dtype=np.float64)
    with OSADPython.GradTape() as tape:
        y = tc.mul(x, x)
        with pytest.raises(OSADPython.GradientError, match="scalar"):
            tape.backward(y)
        loss = tc.tensor_sum(y)
        tape.backward(loss)
        with pytest.raises(OSADPython.GradientError, match="twice"):
            tape.backward(loss)

    detached = OSADPython.Tensor(1.0)
    with pytest.raises(OSADPython.GradientError, match="detached"):
        OSADPython.backward(detached)


def test_backward_module_function():
    x = OSADPython.Tensor([1.0, 2.0], requires_grad=True, dtype=np.float64)
    with OSADPython.GradTape():
        loss = tc.tensor_sum(tc.mul(x, x))
        OSADPython.backward(loss)
    assert np.allclose(x.grad, [2.0, 4.0])


def test_no_grad():
    x = OSADPython.Tensor([1.0, 2.0], requires_grad=True)
    with OSADPython.GradTape() as tape:
        with OSADPython.no_grad():
            y = tc.mul(x, x)
        assert not y.requires_grad
        assert len(tape) == 0
        z = tc.mul(x, x)
        assert z.requires_grad
        assert len(tape) == 1


def test_no_active_tape():
    assert OSADPython.GradTape.current() is None
    x = OSADPython.Tensor([1.0, 2.0], requires_grad=True)
    for _ in range(3):
        y = tc.mul(x, x)
        assert not y.requires_grad
        assert y.is_leaf()
    assert OSADPython.GradTape.current() is None
    with pytest.raises(OSADPython.GradientError, match="active GradTape"):
        OSADPython.backward(x)

    with OSADPython.GradTape() as tape:
        assert OSADPython.GradTape.current() is tape
    assert OSADPython.GradTape.current() is None


def test_tensor_frozen():
    x = OSADPython.Tensor([1.0, 2.0])
    with pytest.raises(ValueError):
        x.data[0] = 3.0
    with pytest.raises(OSADPython.TensorDimensionError):
        OSADPython.Tensor(np.zeros((0, 3)))


def _grad_ok(fn, inputs):
    result = OSADPython.gradient_check(fn, inputs, step=1e-5, tolerance=1e-4)
    assert result.passed, result.rel_errors
    return result


@pytest.mark.parametrize("seed", range(3))
def test_gradient_elementwise(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(1, 4))
    w = rng.normal(size=(3, 4))

    _grad_ok(lambda x, y: _weighted(tc.add(x, y), w), [a, b])
    _grad_ok(lambda x, y: _weighted(tc.sub(x, y), w), [a, b])
    _grad_ok(lambda x, y: _weighted(tc.mul(x, y), w), [a, b])
    _grad_ok(lambda x: _weighted(tc.neg(x), w), [a])
    _grad_ok(lambda x: _weighted(tc.exp(x), w), [a])
    _grad_ok(lambda x: _weighted(tc.log(x), w), [rng.uniform(0.5, 2.0, size=(3, 4))])
    _grad_ok(lambda x: _weighted(tc.sigmoid(x), w), [a * 3.0])
    _grad_ok(lambda x: _weighted(tc.relu(x), w), [a])
    _grad_ok(lambda x: _weighted(tc.clip(x, -1.0, 1.0), w), [rng.uniform(-2.0, 2.0, size=(3, 4))])


@pytest.mark.parametrize("seed", range(3))
def test_gradient_matrix_ops(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(4, 2))
    c = rng.normal(size=(4, 4))
    w_mm, w_t, w_r = rng.normal(size=(3, 2)), rng.normal(size=(4, 3)), rng.normal(size=(2, 6))
    w_sum, w_sm, w_cat = rng.normal(size=3), rng.normal(size=(3, 4)), rng.normal(size=(7, 4))

    _grad_ok(lambda x, y: _weighted(tc.matmul(x, y), w_mm), [a, b])
    _grad_ok(lambda x: _weighted(tc.transpose(x), w_t), [a])
    _grad_ok(lambda x: _weighted(tc.reshape(x, (2, 6)), w_r), [a])
    _grad_ok(lambda x: _weighted(tc.tensor_sum(x, axis=1), w_sum), [a])
    _grad_ok(lambda x: tc.mean(tc.mul(x, x)), [a])
    _grad_ok(lambda x: _weighted(tc.softmax(x, axis=1), w_sm), [a])
    _grad_ok(lambda x, y: _weighted(tc.concat_rows([x, y]), w_cat), [a, c])


@pytest.mark.parametrize("seed", range(3))
def test_gradient_spatial_ops(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(2, 5, 6))
    kernel = rng.normal(size=(3, 2, 3, 3))
    bias = rng.normal(size=3)
    kernel_1x1 = rng.normal(size=(1, 2, 1, 1))
    w_conv, w_stride, w_1x1 = rng.normal(size=(3, 5, 6)), rng.normal(size=(3, 3, 3)), rng.normal(size=(1, 5, 6))
    w_crop, w_gmp = rng.normal(size=(2, 3, 3)), rng.normal(size=2)
    w_up, w_resize = rng.normal(size=(2, 10, 12)), rng.normal(size=(2, 3, 8))

    _grad_ok(lambda a, k, b: _weighted(tc.conv2d(a, k, b), w_conv), [x, kernel, bias])
    _grad_ok(lambda a, k: _weighted(tc.conv2d(a, k, stride=2), w_stride), [x, kernel])
    _grad_ok(lambda a, k: _weighted(tc.conv2d(a, k), w_1x1), [x, kernel_1x1])
    _grad_ok(lambda a: _weighted(tc.crop(a, 1, 4, 2, 5), w_crop), [x])
    _grad_ok(lambda a: _weighted(tc.global_max_pool(a), w_gmp), [x])
    _grad_ok(lambda a: _weighted(tc.bilinear_upsample(a), w_up), [x])
    _grad_ok(lambda a: _weighted(tc.bilinear_resize(a, (3, 8)), w_resize), [x])


def test_gradient_composed():
    rng = np.random.default_rng(11)
    x = rng.normal(size=(2, 4, 4))
    kernel = rng.normal(size=(1, 2, 3, 3))

    def fn(a, k):
        scores = tc.reshape(tc.conv2d(a, k), (1, 16))
        return _weighted(tc.softmax(scores, axis=1), np.arange(16.0).reshape(1, 16))

    result = _grad_ok(fn, [x, kernel])
    assert result.max_rel_error < 1e-4
    assert len(result.rel_errors) == 2


def test_resize_matrix_rows():
    mat = tc.resize_matrix(7, 3)
    assert mat.shape == (7, 3)
    assert np.allclose(mat.sum(axis=1), 1.0)
    assert np.all(mat >= 0.0)
