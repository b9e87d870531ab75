import numpy as np
import pytest

import OSADPython

tc = OSADPython.tensor_core


def _t(arr):
    return OSADPython.Tensor(arr, dtype=np.float64)


def _purpose(f):
    return OSADPython.PurposeEncoding(f=_t(f))


def test_zero_purpose():
    x = np.random.default_rng(0).normal(size=(4, 3, 3))
    out = OSADPython.transfer(_t(x), _purpose(np.zeros(4))).data
    assert out.shape == x.shape
    assert np.allclose(out, (1.0 + 1.0 / 9.0) * x)


def test_single_position():
    x = np.random.default_rng(1).normal(size=(4, 1, 1))
    out = OSADPython.transfer(_t(x), _purpose(np.ones(4))).data
    assert np.allclose(out, 2.0 * x)


@pytest.mark.parametrize("seed", range(20))
def test_transfer_loop(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(4, 3, 3))
    f = rng.normal(size=4)

    scores = np.zeros(9)
    for j in range(9):
        for c in range(4):
            scores[j] += x[c, j // 3, j % 3] * f[c]
    alpha = np.exp(scores) / np.exp(scores).sum()
    expected = np.zeros_like(x)
    for j in range(9):
        expected[:, j // 3, j % 3] = x[:, j // 3, j % 3] * (1.0 + alpha[j])

    out = OSADPython.transfer(_t(x), _purpose(f)).data
    assert np.max(np.abs(out - expected)) < 1e-9

    # residual dominance: each column scaled by a factor in (1, 2]
    factor = out.reshape(4, 9) / x.reshape(4, 9)
    assert np.all(factor > 1.0) and np.all(factor <= 2.0)
    assert np.array_equal(np.sign(out), np.sign(x))


def test_spatial_equivariance():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(3, 2, 4))
    f = _purpose(rng.normal(size=3))
    perm = rng.permutation(8)

    permuted = x.reshape(3, 8)[:, perm].reshape(3, 2, 4)
    out = OSADPython.transfer(_t(x), f).data.reshape(3, 8)
    out_perm = OSADPython.transfer(_t(permuted), f).data.reshape(3, 8)
    assert np.allclose(out_perm, out[:, perm], rtol=0, atol=1e-12)


def test_channel_mismatch():
    with pytest.raises(OSADPython.OSADModelError):
        OSADPython.transfer(_t(np.ones((3, 2, 2))), _purpose(np.ones(4)))


def test_transfer_all():
    rng = np.random.default_rng(6)
    f = _purpose(rng.normal(size=2))
    maps = [_t(rng.normal(size=(2, 2, 2))) for _ in range(3)]
    outs = OSADPython.purpose_transfer.transfer_all(maps, f)
    assert len(outs) == 3
    for x, out in zip(maps, outs):
        assert np.array_equal(out.data, OSADPython.transfer(x, f).data)


def test_transfer_gradient():
    rng = np.random.default_rng(7)
    w = rng.normal(size=(3, 3, 2))

    def fn(x, f):
        out = OSADPython.transfer(x, OSADPython.PurposeEncoding(f=f))
        return tc.tensor_sum(tc.mul(out, _t(w)))

    result = OSADPython.gradient_check(fn, [rng.normal(size=(3, 3, 2)), rng.normal(size=3)])
    assert result.passed, result.rel_errors
