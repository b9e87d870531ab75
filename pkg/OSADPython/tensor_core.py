# -*- coding: utf-8 -*-
"""
Minimal dense tensor type with reverse-mode automatic differentiation.

All array valued quantities of the pipeline (images, feature maps, attention fields, bases, predictions and their
gradients) are carried by Tensor objects. Differentiable operations are recorded on a thread-local GradTape in
execution order; backward() walks this tape in reverse order, which visits each record exactly once.

```
from OSADPython.tensor_core import GradTape, Tensor, matmul

with GradTape() as tape:
    a = Tensor([[1.0, 2.0]], requires_grad=True)
    b = Tensor([[3.0], [4.0]])
    loss = matmul(a, b).sum()
    tape.backward(loss)
a.grad  # => [[3.0, 4.0]]
```
"""

from __future__ import annotations

import contextlib
import dataclasses
import itertools
import logging
import threading
from typing import Any, Callable, Iterator, Optional, Sequence

import numpy as np

# define logger using the current module name as ID
logger = logging.getLogger(__name__)

# standard precision is used for training, high precision for all oracle / gradient tests
DTYPE_TRAIN = np.float32
DTYPE_CHECK = np.float64

_TENSOR_IDS = itertools.count()


class TensorException(Exception):
    """
    Exception which is raised by tensor operations.
    """


class TensorDimensionError(TensorException):
    """
    Shape or channel mismatch between operands.
    """


class GradientError(TensorException):
    """
    Invalid use of backward().
    """


class Tensor:
    """
    Dense n-dimensional real array with shape metadata. The data array is frozen after creation; operations create
    new tensors.
    """

    def __init__(
            self,
            data: Any,
            requires_grad: bool = False,
            dtype: Optional[Any] = None,
    ) -> None:
        arr = np.array(data, dtype=dtype, copy=True)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DTYPE_TRAIN if dtype is None else dtype)
        if arr.ndim > 0 and min(arr.shape) == 0:
            raise TensorDimensionError(f"Tensor extents must be positive: {arr.shape}")
        arr.flags.writeable = False

        self._data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.tensor_id = next(_TENSOR_IDS)
        # record of the operation which created this tensor (None for leaves) and the tape holding it
        self._record: Optional[TapeRecord] = None
        self._tape: Optional[GradTape] = None

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> Tensor:
        """
        Create a tensor from an operation result without copying.
        """
        obj = cls.__new__(cls)
        arr.flags.writeable = False
        obj._data = arr
        obj.requires_grad = False
        obj.grad = None
        obj.tensor_id = next(_TENSOR_IDS)
        obj._record = None
        obj._tape = None
        return obj

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def shape(self) -> tuple[int, ...]:
        return self._data.shape

    @property
    def ndim(self) -> int:
        return self._data.ndim

    @property
    def size(self) -> int:
        return int(self._data.size)

    @property
    def dtype(self) -> np.dtype:
        return self._data.dtype

    def numpy(self) -> np.ndarray:
        """
        Return a writable copy of the data.
        """
        return self._data.copy()

    def item(self) -> float:
        if self.size != 1:
            raise TensorDimensionError(f"item() needs a single element tensor, got shape {self.shape}")
        return float(self._data.reshape(-1)[0])

    def detach(self) -> Tensor:
        """
        Return a leaf tensor sharing the values but without gradient history.
        """
        return Tensor(self._data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def is_leaf(self) -> bool:
        return self._record is None

    # operator sugar; all of them map to the module level functions below
    def __add__(self, other: Any) -> Tensor:
        return add(self, other)

    def __radd__(self, other: Any) -> Tensor:
        return add(other, self)

    def __sub__(self, other: Any) -> Tensor:
        return sub(self, other)

    def __rsub__(self, other: Any) -> Tensor:
        return sub(other, self)

    def __mul__(self, other: Any) -> Tensor:
        return mul(self, other)

    def __rmul__(self, other: Any) -> Tensor:
        return mul(other, self)

    def __neg__(self) -> Tensor:
        return neg(self)

    def __matmul__(self, other: Tensor) -> Tensor:
        return matmul(self, other)

    def reshape(self, *shape: int) -> Tensor:
        return reshape(self, shape)

    def sum(self, axis: Optional[int] = None) -> Tensor:
        return tensor_sum(self, axis=axis)

    def mean(self) -> Tensor:
        return mean(self)

    @property
    def T(self) -> Tensor:
        return transpose(self)


@dataclasses.dataclass
class TapeRecord:
    """
    One differentiable operation: the operation name, its inputs, the output id and the local gradient rule. The rule
    maps the output gradient to one gradient (or None) per input.
    """
    op: str
    inputs: tuple[Tensor, ...]
    output_id: int
    backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class _TapeState(threading.local):
    def __init__(self) -> None:
        super().__init__()
        self.stack: list[GradTape] = []
        self.no_grad_depth = 0


_STATE = _TapeState()


class GradTape:
    """
    Ordered records of the differentiable operations of one forward pass. A tape is confined to the thread which
    created it. Use it as context manager to make it the active tape of the current thread; outside any context no
    operation is recorded.
    """

    def __init__(self) -> None:
        self._records: list[TapeRecord] = []
        self._consumed = False
        self._owner = threading.get_ident()

    def __enter__(self) -> GradTape:
        _STATE.stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _STATE.stack.pop()

    def __len__(self) -> int:
        return len(self._records)

    @staticmethod
    def current() -> Optional[GradTape]:
        """
        Return the active tape of the calling thread or None.
        """
        return _STATE.stack[-1] if _STATE.stack else None

    def records(self) -> list[TapeRecord]:
        return list(self._records)

    def record(self, record: TapeRecord) -> None:
        if self._consumed:
            # a new forward pass starts on a tape which was already used for backward()
            logger.debug("Reset consumed tape with %d records", len(self._records))
            self.reset()
        self._records.append(record)

    def reset(self) -> None:
        """
        Drop all records; the tape can be used for a new forward / backward pass.
        """
        self._records = []
        self._consumed = False

    def backward(self, root: Tensor) -> None:
        """
        Propagate gradients from the scalar root to all reachable tensors with requires_grad=True. Gradients of
        tensors used several times are accumulated.
        """
        if threading.get_ident() != self._owner:
            raise GradientError("GradTape used from a thread which does not own it!")
        if self._consumed:
            raise GradientError("backward() called twice on the same tape without reset()!")
        if root.size != 1:
            raise GradientError(f"backward() needs a scalar root, got shape {root.shape}")
        if not root.requires_grad:
            raise GradientError("backward() root is detached (requires_grad=False)!")

        grads: dict[int, np.ndarray] = {root.tensor_id: np.ones_like(root.data)}
        leaves: dict[int, Tensor] = {}
        if root.is_leaf():
            leaves[root.tensor_id] = root

        for rec in reversed(self._records):
            grad_out = grads.pop(rec.output_id, None)
            if grad_out is None:
                continue
            grad_in = rec.backward_fn(grad_out)
            for inp, g in zip(rec.inputs, grad_in):
                if g is None or not inp.requires_grad:
                    continue
                if g.shape != inp.shape:
                    raise GradientError(f"Gradient shape {g.shape} does not match input shape {inp.shape} "
                                        f"for operation {repr(rec.op)}")
                if inp.tensor_id in grads:
                    grads[inp.tensor_id] = grads[inp.tensor_id] + g
                else:
                    grads[inp.tensor_id] = g
                if inp.is_leaf():
                    leaves[inp.tensor_id] = inp

        for tid, leaf in leaves.items():
            g = grads.get(tid)
            if g is None:
                continue
            g = g.astype(leaf.dtype, copy=False)
            leaf.grad = g if leaf.grad is None else leaf.grad + g

        self._consumed = True


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """
    Disable recording on the tape of the current thread.
    """
    _STATE.no_grad_depth += 1
    try:
        yield
    finally:
        _STATE.no_grad_depth -= 1


def grad_enabled() -> bool:
    return _STATE.no_grad_depth == 0


def backward(root: Tensor) -> None:
    """
    Run backward() on the tape which recorded the root tensor.
    """
    if root._record is None and not root.requires_grad:
        raise GradientError("backward() root is detached (requires_grad=False)!")
    tape = root._tape if root._tape is not None else GradTape.current()
    if tape is None:
        raise GradientError("backward() needs an active GradTape!")
    tape.backward(root)


def as_tensor(value: Any, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(value, dtype=dtype)


def _result(
        op: str,
        data: np.ndarray,
        inputs: tuple[Tensor, ...],
        backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]],
) -> Tensor:
    out = Tensor._wrap(np.asarray(data))
    tape = GradTape.current()
    if tape is not None and grad_enabled() and any(inp.requires_grad for inp in inputs):
        out.requires_grad = True
        rec = TapeRecord(op=op, inputs=inputs, output_id=out.tensor_id, backward_fn=backward_fn)
        out._record = rec
        out._tape = tape
        tape.record(rec)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """
    Sum out broadcast dimensions so that grad matches shape.
    """
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for dim, extent in enumerate(shape):
        if extent == 1 and grad.shape[dim] != 1:
            grad = grad.sum(axis=dim, keepdims=True)
    return grad


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as ex:
        raise TensorDimensionError(f"{op}: shapes {a.shape} and {b.shape} cannot be combined") from ex


def add(a: Any, b: Any) -> Tensor:
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    _check_broadcast("add", a, b)

    def backward_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result("add", a.data + b.data, (a, b), backward_fn)


def sub(a: Any, b: Any) -> Tensor:
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    _check_broadcast("sub", a, b)

    def backward_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result("sub", a.data - b.data, (a, b), backward_fn)


def mul(a: Any, b: Any) -> Tensor:
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    _check_broadcast("mul", a, b)

    def backward_fn(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result("mul", a.data * b.data, (a, b), backward_fn)


def neg(a: Tensor) -> Tensor:
    return _result("neg", -a.data, (a,), lambda g: (-g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """
    Matrix product of a (M x K) and b (K x P).
    """
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise TensorDimensionError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")

    def backward_fn(g):
        return g @ b.data.T, a.data.T @ g

    return _result("matmul", a.data @ b.data, (a, b), backward_fn)


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise TensorDimensionError(f"transpose: expect a matrix, got shape {a.shape}")
    return _result("transpose", a.data.T, (a,), lambda g: (g.T,))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        data = a.data.reshape(shape)
    except ValueError as ex:
        raise TensorDimensionError(f"reshape: cannot reshape {a.shape} to {shape}") from ex
    return _result("reshape", data, (a,), lambda g: (g.reshape(a.shape),))


def crop(a: Tensor, y0: int, y1: int, x0: int, x1: int) -> Tensor:
    """
    Spatial sub-window [y0:y1, x0:x1] of a C x H x W tensor.
    """
    if a.ndim != 3:
        raise TensorDimensionError(f"crop: expect C x H x W, got shape {a.shape}")
    _, h, w = a.shape
    if not (0 <= y0 < y1 <= h and 0 <= x0 < x1 <= w):
        raise TensorDimensionError(f"crop: window [{y0}:{y1}, {x0}:{x1}] outside of {a.shape}")

    def backward_fn(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        full[:, y0:y1, x0:x1] = g
        return (full,)

    return _result("crop", a.data[:, y0:y1, x0:x1], (a,), backward_fn)


def tensor_sum(a: Tensor, axis: Optional[int] = None) -> Tensor:
    if axis is None:
        def backward_all(g):
            return (np.broadcast_to(g, a.shape).copy(),)

        return _result("sum", np.asarray(a.data.sum()), (a,), backward_all)

    if not -a.ndim <= axis < a.ndim:
        raise TensorDimensionError(f"sum: axis {axis} out of range for shape {a.shape}")

    def backward_axis(g):
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _result("sum", a.data.sum(axis=axis), (a,), backward_axis)


def mean(a: Tensor) -> Tensor:
    n = a.size

    def backward_fn(g):
        return (np.full(a.shape, g / n, dtype=a.dtype),)

    return _result("mean", np.asarray(a.data.mean()), (a,), backward_fn)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _result("exp", out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return _result("log", np.log(a.data), (a,), lambda g: (g / a.data,))


def clip(a: Tensor, lower: float, upper: float) -> Tensor:
    """
    Clamp values to [lower, upper]; the gradient is passed only where the input is inside the interval.
    """
    inside = (a.data >= lower) & (a.data <= upper)
    return _result("clip", np.clip(a.data, lower, upper), (a,), lambda g: (g * inside,))


def relu(a: Tensor) -> Tensor:
    active = a.data > 0
    return _result("relu", np.where(active, a.data, 0).astype(a.dtype), (a,), lambda g: (g * active,))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split by sign for a stable evaluation
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _result("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """
    Softmax along axis; the slice maximum is subtracted before exponentiation.
    """
    if not -a.ndim <= axis < a.ndim:
        raise TensorDimensionError(f"softmax: axis {axis} out of range for shape {a.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward_fn(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _result("softmax", out, (a,), backward_fn)


def global_max_pool(a: Tensor) -> Tensor:
    """
    Per channel spatial maximum of a C x H x W tensor. The gradient is routed to the first maximum in row-major order.
    """
    if a.ndim != 3:
        raise TensorDimensionError(f"global_max_pool: expect C x H x W, got shape {a.shape}")
    c = a.shape[0]
    flat = a.data.reshape(c, -1)
    idx = flat.argmax(axis=1)  # argmax returns the first occurrence

    def backward_fn(g):
        full = np.zeros_like(flat)
        full[np.arange(c), idx] = g
        return (full.reshape(a.shape),)

    return _result("global_max_pool", flat[np.arange(c), idx], (a,), backward_fn)


def conv2d(
        x: Tensor,
        kernel: Tensor,
        bias: Optional[Tensor] = None,
        stride: int = 1,
) -> Tensor:
    """
    Cross-correlation (no kernel flip) of a C x H x W input with a C' x C x k x k kernel, k in {1, 3}, zero padding
    of (k - 1) / 2. For stride 1 the spatial size is preserved, for stride s the output size is ceil(H / s).
    """
    if x.ndim != 3 or kernel.ndim != 4:
        raise TensorDimensionError(f"conv2d: expect C x H x W input and 4d kernel, got {x.shape} and {kernel.shape}")
    c_out, c_in, kh, kw = kernel.shape
    if c_in != x.shape[0]:
        raise TensorDimensionError(f"conv2d: channel mismatch between input {x.shape} and kernel {kernel.shape}")
    if kh != kw or kh not in (1, 3):
        raise TensorDimensionError(f"conv2d: kernel size must be 1 or 3, got {kernel.shape}")
    if bias is not None and bias.shape != (c_out,):
        raise TensorDimensionError(f"conv2d: bias shape {bias.shape} does not match kernel {kernel.shape}")
    if stride < 1:
        raise TensorDimensionError(f"conv2d: invalid stride {stride}")

    pad = (kh - 1) // 2
    _, h, w = x.shape
    h_out = (h - 1) // stride + 1
    w_out = (w - 1) // stride + 1
    xpad = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad)))
    w_data = kernel.data

    def window(di: int, dj: int) -> tuple[slice, slice, slice]:
        return (slice(None),
                slice(di, di + stride * (h_out - 1) + 1, stride),
                slice(dj, dj + stride * (w_out - 1) + 1, stride))

    out = np.zeros((c_out, h_out, w_out), dtype=np.result_type(x.dtype, kernel.dtype))
    for di in range(kh):
        for dj in range(kw):
            patch = xpad[window(di, dj)]
            out += np.tensordot(w_data[:, :, di, dj], patch, axes=(1, 0))
    if bias is not None:
        out += bias.data[:, None, None]

    def backward_fn(g):
        gx = np.zeros_like(xpad, dtype=g.dtype)
        gw = np.zeros(kernel.shape, dtype=g.dtype)
        for di in range(kh):
            for dj in range(kw):
                sl = window(di, dj)
                gw[:, :, di, dj] = np.tensordot(g, xpad[sl], axes=([1, 2], [1, 2]))
                gx[sl] += np.tensordot(w_data[:, :, di, dj], g, axes=(0, 0))
        gx = gx[:, pad:pad + h, pad:pad + w]
        grads: list[Optional[np.ndarray]] = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(1, 2)))
        return grads

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return _result("conv2d", out, inputs, backward_fn)


def resize_matrix(size_out: int, size_in: int, dtype: Any = DTYPE_CHECK) -> np.ndarray:
    """
    Interpolation weights (size_out x size_in) of 1d linear resampling with align_corners=False: the source coordinate
    of output index o is (o + 0.5) * size_in / size_out - 0.5, clamped to the valid range.
    """
    mat = np.zeros((size_out, size_in), dtype=dtype)
    scale = size_in / size_out
    for o in range(size_out):
        src = min(max((o + 0.5) * scale - 0.5, 0.0), size_in - 1)
        i0 = int(np.floor(src))
        i1 = min(i0 + 1, size_in - 1)
        w1 = src - i0
        mat[o, i0] += 1.0 - w1
        mat[o, i1] += w1
    return mat


def bilinear_resize(x: Tensor, size: tuple[int, int]) -> Tensor:
    """
    Bilinear resampling (align_corners=False) of a C x H x W tensor to C x size[0] x size[1].
    """
    if x.ndim != 3:
        raise TensorDimensionError(f"bilinear_resize: expect C x H x W, got shape {x.shape}")
    _, h, w = x.shape
    if size == (h, w):
        return x
    ry = resize_matrix(size[0], h, dtype=x.dtype)
    rx = resize_matrix(size[1], w, dtype=x.dtype)
    out = np.einsum('yh,chw,xw->cyx', ry, x.data, rx, optimize=True)

    def backward_fn(g):
        return (np.einsum('yh,cyx,xw->chw', ry, g, rx, optimize=True),)

    return _result("bilinear_resize", out, (x,), backward_fn)


def bilinear_upsample(x: Tensor, factor: int = 2) -> Tensor:
    if x.ndim != 3:
        raise TensorDimensionError(f"bilinear_upsample: expect C x H x W, got shape {x.shape}")
    return bilinear_resize(x, (x.shape[1] * factor, x.shape[2] * factor))


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    """
    Stack matrices with equal column count on top of each other.
    """
    if not parts:
        raise TensorDimensionError("concat_rows: nothing to concatenate")
    cols = {p.shape[1] for p in parts if p.ndim == 2}
    if len(cols) != 1 or any(p.ndim != 2 for p in parts):
        raise TensorDimensionError(f"concat_rows: incompatible shapes {[p.shape for p in parts]}")
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])

    def backward_fn(g):
        return [g[bounds[i]:bounds[i + 1]] for i in range(len(parts))]

    return _result("concat_rows", np.concatenate([p.data for p in parts], axis=0), tuple(parts), backward_fn)


@dataclasses.dataclass
class GradientCheckResult:
    """
    Outcome of a finite difference gradient check.

    Attributes:
        max_rel_error: worst relative error over all checked inputs
        rel_errors: relative error per input
        passed: max_rel_error below the requested tolerance
    """
    max_rel_error: float
    rel_errors: list[float]
    passed: bool


def gradient_check(
        fn: Callable[..., Tensor],
        inputs: Sequence[np.ndarray],
        step: float = 1e-5,
        tolerance: float = 1e-4,
) -> GradientCheckResult:
    """
    Compare the gradients of the scalar function fn(*tensors) from backward() with central finite differences. The
    inputs are converted to high precision leaves. The relative error per input is
    |g_analytic - g_numeric| / max(|g_analytic|, |g_numeric|, 1e-12) using the L2 norm.
    """
    arrays = [np.asarray(arr, dtype=DTYPE_CHECK) for arr in inputs]

    with GradTape() as tape:
        leaves = [Tensor(arr, requires_grad=True, dtype=DTYPE_CHECK) for arr in arrays]
        out = fn(*leaves)
        tape.backward(out)
    analytic = [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data) for leaf in leaves]

    def evaluate(values: list[np.ndarray]) -> float:
        with no_grad():
            return fn(*[Tensor(v, dtype=DTYPE_CHECK) for v in values]).item()

    rel_errors: list[float] = []
    for pos, arr in enumerate(arrays):
        numeric = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            plus = [a.copy() for a in arrays]
            minus = [a.copy() for a in arrays]
            plus[pos][idx] += step
            minus[pos][idx] -= step
            numeric[idx] = (evaluate(plus) - evaluate(minus)) / (2.0 * step)
        diff = np.linalg.norm(analytic[pos] - numeric)
        scale = max(np.linalg.norm(analytic[pos]), np.linalg.norm(numeric), 1e-12)
        rel_errors.append(float(diff / scale))

    worst = max(rel_errors) if rel_errors else 0.0
    logger.debug("gradient check: relative errors %s", rel_errors)

    return GradientCheckResult(max_rel_error=worst, rel_errors=rel_errors, passed=worst < tolerance)
