#! /usr/bin/python3
"""Dense float64 tensors with reverse-mode gradients.

Every op builds its result eagerly with numpy and, when any operand
requires a gradient, records a closure which maps the output gradient
to operand gradients.  Tensor.backward() walks the recorded graph in
reverse topological order.

Images and feature maps are NHWC; convolution weights are
[kh, kw, cin, cout].

"""
import contextlib
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from .errors import ShapeError, DomainError
from typing import Callable, Iterator, List, Optional, Sequence, Tuple, Union

Operand = Union['Tensor', np.ndarray, float, int]

_grad_enabled = True


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Within this context no graph is recorded (evaluation)"""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor(object):
    def __init__(self, data: Union[np.ndarray, float, int, Sequence[float]], requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.op = 'leaf'
        self._parents: Tuple['Tensor', ...] = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def ndim(self) -> int:
        return int(self.data.ndim)

    @property
    def size(self) -> int:
        return int(self.data.size)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float('nan')

    def detach(self) -> 'Tensor':
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64).reshape(self.data.shape)
        else:
            self.grad = self.grad + g

    def backward(self) -> None:
        """Populate .grad of every requires_grad tensor this scalar depends on"""
        if self.data.size != 1:
            raise ShapeError('backward (needs a scalar loss)', self.shape)
        if not self.requires_grad:
            return

        order: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))

        self.accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self) -> str:
        return "Tensor(shape={}, op={})".format(self.shape, self.op)

    # Operator sugar
    def __add__(self, other: Operand) -> 'Tensor':
        return add(self, other)

    def __radd__(self, other: Operand) -> 'Tensor':
        return add(other, self)

    def __sub__(self, other: Operand) -> 'Tensor':
        return sub(self, other)

    def __rsub__(self, other: Operand) -> 'Tensor':
        return sub(other, self)

    def __mul__(self, other: Operand) -> 'Tensor':
        return mul(self, other)

    def __rmul__(self, other: Operand) -> 'Tensor':
        return mul(other, self)

    def __truediv__(self, other: Operand) -> 'Tensor':
        return div(self, other)

    def __rtruediv__(self, other: Operand) -> 'Tensor':
        return div(other, self)

    def __neg__(self) -> 'Tensor':
        return mul(self, -1.0)

    def __matmul__(self, other: 'Tensor') -> 'Tensor':
        return matmul(self, other)

    def __getitem__(self, index: object) -> 'Tensor':
        return take(self, index)

    def sum(self, axis: Union[None, int, Tuple[int, ...]] = None, keepdims: bool = False) -> 'Tensor':
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis: Union[None, int, Tuple[int, ...]] = None, keepdims: bool = False) -> 'Tensor':
        return reduce_mean(self, axis, keepdims)

    def reshape(self, *shape: int) -> 'Tensor':
        return reshape(self, shape)


def as_tensor(x: Operand) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], op: str,
            backward: Callable[[np.ndarray], None]) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    out.requires_grad = _grad_enabled and any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _broadcast_check(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape)


def _normalize_axis(axis: Union[None, int, Tuple[int, ...]], ndim: int) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


# Elementwise arithmetic
def add(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check('add', a, b)

    def _backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g, b.shape))
    return _result(a.data + b.data, (a, b), 'add', _backward)


def sub(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check('sub', a, b)

    def _backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(-g, b.shape))
    return _result(a.data - b.data, (a, b), 'sub', _backward)


def mul(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check('mul', a, b)

    def _backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * a.data, b.shape))
    return _result(a.data * b.data, (a, b), 'mul', _backward)


def div(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check('div', a, b)

    def _backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))
    return _result(a.data / b.data, (a, b), 'div', _backward)


def power(x: Operand, p: float) -> Tensor:
    x = as_tensor(x)
    if p != int(p) and np.any(x.data < 0):
        raise DomainError('power', "non-integer power {} of negative values".format(p))
    out = np.power(x.data, p)

    def _backward(g: np.ndarray) -> None:
        x.accumulate(g * p * np.power(x.data, p - 1))
    return _result(out, (x,), 'power', _backward)


def sqrt(x: Operand) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data < 0):
        raise DomainError('sqrt', "negative values")
    out = np.sqrt(x.data)

    def _backward(g: np.ndarray) -> None:
        x.accumulate(g * 0.5 / out)
    return _result(out, (x,), 'sqrt', _backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """[n, k] @ [k, m]"""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError('matmul', a.shape, b.shape)

    def _backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate(g @ b.data.T)
        if b.requires_grad:
            b.accumulate(a.data.T @ g)
    return _result(a.data @ b.data, (a, b), 'matmul', _backward)


# Nonlinearities
def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)

    def _backward(g: np.ndarray) -> None:
        x.accumulate(g * out)
    return _result(out, (x,), 'exp', _backward)


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise DomainError('log', "non-positive input (min {})".format(x.data.min()))

    def _backward(g: np.ndarray) -> None:
        x.accumulate(g / x.data)
    return _result(np.log(x.data), (x,), 'log', _backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def _backward(g: np.ndarray) -> None:
        x.accumulate(g * mask)
    return _result(np.where(mask, x.data, 0.0), (x,), 'relu', _backward)


def _sigmoid(v: np.ndarray) -> np.ndarray:
    # Branch on sign so exp never overflows.
    e = np.exp(-np.abs(v))
    return np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(x: Tensor) -> Tensor:
    out = _sigmoid(x.data)

    def _backward(g: np.ndarray) -> None:
        x.accumulate(g * out * (1.0 - out))
    return _result(out, (x,), 'sigmoid', _backward)


def softplus(x: Tensor) -> Tensor:
    """log(1 + e^x)"""
    def _backward(g: np.ndarray) -> None:
        x.accumulate(g * _sigmoid(x.data))
    return _result(np.logaddexp(0.0, x.data), (x,), 'softplus', _backward)


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis"""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def _backward(g: np.ndarray) -> None:
        x.accumulate(out * (g - (g * out).sum(axis=-1, keepdims=True)))
    return _result(out, (x,), 'softmax', _backward)


def log_softmax(x: Tensor) -> Tensor:
    """log(softmax(x)) over the last axis, without the underflow"""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    probs = np.exp(out)

    def _backward(g: np.ndarray) -> None:
        x.accumulate(g - probs * g.sum(axis=-1, keepdims=True))
    return _result(out, (x,), 'log_softmax', _backward)


# Reductions
def reduce_sum(x: Tensor, axis: Union[None, int, Tuple[int, ...]] = None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axis(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def _backward(g: np.ndarray) -> None:
        if not keepdims:
            g = np.expand_dims(g, axes)
        x.accumulate(np.broadcast_to(g, x.shape))
    return _result(np.asarray(out), (x,), 'sum', _backward)


def reduce_mean(x: Tensor, axis: Union[None, int, Tuple[int, ...]] = None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axis(axis, x.ndim)
    count = 1
    for a in axes:
        count *= x.shape[a]
    return mul(reduce_sum(x, axes, keepdims), 1.0 / count)


def _reduce_extreme(x: Tensor, axis: Union[None, int, Tuple[int, ...]], keepdims: bool, op: str) -> Tensor:
    axes = _normalize_axis(axis, x.ndim)
    kept = [a for a in range(x.ndim) if a not in axes]
    # Move reduced axes last and flatten them, so ties go to the first element.
    moved = np.transpose(x.data, kept + list(axes))
    flat = moved.reshape(moved.shape[:len(kept)] + (-1,))
    idx = flat.argmax(axis=-1) if op == 'max' else flat.argmin(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    if keepdims:
        out = np.expand_dims(out, axes)

    def _backward(g: np.ndarray) -> None:
        if keepdims:
            g = np.squeeze(g, axis=axes)
        onehot = np.zeros_like(flat)
        np.put_along_axis(onehot, idx[..., None], 1.0, axis=-1)
        routed = (onehot * np.asarray(g)[..., None]).reshape(moved.shape)
        x.accumulate(np.transpose(routed, np.argsort(kept + list(axes))))
    return _result(np.asarray(out), (x,), op, _backward)


def reduce_max(x: Tensor, axis: Union[None, int, Tuple[int, ...]] = None, keepdims: bool = False) -> Tensor:
    return _reduce_extreme(x, axis, keepdims, 'max')


def reduce_min(x: Tensor, axis: Union[None, int, Tuple[int, ...]] = None, keepdims: bool = False) -> Tensor:
    return _reduce_extreme(x, axis, keepdims, 'min')


def mse(a: Operand, b: Operand, axis: Union[None, int, Tuple[int, ...]] = None) -> Tensor:
    d = sub(a, b)
    return reduce_mean(mul(d, d), axis)


# Shape manipulation
def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeError('reshape', x.shape, tuple(shape))

    def _backward(g: np.ndarray) -> None:
        x.accumulate(g.reshape(x.shape))
    return _result(out, (x,), 'reshape', _backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError('concat', *[t.shape for t in tensors])
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def _backward(g: np.ndarray) -> None:
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                t.accumulate(np.take(g, np.arange(lo, hi), axis=axis))
    return _result(out, tensors, 'concat', _backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    expanded = []
    for t in tensors:
        shape = list(t.shape)
        shape.insert(axis % (t.ndim + 1), 1)
        expanded.append(reshape(t, shape))
    return concat(expanded, axis=axis)


def take(x: Tensor, index: object) -> Tensor:
    """Slice / index a tensor (numpy indexing rules)"""
    try:
        out = np.array(x.data[index])  # type: ignore
    except IndexError:
        raise ShapeError('slice', x.shape)

    def _backward(g: np.ndarray) -> None:
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)  # type: ignore
        x.accumulate(full)
    return _result(out, (x,), 'slice', _backward)


# Convolution and pooling (NHWC)
def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: int = 1, padding: int = 0) -> Tensor:
    if x.ndim != 4 or w.ndim != 4 or x.shape[3] != w.shape[2]:
        raise ShapeError('conv2d', x.shape, w.shape)
    if b is not None and b.shape != (w.shape[3],):
        raise ShapeError('conv2d bias', b.shape, w.shape)
    if stride not in (1, 2):
        raise ShapeError('conv2d stride {}'.format(stride), x.shape)
    kh, kw, cin, cout = w.shape
    n, h, wd, _ = x.shape
    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    hp, wp = xp.shape[1], xp.shape[2]
    if hp < kh or wp < kw:
        raise ShapeError('conv2d', x.shape, w.shape)
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1

    windows = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    cols = windows.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, kh * kw * cin)
    wmat = w.data.reshape(kh * kw * cin, cout)
    out = cols @ wmat
    if b is not None:
        out = out + b.data
    out = out.reshape(n, ho, wo, cout)

    def _backward(g: np.ndarray) -> None:
        g2 = g.reshape(-1, cout)
        if w.requires_grad:
            w.accumulate((cols.T @ g2).reshape(w.shape))
        if b is not None and b.requires_grad:
            b.accumulate(g2.sum(axis=0))
        if x.requires_grad:
            dcols = (g2 @ wmat.T).reshape(n, ho, wo, kh, kw, cin)
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += dcols[:, :, :, i, j, :]
            x.accumulate(dxp[:, padding:padding + h, padding:padding + wd, :])

    parents = (x, w) if b is None else (x, w, b)
    return _result(out, parents, 'conv2d', _backward)


def max_pool2d(x: Tensor) -> Tensor:
    """2x2 max-pool, stride 2; odd trailing rows/columns are dropped"""
    if x.ndim != 4 or x.shape[1] < 2 or x.shape[2] < 2:
        raise ShapeError('max_pool2d', x.shape)
    n, h, w, c = x.shape
    ho, wo = h // 2, w // 2
    cropped = x.data[:, :2 * ho, :2 * wo, :]
    win = cropped.reshape(n, ho, 2, wo, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, ho, wo, c, 4)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def _backward(g: np.ndarray) -> None:
        onehot = np.zeros_like(win)
        np.put_along_axis(onehot, idx[..., None], 1.0, axis=-1)
        routed = (onehot * g[..., None]).reshape(n, ho, wo, c, 2, 2).transpose(0, 1, 4, 2, 5, 3)
        full = np.zeros_like(x.data)
        full[:, :2 * ho, :2 * wo, :] = routed.reshape(n, 2 * ho, 2 * wo, c)
        x.accumulate(full)
    return _result(out, (x,), 'max_pool2d', _backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """[N, H, W, C] -> [N, C]"""
    if x.ndim != 4:
        raise ShapeError('global_avg_pool', x.shape)
    return reduce_mean(x, (1, 2))


def adaptive_avg_pool(x: Tensor) -> Tensor:
    """[N, H, W, C] -> [N, 1, 1, C]"""
    if x.ndim != 4:
        raise ShapeError('adaptive_avg_pool', x.shape)
    return reduce_mean(x, (1, 2), keepdims=True)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor,
               running_mean: np.ndarray, running_var: np.ndarray,
               training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Normalize over every axis but the last (channels).

In training mode the batch statistics are used and the running
statistics are updated in place; otherwise the running statistics are
used.

    """
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError('batch_norm', x.shape, gamma.shape, beta.shape)
    axes = tuple(range(x.ndim - 1))
    if training:
        count = x.size // c
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * (var * count / (count - 1) if count > 1 else var)
    else:
        mu = running_mean.copy()
        var = running_var.copy()
    invstd = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * invstd
    out = gamma.data * xhat + beta.data

    def _backward(g: np.ndarray) -> None:
        if gamma.requires_grad:
            gamma.accumulate((g * xhat).sum(axis=axes))
        if beta.requires_grad:
            beta.accumulate(g.sum(axis=axes))
        if x.requires_grad:
            dxhat = g * gamma.data
            if training:
                m = x.size // c
                x.accumulate(invstd / m * (m * dxhat
                                           - dxhat.sum(axis=axes)
                                           - xhat * (dxhat * xhat).sum(axis=axes)))
            else:
                x.accumulate(dxhat * invstd)
    return _result(out, (x, gamma, beta), 'batch_norm', _backward)


def test_closed_forms() -> None:
    assert abs(softplus(Tensor(0.0)).item() - np.log(2)) < 1e-12
    assert np.allclose(softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])

    x = Tensor(3.0, requires_grad=True)
    (x * x).backward()
    assert x.grad is not None and abs(float(x.grad) - 6.0) < 1e-12

    x = Tensor(0.0, requires_grad=True)
    sigmoid(x).backward()
    assert x.grad is not None and abs(float(x.grad) - 0.25) < 1e-12
