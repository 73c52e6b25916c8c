#! /usr/bin/python3
import numpy as np
import pytest
from ugpl import tensor as T
from ugpl.errors import DomainError, ShapeError
from ugpl.config import LOSS_COMPONENTS
from ugpl.gradcheck import grad_check_params, pipeline_suite
from ugpl.tensor import Tensor
from typing import Callable, Tuple


def check(f: Callable[..., Tensor], *shapes: Tuple[int, ...], seed: int = 0, positive: bool = False) -> None:
    """Gradients of sum(f(inputs) * r) against central differences, r fixed random"""
    gen = np.random.default_rng(seed)
    inputs = []
    for s in shapes:
        v = gen.uniform(0.5, 2.0, s) if positive else gen.standard_normal(s)
        inputs.append(Tensor(v, requires_grad=True))
    r = Tensor(gen.standard_normal(f(*inputs).shape))
    report = grad_check_params(lambda: (f(*inputs) * r).sum(),
                               [('x{}'.format(i), t) for i, t in enumerate(inputs)])
    assert report.passed, str(report)


def test_elementwise_grads() -> None:
    check(T.add, (3, 4), (4,))
    check(T.sub, (3, 4), (3, 1))
    check(T.mul, (2, 3), (2, 3))
    check(T.div, (2, 3), (3,), positive=True)
    check(lambda x: T.power(x, 3.0), (5,))
    check(T.sqrt, (5,), positive=True)
    check(T.exp, (2, 3))
    check(T.log, (2, 3), positive=True)
    check(T.relu, (4, 4))
    check(T.sigmoid, (4, 4))
    check(T.softplus, (4, 4))


def test_softmax_grads() -> None:
    check(T.softmax, (3, 5))
    check(T.log_softmax, (2, 3, 4))


def test_reduction_grads() -> None:
    check(lambda x: T.reduce_sum(x, 1), (3, 4, 2))
    check(lambda x: T.reduce_mean(x, (0, 2), keepdims=True), (3, 4, 2))
    check(lambda x: T.reduce_max(x, (-2, -1)), (2, 4, 4))
    check(lambda x: T.reduce_min(x, -1, keepdims=True), (3, 5))


def test_shape_grads() -> None:
    check(T.matmul, (3, 4), (4, 2))
    check(lambda x: T.reshape(x, (6, 2)), (3, 4))
    check(lambda a, b: T.concat([a, b], axis=1), (2, 3), (2, 2))
    check(lambda a, b: T.stack([a, b], axis=1), (2, 3), (2, 3))
    # Repeated indices accumulate.
    check(lambda x: T.take(x, (np.array([0, 1, 1]), np.array([2, 0, 0]))), (2, 3))


def test_conv_grads() -> None:
    check(lambda x, w, b: T.conv2d(x, w, b, stride=1, padding=1), (2, 5, 5, 2), (3, 3, 2, 3), (3,))
    check(lambda x, w: T.conv2d(x, w, None, stride=2, padding=1), (1, 6, 7, 1), (3, 3, 1, 2))
    check(lambda x, w: T.conv2d(x, w, None, stride=1, padding=0), (1, 4, 4, 2), (1, 1, 2, 3))


def test_pool_grads() -> None:
    check(T.max_pool2d, (2, 5, 4, 3))
    check(T.global_avg_pool, (2, 3, 3, 2))
    check(T.adaptive_avg_pool, (2, 3, 3, 2))


def test_batch_norm_grads() -> None:
    for training in (True, False):
        rm, rv = np.zeros(3), np.ones(3)
        check(lambda x, g, b: T.batch_norm(x, g, b, rm.copy(), rv.copy(), training), (2, 3, 3, 3), (3,), (3,))


def test_batch_norm_running_stats() -> None:
    x = Tensor(np.arange(8.0).reshape(2, 2, 2, 1))
    rm, rv = np.zeros(1), np.ones(1)
    T.batch_norm(x, Tensor(np.ones(1)), Tensor(np.zeros(1)), rm, rv, training=True)
    assert rm[0] == pytest.approx(0.1 * 3.5)
    # Running variance is unbiased: biased var of 0..7 is 5.25, times 8/7 is 6.
    assert rv[0] == pytest.approx(0.9 + 0.1 * 5.25 * 8 / 7)

    out = T.batch_norm(x, Tensor(np.ones(1)), Tensor(np.zeros(1)), np.zeros(1), np.ones(1), training=False)
    assert np.allclose(out.data, x.data / np.sqrt(1 + 1e-5))


def test_max_pool_first_argmax() -> None:
    x = Tensor(np.ones((1, 2, 2, 1)), requires_grad=True)
    T.max_pool2d(x).sum().backward()
    assert x.grad is not None
    assert x.grad.reshape(-1).tolist() == [1.0, 0.0, 0.0, 0.0]


def test_max_pool_odd_crop() -> None:
    out = T.max_pool2d(Tensor(np.arange(9.0).reshape(1, 3, 3, 1)))
    assert out.shape == (1, 1, 1, 1) and out.item() == 4.0


def test_conv_shapes() -> None:
    x = Tensor(np.zeros((2, 8, 8, 3)))
    assert T.conv2d(x, Tensor(np.zeros((3, 3, 3, 5))), stride=2, padding=1).shape == (2, 4, 4, 5)
    with pytest.raises(ShapeError):
        T.conv2d(x, Tensor(np.zeros((3, 3, 2, 5))))


def test_errors() -> None:
    with pytest.raises(DomainError):
        T.log(Tensor([1.0, 0.0]))
    with pytest.raises(DomainError):
        T.sqrt(Tensor([-1.0]))
    with pytest.raises(ShapeError):
        T.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))))
    with pytest.raises(ShapeError):
        T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_backward_needs_scalar() -> None:
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ShapeError):
        (x * 2.0).backward()


def test_no_grad() -> None:
    x = Tensor(np.ones(3), requires_grad=True)
    with T.no_grad():
        y = (x * 2.0).sum()
    assert not y.requires_grad


def test_shared_subexpression() -> None:
    # y = x*x + x: the graph reaches x along two paths.
    x = Tensor(np.array([1.5, -2.0]), requires_grad=True)
    ((x * x) + x).sum().backward()
    assert x.grad is not None and np.allclose(x.grad, 2 * x.data + 1)


def test_backward_is_linear() -> None:
    gen = np.random.default_rng(5)
    x0, w = gen.standard_normal((3, 4)), gen.standard_normal((3, 4))

    def grad_of(f: Callable[[Tensor], Tensor]) -> np.ndarray:
        x = Tensor(x0.copy(), requires_grad=True)
        f(x).backward()
        assert x.grad is not None
        return x.grad

    def f(x: Tensor) -> Tensor:
        return (x * x * w).sum()

    def g(x: Tensor) -> Tensor:
        return T.sigmoid(T.exp(x)).mean()

    a, b = 2.5, -0.75
    combined = grad_of(lambda x: f(x) * a + g(x) * b)
    assert np.allclose(combined, a * grad_of(f) + b * grad_of(g), rtol=1e-12, atol=1e-12)


@pytest.mark.slow
def test_pipeline_every_element() -> None:
    reports = pipeline_suite(max_elements=None)
    assert [r.name for r in reports] == list(LOSS_COMPONENTS) + ['total']
    assert not [str(r) for r in reports if not r.passed]
    # Every parameter element, the same count for each loss.
    assert reports[0].checked > 0 and len({r.checked for r in reports}) == 1


def test_softmax_stable() -> None:
    out = T.softmax(Tensor([1000.0, 0.0]))
    assert np.all(np.isfinite(out.data)) and out.data[0] == pytest.approx(1.0)
    assert T.sigmoid(Tensor([-1000.0])).data[0] == 0.0
