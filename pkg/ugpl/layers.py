#! /usr/bin/python3
import numpy as np
from .tensor import Tensor, conv2d, matmul, batch_norm
from .errors import CheckpointError
from typing import Dict, Iterator, List, Tuple, TypeVar

M = TypeVar('M', bound='Module')


class Module(object):
    """Base class for anything holding parameters.

Parameters, buffers (non-trainable state such as batch-norm running
statistics) and child modules are registered explicitly, so names are
stable and ordered: they are what checkpoints are keyed by.

    """
    def __init__(self) -> None:
        self.training = True
        self._params: Dict[str, Tensor] = {}
        self._buffers: Dict[str, np.ndarray] = {}
        self._children: Dict[str, 'Module'] = {}

    def add_param(self, name: str, data: np.ndarray) -> Tensor:
        t = Tensor(data, requires_grad=True)
        self._params[name] = t
        return t

    def add_buffer(self, name: str, data: np.ndarray) -> np.ndarray:
        arr = np.array(data, dtype=np.float64)
        self._buffers[name] = arr
        return arr

    def add_child(self, name: str, module: M) -> M:
        self._children[name] = module
        return module

    def named_parameters(self, prefix: str = '') -> Iterator[Tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, child in self._children.items():
            yield from child.named_parameters(prefix + cname + '.')

    def named_buffers(self, prefix: str = '') -> Iterator[Tuple[str, np.ndarray]]:
        for name, b in self._buffers.items():
            yield prefix + name, b
        for cname, child in self._children.items():
            yield from child.named_buffers(prefix + cname + '.')

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def train(self, mode: bool = True) -> 'Module':
        self.training = mode
        for child in self._children.values():
            child.train(mode)
        return self

    def eval(self) -> 'Module':
        return self.train(False)

    def state(self) -> Dict[str, np.ndarray]:
        """Parameters and buffers, by name"""
        ret = {name: p.data for name, p in self.named_parameters()}
        ret.update(self.named_buffers())
        return ret

    def load_state(self, state: Dict[str, np.ndarray]) -> None:
        """Overwrite parameters and buffers in place; names and shapes must match exactly"""
        mine = self.state()
        missing = sorted(set(mine) - set(state))
        extra = sorted(set(state) - set(mine))
        if missing or extra:
            raise CheckpointError("parameter names differ: missing {}, unexpected {}".format(missing, extra))
        for name, arr in mine.items():
            if arr.shape != state[name].shape:
                raise CheckpointError("{}: shape {} does not match checkpoint {}"
                                      .format(name, arr.shape, state[name].shape))
            arr[...] = state[name]


def he_normal(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


class Conv2d(Module):
    def __init__(self, rng: np.random.Generator, cin: int, cout: int,
                 kernel: int = 3, stride: int = 1, padding: int = 1, bias: bool = True):
        super().__init__()
        self.stride = stride
        self.padding = padding
        self.weight = self.add_param('weight', he_normal(rng, (kernel, kernel, cin, cout), kernel * kernel * cin))
        self.bias = self.add_param('bias', np.zeros(cout)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class Linear(Module):
    def __init__(self, rng: np.random.Generator, din: int, dout: int):
        super().__init__()
        self.weight = self.add_param('weight', he_normal(rng, (din, dout), din))
        self.bias = self.add_param('bias', np.zeros(dout))

    def __call__(self, x: Tensor) -> Tensor:
        return matmul(x, self.weight) + self.bias


class BatchNorm2d(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.gamma = self.add_param('gamma', np.ones(channels))
        self.beta = self.add_param('beta', np.zeros(channels))
        self.running_mean = self.add_buffer('running_mean', np.zeros(channels))
        self.running_var = self.add_buffer('running_var', np.ones(channels))

    def __call__(self, x: Tensor) -> Tensor:
        return batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                          training=self.training, momentum=self.momentum, eps=self.eps)


def test_conv_identity() -> None:
    rng = np.random.default_rng(1)
    conv = Conv2d(rng, 1, 1)
    conv.weight.data[...] = 0
    conv.weight.data[1, 1, 0, 0] = 1
    img = Tensor(rng.random((1, 5, 7, 1)))
    assert np.array_equal(conv(img).data, img.data)


def test_load_state_mismatch() -> None:
    a = Linear(np.random.default_rng(1), 3, 2)
    b = Linear(np.random.default_rng(2), 3, 2)
    b.load_state(a.state())
    assert np.array_equal(a.weight.data, b.weight.data)
    try:
        Linear(np.random.default_rng(1), 4, 2).load_state(a.state())
        assert False, "shape mismatch should be rejected"
    except CheckpointError:
        pass
