#! /usr/bin/python3
import numpy as np
from dataclasses import dataclass
from .config import LocalNetConfig, LOCAL_MIN_PATCH
from .errors import ConfigError, ShapeError
from .layers import Module, Conv2d, Linear, BatchNorm2d
from .patches import PatchSet
from .tensor import Tensor, relu, sigmoid, max_pool2d, adaptive_avg_pool, reshape, reduce_sum, as_tensor
from typing import List, Tuple, Union


@dataclass
class LocalOutput:
    """Batched: patch_logits [N, K, C], confidences [N, K], aggregated_logits [N, C]"""
    patch_logits: Tensor
    confidences: Tensor
    aggregated_logits: Tensor


class ConvBlock(Module):
    def __init__(self, rng: np.random.Generator, cin: int, cout: int):
        super().__init__()
        self.conv = self.add_child('conv', Conv2d(rng, cin, cout, bias=False))
        self.bn = self.add_child('bn', BatchNorm2d(cout))

    def __call__(self, x: Tensor) -> Tensor:
        return max_pool2d(relu(self.bn(self.conv(x))))


class LocalModel(Module):
    """Patch encoder with a classification and a confidence head"""
    def __init__(self, config: LocalNetConfig, rng: np.random.Generator):
        super().__init__()
        config.validate()
        if config.num_classes is None:
            raise ConfigError("local model needs num_classes")
        self.config = config
        self.blocks: List[ConvBlock] = []
        cin = 1
        for i, cout in enumerate(config.encoder_channels):
            self.blocks.append(self.add_child('block{}'.format(i), ConvBlock(rng, cin, cout)))
            cin = cout
        d = config.feature_dim
        self.cls1 = self.add_child('cls1', Linear(rng, d, config.cls_hidden))
        self.cls2 = self.add_child('cls2', Linear(rng, config.cls_hidden, config.num_classes))
        self.conf1 = self.add_child('conf1', Linear(rng, d, config.conf_hidden))
        self.conf2 = self.add_child('conf2', Linear(rng, config.conf_hidden, 1))

    def __call__(self, patches: Tensor) -> Tuple[Tensor, Tensor]:
        """[M, P, P, 1] -> (logits [M, C], confidences [M])"""
        if patches.ndim != 4 or patches.shape[3] != 1:
            raise ShapeError('local_forward', patches.shape)
        if min(patches.shape[1:3]) < LOCAL_MIN_PATCH:
            raise ConfigError("patches of {}x{} are too small for the local encoder: its four 2x2 max-pools "
                              "need at least {} pixels a side (set patches.output_size to resize them)"
                              .format(patches.shape[1], patches.shape[2], LOCAL_MIN_PATCH))
        m = patches.shape[0]
        x = patches
        for block in self.blocks:
            x = block(x)
        f = reshape(adaptive_avg_pool(x), (m, self.config.feature_dim))
        logits = self.cls2(relu(self.cls1(f)))
        conf = sigmoid(self.conf2(relu(self.conf1(f))))
        return logits, reshape(conf, (m,))


def aggregate_local(logits: Tensor, confidences: Tensor, epsilon: float = 1e-6) -> Tensor:
    """Confidence-weighted mean of patch logits: [..., K, C], [..., K] -> [..., C]"""
    logits, confidences = as_tensor(logits), as_tensor(confidences)
    if logits.shape[:-1] != confidences.shape:
        raise ShapeError('aggregate_local', logits.shape, confidences.shape)
    weights = reshape(confidences, confidences.shape + (1,))
    num = reduce_sum(logits * weights, -2)
    den = reduce_sum(confidences, -1, keepdims=True) + epsilon
    return num / den


def _as_batch(patches: Union[PatchSet, List[PatchSet], np.ndarray, Tensor]) -> Tensor:
    if isinstance(patches, PatchSet):
        patches = patches.patches[None]
    elif isinstance(patches, list):
        patches = np.stack([p.patches for p in patches])
    t = as_tensor(patches)
    if t.ndim == 4:
        t = reshape(t, (1,) + t.shape)
    if t.ndim != 5:
        raise ShapeError('local_forward', t.shape)
    return t


def local_forward(model: LocalModel, patches: Union[PatchSet, List[PatchSet], np.ndarray, Tensor]) -> LocalOutput:
    """Encode every patch of every sample in one batch, then aggregate per sample"""
    batch = _as_batch(patches)
    n, k = batch.shape[:2]
    logits, conf = model(reshape(batch, (n * k,) + batch.shape[2:]))
    patch_logits = reshape(logits, (n, k, model.config.num_classes))
    confidences = reshape(conf, (n, k))
    return LocalOutput(patch_logits=patch_logits, confidences=confidences,
                       aggregated_logits=aggregate_local(patch_logits, confidences, model.config.epsilon))


def test_equal_confidence_mean() -> None:
    z = aggregate_local(Tensor([[1.0, 0.0], [3.0, 2.0]]), Tensor([1.0, 1.0]), epsilon=0.0)
    assert np.allclose(z.data, [2.0, 1.0])
