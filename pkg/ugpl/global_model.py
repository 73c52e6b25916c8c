#! /usr/bin/python3
import math
import numpy as np
from dataclasses import dataclass
from .config import GlobalModelConfig
from .errors import ShapeError, DomainError
from .layers import Module, Conv2d, Linear, BatchNorm2d
from .tensor import Tensor, relu, global_avg_pool
from typing import List, Optional, Union


@dataclass
class GlobalOutput:
    """logits [N, C], evidence [N, h, w, 4C], features [N, h, w, d]; no N for one image"""
    logits: Tensor
    evidence: Tensor
    features: Tensor


class ResidualBlock(Module):
    """conv-bn-relu-conv-bn plus a (projected, if needed) shortcut, then relu"""
    def __init__(self, rng: np.random.Generator, cin: int, cout: int, stride: int):
        super().__init__()
        self.conv1 = self.add_child('conv1', Conv2d(rng, cin, cout, 3, stride, 1, bias=False))
        self.bn1 = self.add_child('bn1', BatchNorm2d(cout))
        self.conv2 = self.add_child('conv2', Conv2d(rng, cout, cout, 3, 1, 1, bias=False))
        self.bn2 = self.add_child('bn2', BatchNorm2d(cout))
        self.proj: Optional[Conv2d] = None
        if stride != 1 or cin != cout:
            self.proj = self.add_child('proj', Conv2d(rng, cin, cout, 1, stride, 0, bias=False))
            self.proj_bn = self.add_child('proj_bn', BatchNorm2d(cout))

    def __call__(self, x: Tensor) -> Tensor:
        out = relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        shortcut = x if self.proj is None else self.proj_bn(self.proj(x))
        return relu(out + shortcut)


class GlobalModel(Module):
    """Residual backbone over single-channel images with two heads.

The stem halves the resolution, as does the first block of each later
stage until downsample_factor is reached.  The classification head is
FC(GAP(F)); the evidence head keeps the feature grid and emits 4C
channels per location.

    """
    def __init__(self, config: GlobalModelConfig, rng: np.random.Generator):
        super().__init__()
        config.validate()
        self.config = config
        c = config.num_classes
        chans = config.backbone_channels
        ndown = int(math.log2(config.downsample_factor))

        self.stem = self.add_child('stem', Conv2d(rng, 1, chans[0], 3, 2 if ndown >= 1 else 1, 1, bias=False))
        self.stem_bn = self.add_child('stem_bn', BatchNorm2d(chans[0]))
        self.blocks: List[ResidualBlock] = []
        cin = chans[0]
        for i, cout in enumerate(chans):
            stride = 2 if 0 < i < ndown else 1
            for j in range(2):
                block = ResidualBlock(rng, cin, cout, stride if j == 0 else 1)
                self.blocks.append(self.add_child('stage{}.{}'.format(i, j), block))
                cin = cout

        self.evidence1 = self.add_child('evidence1', Conv2d(rng, config.feature_dim, config.evidence_hidden))
        self.evidence2 = self.add_child('evidence2', Conv2d(rng, config.evidence_hidden, 4 * c))
        self.cls_head = self.add_child('cls_head', Linear(rng, config.feature_dim, c))

    def __call__(self, images: Tensor) -> GlobalOutput:
        x = relu(self.stem_bn(self.stem(images)))
        for block in self.blocks:
            x = block(x)
        features = x
        evidence = self.evidence2(relu(self.evidence1(features)))
        logits = self.cls_head(global_avg_pool(features))
        return GlobalOutput(logits=logits, evidence=evidence, features=features)


def global_forward(model: GlobalModel, image: Union[Tensor, np.ndarray]) -> GlobalOutput:
    """Run the global model on one [H, W, 1] image or a [N, H, W, 1] batch.

A single image gives unbatched outputs: logits [C], evidence [h, w, 4C].

    """
    x = image if isinstance(image, Tensor) else Tensor(image)
    single = x.ndim == 3
    if single:
        x = x.reshape(1, *x.shape)
    h, w = model.config.input_size
    if x.ndim != 4 or x.shape[1:] != (h, w, 1):
        raise ShapeError('global_forward', x.shape, (h, w, 1))
    if not np.all(np.isfinite(x.data)):
        raise DomainError('global_forward', "non-finite input image")
    out = model(x)
    if single:
        return GlobalOutput(logits=out.logits[0], evidence=out.evidence[0], features=out.features[0])
    return out
