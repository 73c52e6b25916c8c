#! /usr/bin/python3
import numpy as np
from dataclasses import dataclass
from .config import FusionConfig
from .errors import ConfigError, ShapeError
from .evidential import UncertaintyMap
from .layers import Module, Linear
from .tensor import Tensor, concat, relu, sigmoid, reshape, as_tensor
from typing import Optional, Union


@dataclass
class FusionOutput:
    """Batched: u_g [N], w_g [N], fused_logits [N, C]"""
    u_g: Tensor
    w_g: Tensor
    fused_logits: Tensor


class FusionModel(Module):
    """w_g = sigmoid(W2 relu(W1 [z_g, u_g] + b1) + b2)"""
    def __init__(self, config: FusionConfig, rng: np.random.Generator):
        super().__init__()
        config.validate()
        if config.num_classes is None:
            raise ConfigError("fusion model needs num_classes")
        self.config = config
        self.fc1 = self.add_child('fc1', Linear(rng, config.num_classes + 1, config.hidden_dim))
        self.fc2 = self.add_child('fc2', Linear(rng, config.hidden_dim, 1))

    def __call__(self, z_g: Tensor, u_g: Tensor) -> Tensor:
        n = z_g.shape[0]
        x = concat([z_g, reshape(u_g, (n, 1))], axis=-1)
        return reshape(sigmoid(self.fc2(relu(self.fc1(x)))), (n,))


def scalar_uncertainty(umap: Union[UncertaintyMap, Tensor]) -> Tensor:
    """Mean of the normalized map over its last two (spatial) axes"""
    u = umap.normalized if isinstance(umap, UncertaintyMap) else as_tensor(umap)
    return u.mean(axis=(-2, -1))


def fuse(model: FusionModel, z_g: Tensor, u_g: Tensor, z_l: Tensor,
         w_override: Optional[float] = None) -> FusionOutput:
    """z_f = w_g z_g + (1 - w_g) z_l per sample.

w_override injects a fixed fusion weight instead of the predicted one.

    """
    z_g, u_g, z_l = as_tensor(z_g), as_tensor(u_g), as_tensor(z_l)
    if z_g.ndim == 1:
        return _unbatch(fuse(model, reshape(z_g, (1,) + z_g.shape), reshape(u_g, (1,)),
                             reshape(z_l, (1,) + z_l.shape), w_override))
    if z_g.shape != z_l.shape or u_g.shape != z_g.shape[:1]:
        raise ShapeError('fuse', z_g.shape, u_g.shape, z_l.shape)
    n = z_g.shape[0]
    if w_override is None:
        w_g = model(z_g, u_g)
    else:
        w_g = Tensor(np.full(n, float(w_override)))
    w = reshape(w_g, (n, 1))
    fused = w * z_g + (1.0 - w) * z_l
    return FusionOutput(u_g=u_g, w_g=w_g, fused_logits=fused)


def _unbatch(out: FusionOutput) -> FusionOutput:
    return FusionOutput(u_g=reshape(out.u_g, ()), w_g=reshape(out.w_g, ()),
                        fused_logits=reshape(out.fused_logits, out.fused_logits.shape[1:]))
