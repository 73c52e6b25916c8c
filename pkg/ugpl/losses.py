#! /usr/bin/python3
"""The seven training loss components and their weighted total.

Every component is batched along the first axis and returns one value
per sample; the batch loss is the mean of the per-sample totals.

"""
import numpy as np
from dataclasses import dataclass, field
from .config import LossWeights, LOSS_COMPONENTS
from .errors import ShapeError, DomainError
from .evidential import DirichletParams, expected_probabilities
from .tensor import Tensor, as_tensor, log_softmax, softmax, sqrt, reduce_sum, reduce_mean, take, stack
from typing import Dict, Optional, Sequence, Union

Labels = Union[Sequence[int], np.ndarray]


@dataclass
class CorrectnessMap:
    """values: [N, h, w] of 0.0 / 1.0"""
    values: np.ndarray


@dataclass
class LossBreakdown:
    """Batch means of each component, the weighted total, and the weights used.

loss is the differentiable total (None once detached for logging).

    """
    components: Dict[str, float]
    total: float
    weights: LossWeights
    loss: Optional[Tensor] = field(default=None, repr=False)

    def to_dict(self) -> Dict[str, float]:
        ret = dict(self.components)
        ret['total'] = self.total
        return ret


def _labels(labels: Labels, n: int, c: int, op: str) -> np.ndarray:
    lab = np.asarray(labels, dtype=np.int64).reshape(-1)
    if lab.shape != (n,):
        raise ShapeError(op, (n,), lab.shape)
    if np.any(lab < 0) or np.any(lab >= c):
        raise DomainError(op, "label out of range for {} classes: {}".format(c, lab.tolist()))
    return lab


def ce_loss(logits: Tensor, labels: Labels) -> Tensor:
    """Softmax cross-entropy: [N, C] -> [N]"""
    logits = as_tensor(logits)
    if logits.ndim != 2:
        raise ShapeError('ce_loss', logits.shape)
    n, c = logits.shape
    lab = _labels(labels, n, c, 'ce_loss')
    return -take(log_softmax(logits), (np.arange(n), lab))


def local_ce_loss(patch_logits: Tensor, labels: Labels) -> Tensor:
    """Cross-entropy of every patch against its image label, averaged over patches: [N, K, C] -> [N]"""
    n, k, c = patch_logits.shape
    lab = _labels(labels, n, c, 'local_ce_loss')
    per_patch = ce_loss(patch_logits.reshape(n * k, c), np.repeat(lab, k))
    return per_patch.reshape(n, k).mean(axis=-1)


def correctness_map(p: DirichletParams, labels: Labels) -> CorrectnessMap:
    """1 where the per-location argmax of alpha / S is the image label"""
    probs = expected_probabilities(p).data
    n, c = probs.shape[0], probs.shape[-1]
    lab = _labels(labels, n, c, 'correctness_map')
    pred = probs.argmax(axis=-1)
    target = lab.reshape((n,) + (1,) * (pred.ndim - 1))
    return CorrectnessMap(values=(pred == target).astype(np.float64))


def uncertainty_loss(normalized: Tensor, cmap: CorrectnessMap) -> Tensor:
    """MSE between the normalized map and 1 - C: [N, h, w] -> [N]"""
    if normalized.shape != cmap.values.shape:
        raise ShapeError('uncertainty_loss', normalized.shape, cmap.values.shape)
    d = normalized - (1.0 - cmap.values)
    return reduce_mean(d * d, tuple(range(1, d.ndim)))


def consistency_loss(patch_logits: Tensor, confidences: Tensor, z_g: Tensor) -> Tensor:
    """(1/K) sum_k c_k KL(softmax(z_lk) || softmax(z_g)): [N, K, C], [N, K], [N, C] -> [N]"""
    n, k, c = patch_logits.shape
    if z_g.shape != (n, c) or confidences.shape != (n, k):
        raise ShapeError('consistency_loss', patch_logits.shape, confidences.shape, z_g.shape)
    logp = log_softmax(patch_logits)
    logq = log_softmax(z_g).reshape(n, 1, c)
    kl = reduce_sum(softmax(patch_logits) * (logp - logq), -1)
    return (kl * confidences).mean(axis=-1)


def confidence_loss(confidences: Tensor, patch_logits: Tensor, labels: Labels) -> Tensor:
    """Mean over patches of (c_k - a_k)^2, a_k = 1 iff patch k predicts the label: -> [N]"""
    n, k, c = patch_logits.shape
    lab = _labels(labels, n, c, 'confidence_loss')
    correct = (patch_logits.data.argmax(axis=-1) == lab[:, None]).astype(np.float64)
    d = confidences - correct
    return (d * d).mean(axis=-1)


def diversity_loss(patch_logits: Tensor) -> Tensor:
    """Mean pairwise cosine similarity of patch softmax vectors: [N, K, C] -> [N]"""
    n, k, c = patch_logits.shape
    if k < 2:
        return Tensor(np.zeros(n))
    probs = softmax(patch_logits)
    unit = probs / sqrt(reduce_sum(probs * probs, -1, keepdims=True))
    pairs = []
    for i in range(k):
        for j in range(i + 1, k):
            pairs.append(reduce_sum(unit[:, i, :] * unit[:, j, :], -1))
    return stack(pairs, axis=1).mean(axis=-1)


def component_losses(labels: Labels, z_g: Tensor, dirichlet: DirichletParams, normalized: Tensor,
                     fused_logits: Tensor, patch_logits: Optional[Tensor] = None,
                     confidences: Optional[Tensor] = None) -> Dict[str, Tensor]:
    """Every per-sample component; without patch outputs only fused and uncertainty"""
    parts = {'fused': ce_loss(fused_logits, labels),
             'uncertainty': uncertainty_loss(normalized, correctness_map(dirichlet, labels))}
    if patch_logits is None or confidences is None:
        return parts
    parts.update({'global': ce_loss(z_g, labels),
                  'local': local_ce_loss(patch_logits, labels),
                  'consistency': consistency_loss(patch_logits, confidences, z_g),
                  'confidence': confidence_loss(confidences, patch_logits, labels),
                  'diversity': diversity_loss(patch_logits)})
    return parts


def total_loss(parts: Dict[str, Tensor], weights: LossWeights) -> LossBreakdown:
    """Weighted sum of per-sample components, averaged over the batch.

Components with weight zero (or absent from parts) stay out of the
graph and are reported as 0 when absent.

    """
    unknown = set(parts) - set(LOSS_COMPONENTS)
    if unknown:
        raise ValueError("unknown loss components {}".format(sorted(unknown)))
    w = weights.by_component()
    components: Dict[str, float] = {}
    loss: Optional[Tensor] = None
    for name in LOSS_COMPONENTS:
        if name not in parts:
            components[name] = 0.0
            continue
        t = as_tensor(parts[name])
        components[name] = float(t.data.mean())
        if w[name] == 0:
            continue
        term = t * w[name]
        loss = term if loss is None else loss + term
    if loss is None:
        loss = Tensor(0.0)
    else:
        loss = loss.mean()
    return LossBreakdown(components=components, total=loss.item(), weights=weights, loss=loss)


def test_ce_closed_forms() -> None:
    assert abs(ce_loss(Tensor([[0.0, 0.0]]), [0]).item() - np.log(2)) < 1e-12
    assert abs(ce_loss(Tensor([[1.0, 0.0]]), [0]).item() - 0.3132616875) < 1e-9
