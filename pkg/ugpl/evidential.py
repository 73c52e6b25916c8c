#! /usr/bin/python3
"""Dirichlet parameters from raw evidence, and the uncertainty map they imply.

Evidence has 4C channels per location.  Channels [0:C] become the
inverse-uncertainty beta, [C:2C] the per-class mass beliefs nu; the
remaining 2C channels are produced by the head but consumed by nothing.

"""
import numpy as np
from dataclasses import dataclass
from .data import write_pgm
from .errors import ShapeError, DomainError
from .tensor import Tensor, softplus, softmax, reduce_max, reduce_min, reduce_sum, as_tensor
from typing import Sequence, Union

EPSILON = 1e-6


@dataclass
class DirichletParams:
    """beta, nu, alpha: [..., h, w, C]"""
    beta: Tensor
    nu: Tensor
    alpha: Tensor

    @property
    def num_classes(self) -> int:
        return self.alpha.shape[-1]

    def strength(self) -> Tensor:
        """Per-location Dirichlet strength S = sum_c alpha"""
        return reduce_sum(self.alpha, -1, keepdims=True)


@dataclass
class UncertaintyMap:
    """raw and normalized: [..., h, w]; normalization is per map"""
    raw: Tensor
    normalized: Tensor
    epsilon: float = EPSILON


def evidence_to_dirichlet(evidence: Tensor, epsilon: float = EPSILON) -> DirichletParams:
    if evidence.shape[-1] % 4:
        raise ShapeError('evidence_to_dirichlet (needs 4C channels)', evidence.shape)
    if not np.all(np.isfinite(evidence.data)):
        raise DomainError('evidence_to_dirichlet', "non-finite evidence")
    c = evidence.shape[-1] // 4
    beta = softplus(evidence[..., 0:c]) + epsilon
    nu = softmax(evidence[..., c:2 * c])
    alpha = beta * nu + 1.0
    return DirichletParams(beta=beta, nu=nu, alpha=alpha)


def uncertainty_map(p: DirichletParams, epsilon: float = EPSILON) -> UncertaintyMap:
    """Class-averaged aleatoric (1/alpha) plus epistemic (beta/(alpha(alpha+1))) terms"""
    alpha, beta = p.alpha, p.beta
    per_class = 1.0 / alpha + beta / (alpha * (alpha + 1.0))
    raw = per_class.mean(axis=-1)
    if raw.ndim < 2:
        raise ShapeError('uncertainty_map', raw.shape)
    lo = reduce_min(raw, (-2, -1), keepdims=True)
    hi = reduce_max(raw, (-2, -1), keepdims=True)
    normalized = (raw - lo) / (hi - lo + epsilon)
    return UncertaintyMap(raw=raw, normalized=normalized, epsilon=epsilon)


def total_dirichlet_uncertainty(alpha: Union[Sequence[float], np.ndarray]) -> float:
    """Total predictive uncertainty of a single Dirichlet"""
    a = np.asarray(alpha, dtype=np.float64)
    if a.ndim != 1 or np.any(a <= 0):
        raise DomainError('total_dirichlet_uncertainty', "alpha must be a positive vector")
    s = a.sum()
    p = a / s
    return float(np.sum(p * (1.0 - p) / (s + 1.0)))


def expected_probabilities(p: Union[DirichletParams, Tensor]) -> Tensor:
    """alpha_c / S per location"""
    alpha = p.alpha if isinstance(p, DirichletParams) else as_tensor(p)
    return alpha / reduce_sum(alpha, -1, keepdims=True)


def dump_map(path: str, umap: Union[UncertaintyMap, np.ndarray]) -> None:
    """Write a single normalized map as an 8-bit PGM"""
    values = umap.normalized.data if isinstance(umap, UncertaintyMap) else np.asarray(umap)
    if values.ndim != 2:
        raise ShapeError('dump_map', values.shape)
    write_pgm(path, values)


def test_closed_form_uncertainty() -> None:
    assert abs(total_dirichlet_uncertainty([1, 1]) - 1 / 6) < 1e-12
    assert abs(total_dirichlet_uncertainty([1, 1, 1, 1]) - 0.15) < 1e-12
    assert total_dirichlet_uncertainty([1000, 1]) < 1e-3
