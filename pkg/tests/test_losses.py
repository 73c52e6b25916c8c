#! /usr/bin/python3
import numpy as np
import pytest
from ugpl.config import LossWeights, LOSS_COMPONENTS
from ugpl.errors import DomainError, ShapeError
from ugpl.evidential import DirichletParams, evidence_to_dirichlet, uncertainty_map
from ugpl.losses import (CorrectnessMap, ce_loss, component_losses, confidence_loss, consistency_loss,
                         correctness_map, diversity_loss, local_ce_loss, total_loss, uncertainty_loss)
from ugpl.tensor import Tensor
from typing import Dict


def test_ce() -> None:
    out = ce_loss(Tensor([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), [1, 0, 1])
    assert np.allclose(out.data, [np.log(2), 0.3132616875, 0.3132616875])
    with pytest.raises(DomainError):
        ce_loss(Tensor([[0.0, 0.0]]), [2])
    with pytest.raises(ShapeError):
        ce_loss(Tensor([[0.0, 0.0]]), [0, 1])


def test_local_ce_averages_patches() -> None:
    logits = Tensor([[[0.0, 0.0], [1.0, 0.0]]])
    assert local_ce_loss(logits, [0]).item() == pytest.approx((np.log(2) + 0.3132616875) / 2)


def test_correctness_map() -> None:
    # Location (0, 0) favours class 1, the rest class 0.
    alpha = np.ones((1, 2, 2, 2))
    alpha[..., 0] = 3.0
    alpha[0, 0, 0] = [1.0, 4.0]
    p = DirichletParams(beta=Tensor(alpha), nu=Tensor(alpha), alpha=Tensor(alpha))
    assert correctness_map(p, [0]).values.tolist() == [[[0.0, 1.0], [1.0, 1.0]]]
    assert correctness_map(p, [1]).values.tolist() == [[[1.0, 0.0], [0.0, 0.0]]]


def test_uncertainty_mse() -> None:
    correct = CorrectnessMap(values=np.ones((1, 2, 2)))
    wrong = CorrectnessMap(values=np.zeros((1, 2, 2)))
    assert uncertainty_loss(Tensor(np.zeros((1, 2, 2))), correct).item() == 0.0
    assert uncertainty_loss(Tensor(np.full((1, 2, 2), 0.3)), correct).item() == pytest.approx(0.09)
    assert uncertainty_loss(Tensor(np.zeros((1, 2, 2))), wrong).item() == 1.0
    assert uncertainty_loss(Tensor(np.ones((1, 2, 2))), wrong).item() == 0.0
    with pytest.raises(ShapeError):
        uncertainty_loss(Tensor(np.zeros((1, 2, 3))), correct)


def test_consistency_kl() -> None:
    # KL((1/2, 1/2) || (3/4, 1/4)) = ln(4/3) / 2
    kl = np.log(4 / 3) / 2
    z_l = Tensor(np.zeros((1, 2, 2)))
    z_g = Tensor([[np.log(3), 0.0]])
    assert consistency_loss(z_l, Tensor([[1.0, 1.0]]), z_g).item() == pytest.approx(kl)
    assert consistency_loss(z_l, Tensor([[0.5, 0.5]]), z_g).item() == pytest.approx(kl / 2)
    assert consistency_loss(z_l, Tensor([[0.0, 0.0]]), z_g).item() == 0.0
    # Agreement costs nothing.
    assert consistency_loss(Tensor([[[np.log(3), 0.0]]]), Tensor([[1.0]]), z_g).item() == pytest.approx(0.0)


def test_confidence_targets() -> None:
    logits = Tensor([[[2.0, 0.0], [0.0, 2.0]]])
    # Patch 0 is right about label 0, patch 1 wrong.
    assert confidence_loss(Tensor([[1.0, 0.0]]), logits, [0]).item() == 0.0
    assert confidence_loss(Tensor([[0.5, 0.5]]), logits, [0]).item() == pytest.approx(0.25)
    assert confidence_loss(Tensor([[0.0, 1.0]]), logits, [0]).item() == pytest.approx(1.0)


def test_diversity() -> None:
    same = Tensor([[[1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]])
    assert diversity_loss(same).item() == pytest.approx(1.0)
    apart = Tensor([[[100.0, 0.0], [0.0, 100.0]]])
    assert diversity_loss(apart).item() == pytest.approx(0.0, abs=1e-12)
    three = Tensor([[[100.0, 0.0], [100.0, 0.0], [0.0, 100.0]]])
    assert diversity_loss(three).item() == pytest.approx(1 / 3)
    assert diversity_loss(Tensor(np.ones((2, 1, 3)))).data.tolist() == [0.0, 0.0]


def random_parts(n: int, seed: int) -> Dict[str, Tensor]:
    gen = np.random.default_rng(seed)
    return {name: Tensor(gen.random(n)) for name in LOSS_COMPONENTS}


@pytest.mark.parametrize('preset', ['C1', 'C4', 'C9', 'C10'])
def test_total_is_weighted_mean(preset: str) -> None:
    parts = random_parts(5, 1)
    w = LossWeights.preset(preset)
    out = total_loss(parts, w)
    means = np.array([parts[name].data.mean() for name in LOSS_COMPONENTS])
    weights = np.array([w.by_component()[name] for name in LOSS_COMPONENTS])
    assert out.total == pytest.approx(float(means @ weights), abs=1e-12)
    assert out.components == pytest.approx(dict(zip(LOSS_COMPONENTS, means)))
    assert out.to_dict()['total'] == out.total


def test_zero_weight_stays_out_of_graph() -> None:
    fused = Tensor(np.array([0.5, 1.5]), requires_grad=True)
    diversity = Tensor(np.array([0.2, 0.4]), requires_grad=True)
    out = total_loss({'fused': fused, 'diversity': diversity}, LossWeights(lambda_d=0.0))
    assert out.total == pytest.approx(1.0)
    assert out.components['diversity'] == pytest.approx(0.3)
    # Absent components report zero.
    assert out.components['consistency'] == 0.0
    assert out.loss is not None
    out.loss.backward()
    assert fused.grad is not None and np.allclose(fused.grad, 0.5)
    assert diversity.grad is None


def test_unknown_component() -> None:
    with pytest.raises(ValueError):
        total_loss({'fussed': Tensor([1.0])}, LossWeights())


def test_component_losses() -> None:
    gen = np.random.default_rng(4)
    n, c, k = 3, 3, 2
    dirichlet = evidence_to_dirichlet(Tensor(gen.standard_normal((n, 2, 2, 4 * c))))
    normalized = uncertainty_map(dirichlet).normalized
    z_g = Tensor(gen.standard_normal((n, c)))
    fused = Tensor(gen.standard_normal((n, c)))
    labels = [0, 2, 1]

    only = component_losses(labels, z_g, dirichlet, normalized, fused)
    assert sorted(only) == ['fused', 'uncertainty']

    every = component_losses(labels, z_g, dirichlet, normalized, fused,
                             Tensor(gen.standard_normal((n, k, c))), Tensor(gen.random((n, k))))
    assert sorted(every) == sorted(LOSS_COMPONENTS)
    for name, t in every.items():
        assert t.shape == (n,), name
        assert np.all(np.isfinite(t.data)) and np.all(t.data >= -1e-12), name
