#! /usr/bin/python3
import numpy as np
import pytest
from ugpl.config import RunConfig
from ugpl.errors import DomainError, ShapeError
from ugpl.evidential import evidence_to_dirichlet, uncertainty_map
from ugpl.global_model import GlobalModel, global_forward
from ugpl.losses import component_losses, total_loss
from ugpl.tensor import no_grad


def default_model(seed: int = 0) -> GlobalModel:
    cfg = RunConfig.from_dict({}).validate()
    return GlobalModel(cfg.global_model, np.random.default_rng(seed))


def images(n: int, seed: int = 1) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal((n, 64, 64, 1))


def test_shapes_default_config() -> None:
    model = default_model()
    model.eval()
    with no_grad():
        out = global_forward(model, images(2))
        assert out.logits.shape == (2, 3)
        assert out.evidence.shape == (2, 8, 8, 12)
        assert out.features.shape == (2, 8, 8, 64)

        one = global_forward(model, images(1)[0])
    assert one.logits.shape == (3,)
    assert one.evidence.shape == (8, 8, 12)
    # Eval-mode batch norm: a sample's output does not depend on its batch.
    assert np.allclose(one.logits.data, out.logits.data[0], rtol=1e-10, atol=1e-12)


def test_identical_images_identical_outputs() -> None:
    model = default_model()
    model.eval()
    batch = np.repeat(images(1), 2, axis=0)
    with no_grad():
        out = global_forward(model, batch)
    assert np.allclose(out.logits.data[0], out.logits.data[1], rtol=1e-12, atol=1e-12)
    assert np.allclose(out.evidence.data[0], out.evidence.data[1], rtol=1e-12, atol=1e-12)


def test_zero_heads() -> None:
    model = default_model()
    model.eval()
    assert model.evidence2.bias is not None
    for p in (model.cls_head.weight, model.cls_head.bias, model.evidence2.weight, model.evidence2.bias):
        p.data[...] = 0.0
    with no_grad():
        out = global_forward(model, images(3))
    assert np.all(out.logits.data == 0.0)
    assert np.all(out.evidence.data == 0.0)


def test_class_permutation_equivariant() -> None:
    model = default_model()
    model.eval()
    x = images(2)
    with no_grad():
        before = global_forward(model, x).logits.data
        perm = [2, 0, 1]
        model.cls_head.weight.data = model.cls_head.weight.data[:, perm].copy()
        model.cls_head.bias.data = model.cls_head.bias.data[perm].copy()
        after = global_forward(model, x).logits.data
    assert np.allclose(after, before[:, perm], rtol=1e-12, atol=1e-12)


def test_every_parameter_gets_gradient() -> None:
    cfg = RunConfig.from_dict({}).validate()
    model = GlobalModel(cfg.global_model, np.random.default_rng(0))
    eps = cfg.global_model.epsilon
    labels = np.array([0, 1, 2, 0])
    out = global_forward(model, images(4))
    dirichlet = evidence_to_dirichlet(out.evidence, eps)
    umap = uncertainty_map(dirichlet, eps)
    parts = component_losses(labels, out.logits, dirichlet, umap.normalized, out.logits)
    loss = total_loss(parts, cfg.loss_weights).loss
    assert loss is not None
    loss.backward()
    dead = [name for name, p in model.named_parameters() if p.grad is None or not np.any(p.grad != 0)]
    assert dead == []


def test_forward_errors() -> None:
    model = default_model()
    with pytest.raises(ShapeError):
        global_forward(model, np.zeros((1, 32, 32, 1)))
    with pytest.raises(ShapeError):
        global_forward(model, np.zeros((1, 64, 64, 2)))
    bad = np.zeros((64, 64, 1))
    bad[3, 3, 0] = np.nan
    with pytest.raises(DomainError):
        global_forward(model, bad)
