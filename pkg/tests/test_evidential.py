#! /usr/bin/python3
import numpy as np
import pathlib
import pytest
from ugpl.data import read_pgm
from ugpl.errors import DomainError, ShapeError
from ugpl.evidential import (DirichletParams, dump_map, evidence_to_dirichlet, expected_probabilities,
                             uncertainty_map)
from ugpl.tensor import Tensor


def params(beta: np.ndarray, nu: np.ndarray) -> DirichletParams:
    return DirichletParams(beta=Tensor(beta), nu=Tensor(nu), alpha=Tensor(beta * nu + 1.0))


def test_raw_closed_form() -> None:
    # alpha = 1.5: 1/1.5 + 1/(1.5 * 2.5)
    beta = np.ones((2, 2, 2))
    umap = uncertainty_map(params(beta, np.full((2, 2, 2), 0.5)))
    assert np.allclose(umap.raw.data, 0.9333333333, atol=1e-9)

    # alpha = 51: 1/51 + 100/(51 * 52)
    umap = uncertainty_map(params(np.full((1, 1, 2), 100.0), np.full((1, 1, 2), 0.5)))
    assert umap.raw.data[0, 0] == pytest.approx(1 / 51 + 100 / (51 * 52), abs=1e-12)


def test_from_evidence() -> None:
    # softplus(log(e - 1)) == 1, and equal mass logits give nu = 1/C.
    evidence = np.zeros((3, 3, 8))
    evidence[..., 0:2] = np.log(np.e - 1)
    p = evidence_to_dirichlet(Tensor(evidence))
    assert np.allclose(p.beta.data, 1.0, atol=1e-5)
    assert np.allclose(p.nu.data, 0.5)
    assert np.allclose(p.alpha.data, 1.5, atol=1e-5)
    assert p.num_classes == 2
    assert np.allclose(p.strength().data, 3.0, atol=1e-5)
    assert np.allclose(uncertainty_map(p).raw.data, 0.9333333333, atol=1e-5)


def test_unused_evidence_channels() -> None:
    gen = np.random.default_rng(3)
    evidence = gen.standard_normal((2, 2, 12))
    other = evidence.copy()
    other[..., 6:] = gen.standard_normal((2, 2, 6))
    a, b = evidence_to_dirichlet(Tensor(evidence)), evidence_to_dirichlet(Tensor(other))
    assert np.array_equal(a.alpha.data, b.alpha.data)


def test_normalized_range() -> None:
    gen = np.random.default_rng(0)
    for scale in (0.1, 1.0, 10.0, 50.0):
        evidence = Tensor(gen.standard_normal((250, 4, 4, 12)) * scale)
        p = evidence_to_dirichlet(evidence)
        assert np.all(p.alpha.data >= 1.0)
        umap = uncertainty_map(p)
        assert np.all(umap.raw.data > 0)
        assert umap.normalized.shape == (250, 4, 4)
        assert np.all(umap.normalized.data >= 0.0) and np.all(umap.normalized.data <= 1.0)


def test_per_map_normalization() -> None:
    beta = np.ones((2, 2, 2, 3))
    beta[0, 0, 0] = 100.0
    beta[1] = 5.0
    umap = uncertainty_map(params(beta, np.full(beta.shape, 1 / 3)))
    # The most certain location of the first map is its minimum.
    assert umap.normalized.data[0, 0, 0] == 0.0
    assert umap.normalized.data[0, 1, 1] == pytest.approx(1.0, abs=1e-5)
    # A constant map normalizes to zero rather than dividing by zero.
    assert np.all(umap.normalized.data[1] == 0.0)


def test_more_evidence_less_uncertainty() -> None:
    betas = np.array([0.01, 0.1, 0.5, 1.0, 2.0, 5.0, 20.0, 100.0, 1000.0])
    # With more classes the raw map first rises with beta, then falls.
    for c, lo in ((2, 0.0), (3, 2.0), (5, 5.0)):
        sel = betas[betas >= lo]
        beta = np.repeat(sel[:, None, None], c, axis=-1)[None]
        raw = uncertainty_map(params(beta, np.full(beta.shape, 1.0 / c))).raw.data[0, :, 0]
        assert np.all(np.diff(raw) < 0)


def test_expected_probabilities() -> None:
    p = params(np.array([[[2.0, 2.0]]]), np.array([[[0.75, 0.25]]]))
    # alpha = (2.5, 1.5)
    assert np.allclose(expected_probabilities(p).data, [[[0.625, 0.375]]])


def test_errors() -> None:
    with pytest.raises(ShapeError):
        evidence_to_dirichlet(Tensor(np.zeros((2, 2, 6))))
    with pytest.raises(DomainError):
        evidence_to_dirichlet(Tensor(np.full((2, 2, 8), np.inf)))
    with pytest.raises(ShapeError):
        uncertainty_map(params(np.ones((3,)), np.full((3,), 1 / 3)))


def test_dump_map(tmp_path: pathlib.Path) -> None:
    values = np.linspace(0, 1, 12).reshape(3, 4)
    path = str(tmp_path / 'map.pgm')
    dump_map(path, values)
    assert np.abs(read_pgm(path) - values).max() <= 0.5 / 255 + 1e-12
    with pytest.raises(ShapeError):
        dump_map(path, np.zeros((2, 3, 4)))
