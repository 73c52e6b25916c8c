#! /usr/bin/python3
import dataclasses
import logging
import numpy as np
from dataclasses import dataclass, field
from .config import LOSS_COMPONENTS, LossWeights, RunConfig
from .errors import DomainError
from .evidential import evidence_to_dirichlet, uncertainty_map
from .fusion import fuse, scalar_uncertainty
from .global_model import global_forward
from .local_model import local_forward
from .losses import component_losses, total_loss
from .model import UGPLModel
from .patches import extract_patches
from .rng import RngState
from .tensor import Tensor, no_grad
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

logger = logging.getLogger(__name__)

# Below this, gradients are compared absolutely: central differences through
# the whole pipeline carry ~1e-10 of rounding noise at step 1e-5.
REL_FLOOR = 1e-5


@dataclass
class GradCheckReport:
    name: str
    tol: float
    checked: int = 0
    max_rel_error: float = 0.0
    per_param: Dict[str, float] = field(default_factory=dict)
    non_finite: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.non_finite and self.max_rel_error <= self.tol

    def __str__(self) -> str:
        return "{}: {} ({} elements, max rel err {:.3g}, tol {:g}{})".format(
            self.name, 'PASS' if self.passed else 'FAIL', self.checked,
            self.max_rel_error, self.tol,
            ', non-finite in ' + ','.join(self.non_finite) if self.non_finite else '')


def rel_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic) + abs(numeric), REL_FLOOR)


def _evaluate(f: Callable[[], Tensor]) -> Optional[float]:
    try:
        v = f().item()
    except (DomainError, FloatingPointError):
        return None
    return v if np.isfinite(v) else None


def grad_check_params(f: Callable[[], Tensor],
                      params: Sequence[Tuple[str, Tensor]],
                      step: float = 1e-5,
                      tol: float = 1e-4,
                      max_elements: Optional[int] = None,
                      rng: Optional[np.random.Generator] = None,
                      name: str = 'gradcheck') -> GradCheckReport:
    """Compare backward() against central differences for each parameter.

f is re-evaluated with each checked element perturbed by +/- step.  With
max_elements set, a random subset of each parameter's elements is
checked (rng picks which).  Non-finite values are reported, not raised.

    """
    if step <= 0:
        raise ValueError("step must be positive, not {}".format(step))
    report = GradCheckReport(name=name, tol=tol)

    for _, p in params:
        p.zero_grad()
    try:
        loss = f()
        loss.backward()
    except (DomainError, FloatingPointError) as e:
        report.non_finite.append('forward: {}'.format(e))
        return report
    if not np.isfinite(loss.item()):
        report.non_finite.append('loss')
        return report

    for pname, p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.all(np.isfinite(analytic)):
            report.non_finite.append(pname)
            continue
        flat = p.data.reshape(-1)
        indices = np.arange(flat.size)
        if max_elements is not None and flat.size > max_elements:
            if rng is None:
                rng = np.random.default_rng(0)
            indices = np.sort(rng.choice(flat.size, size=max_elements, replace=False))

        worst = 0.0
        for i in indices:
            orig = flat[i]
            flat[i] = orig + step
            fplus = _evaluate(f)
            flat[i] = orig - step
            fminus = _evaluate(f)
            flat[i] = orig
            if fplus is None or fminus is None:
                report.non_finite.append('{}[{}]'.format(pname, i))
                continue
            numeric = (fplus - fminus) / (2 * step)
            err = rel_error(float(analytic.reshape(-1)[i]), numeric)
            worst = max(worst, err)
            report.checked += 1
        report.per_param[pname] = worst
        report.max_rel_error = max(report.max_rel_error, worst)
        logger.debug("%s: %s max rel err %.3g over %d elements", name, pname, worst, len(indices))
    return report


def grad_check(f: Callable[[Tensor], Tensor], point: Tensor,
               step: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    """grad_check_params for a function of a single tensor"""
    point.requires_grad = True
    return grad_check_params(lambda: f(point), [('x', point)], step=step, tol=tol,
                             name=getattr(f, '__name__', 'f'))


# Small enough that every component checks in seconds.
SUITE_CONFIG: Dict[str, Any] = {
    'global_model': {'input_size': [32, 32], 'backbone_channels': [4, 4, 8],
                     'feature_dim': 8, 'evidence_hidden': 8},
    'local_model': {'encoder_channels': [4, 4, 8, 8], 'cls_hidden': 8, 'conf_hidden': 8},
    'fusion': {'hidden_dim': 8},
    'patches': {'patch_size': 8, 'num_patches': 2},
    'synthetic': {'image_size': [32, 32]},
}


def pipeline_suite(tol: float = 1e-4, step: float = 1e-5, seed: int = 0,
                   max_elements: Optional[int] = 3) -> List[GradCheckReport]:
    """Check each loss component, then the default-weighted total, end to end.

One seeded sample runs through every network.  Patch positions are
chosen once up front: selection is piecewise constant in the parameters.

    """
    cfg = RunConfig.from_dict(dict(SUITE_CONFIG, seed=seed)).validate()
    model = UGPLModel(cfg)
    eps = cfg.global_model.epsilon
    gen = RngState(seed).child('gradcheck').generator()
    image = gen.standard_normal((1,) + tuple(cfg.global_model.input_size) + (1,))
    labels = gen.integers(cfg.num_classes, size=1)

    pcfg = dataclasses.replace(cfg.patches, output_size=cfg.local_patch_size)
    with no_grad():
        umap = uncertainty_map(evidence_to_dirichlet(global_forward(model.global_model, image).evidence, eps), eps)
    patches = extract_patches(image[0], umap.normalized.data[0], pcfg, RngState(seed).child('patches'))

    def parts() -> Dict[str, Tensor]:
        g = global_forward(model.global_model, image)
        dirichlet = evidence_to_dirichlet(g.evidence, eps)
        um = uncertainty_map(dirichlet, eps)
        local = local_forward(model.local_model, patches)
        fused = fuse(model.fusion, g.logits, scalar_uncertainty(um), local.aggregated_logits)
        return component_losses(labels, g.logits, dirichlet, um.normalized, fused.fused_logits,
                                local.patch_logits, local.confidences)

    def weighted(weights: LossWeights) -> Callable[[], Tensor]:
        def f() -> Tensor:
            loss = total_loss(parts(), weights).loss
            assert loss is not None
            return loss
        return f

    params = list(model.named_parameters())
    checks = [(name, LossWeights(*[1.0 if c == name else 0.0 for c in LOSS_COMPONENTS]))
              for name in LOSS_COMPONENTS]
    checks.append(('total', cfg.loss_weights))
    reports = [grad_check_params(weighted(w), params, step=step, tol=tol,
                                 max_elements=max_elements, rng=gen, name=name)
               for name, w in checks]
    for r in reports:
        logger.info("%s", r)
    return reports


def test_sum_of_squares() -> None:
    x = Tensor(np.random.default_rng(3).standard_normal(4))
    report = grad_check(lambda t: (t * t).sum(), x)
    assert report.passed and report.max_rel_error < 1e-8


def test_constant() -> None:
    x = Tensor(np.ones(3))
    report = grad_check(lambda t: Tensor(2.0) + (t * 0.0).sum(), x)
    assert report.passed and report.max_rel_error == 0.0
