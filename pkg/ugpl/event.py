#! /usr/bin/python3
import dataclasses
import logging
import traceback
import os.path
import numpy as np
from .config import LossWeights
from .errors import EventError
from .evidential import evidence_to_dirichlet, uncertainty_map
from .fusion import FusionOutput, fuse, scalar_uncertainty
from .global_model import global_forward
from .local_model import local_forward
from .losses import component_losses, total_loss
from .patches import extract_patches, fixed_patches
from .tensor import Tensor
from typing import Any, Callable, Dict, Union, TYPE_CHECKING
if TYPE_CHECKING:
    # Otherwise a circular dependency
    from .runner import Runner

logger = logging.getLogger(__name__)

# Type for arguments: either values, or functions to call at runtime
ResolvableStr = Union[str, Callable[['Runner', 'Event', str], str]]
ResolvableBool = Union[bool, Callable[['Runner', 'Event', str], bool]]
Resolvable = Union[Any, Callable[['Runner', 'Event', str], Any]]


class Event(object):
    """Abstract base class for pipeline stages."""
    def __init__(self) -> None:
        # From help(traceback.extract_stack):
        #   Each item in the list is a quadruple (filename,
        #   line number, function name, text), and the entries are in order
        #   from oldest to newest stack frame.
        self.name = 'unknown'
        for s in reversed(traceback.extract_stack()):
            # Ignore constructor calls, like this one.
            if s[2] != '__init__':
                self.name = "{}:{}:{}".format(type(self).__name__,
                                              os.path.basename(s[0]), s[1])
                break

    def enabled(self, runner: 'Runner') -> bool:
        """Returns whether it should be enabled for this run.  Usually True"""
        return True

    def action(self, runner: 'Runner') -> bool:
        """action() returns the False if it needs to be called again"""
        if runner.config.getoption('verbose'):
            logger.debug("# running %s:", self)
        return True

    def resolve_arg(self, fieldname: str, runner: 'Runner', arg: Resolvable) -> Any:
        """If this is a plain value, return it, otherwise call it to get result"""
        if callable(arg):
            return arg(runner, self, fieldname)
        else:
            return arg

    def resolve_args(self, runner: 'Runner', kwargs: Dict[str, Resolvable]) -> Dict[str, Any]:
        """Take a dict of args, replace callables with their return values"""
        ret: Dict[str, Any] = {}
        for field, val_or_func in kwargs.items():
            ret[field] = self.resolve_arg(field, runner, val_or_func)
        return ret

    def __repr__(self) -> str:
        return self.name


class GlobalForward(Event):
    """Run the global model over the stashed batch of images"""
    def action(self, runner: 'Runner') -> bool:
        super().action(runner)
        images = runner.get_stash(self, 'images')
        runner.add_stash('global', global_forward(runner.model.global_model, images))
        return True


class EstimateUncertainty(Event):
    """Evidence -> Dirichlet parameters -> per-image normalized uncertainty map"""
    def action(self, runner: 'Runner') -> bool:
        super().action(runner)
        out = runner.get_stash(self, 'global')
        eps = runner.config.global_model.epsilon
        params = evidence_to_dirichlet(out.evidence, eps)
        runner.add_stash('dirichlet', params)
        runner.add_stash('umap', uncertainty_map(params, eps))
        return True


class SelectPatches(Event):
    """Extract K patches per image.

mode 'full' follows the uncertainty map, 'no_ug' a uniformly random map
and 'fixed_patches' ignores maps and uses predefined positions.

    """
    def __init__(self, mode: ResolvableStr = 'full'):
        super().__init__()
        self.mode = mode

    def action(self, runner: 'Runner') -> bool:
        super().action(runner)
        mode = self.resolve_arg('mode', runner, self.mode)
        images = runner.get_stash(self, 'images')
        ids = runner.get_stash(self, 'ids')
        normalized = runner.get_stash(self, 'umap').normalized.data
        cfg = dataclasses.replace(runner.config.patches, output_size=runner.config.local_patch_size)

        sets = []
        for i, sid in enumerate(ids):
            rng = runner.sample_rng('patches', sid)
            if mode == 'fixed_patches':
                sets.append(fixed_patches(images[i], cfg))
                continue
            if mode == 'no_ug':
                umap = rng.child('random_map').generator().random(normalized.shape[1:])
            elif mode == 'full':
                umap = normalized[i]
            else:
                raise EventError(self, "unknown patch selection mode {}".format(mode))
            sets.append(extract_patches(images[i], umap, cfg, rng))
        runner.add_stash('patches', sets)
        return True


class LocalRefine(Event):
    """Encode the stashed patches and aggregate them per sample"""
    def action(self, runner: 'Runner') -> bool:
        super().action(runner)
        patches = runner.get_stash(self, 'patches')
        runner.add_stash('local', local_forward(runner.model.local_model, patches))
        return True


class Fuse(Event):
    """Predict the fusion weight from global logits and uncertainty, and fuse.

With global_only, the global logits are used as the fused ones.

    """
    def __init__(self, global_only: ResolvableBool = False):
        super().__init__()
        self.global_only = global_only

    def action(self, runner: 'Runner') -> bool:
        super().action(runner)
        z_g = runner.get_stash(self, 'global').logits
        u_g = scalar_uncertainty(runner.get_stash(self, 'umap'))
        if self.resolve_arg('global_only', runner, self.global_only):
            out = FusionOutput(u_g=u_g, w_g=Tensor(np.ones(z_g.shape[0])), fused_logits=z_g)
        else:
            z_l = runner.get_stash(self, 'local').aggregated_logits
            out = fuse(runner.model.fusion, z_g, u_g, z_l)
        runner.add_stash('fusion', out)
        return True


class ComputeLoss(Event):
    """All loss components and the weighted total.

With global_only, only the fused (= global) cross-entropy and the
uncertainty calibration terms are weighted.

    """
    def __init__(self, global_only: ResolvableBool = False):
        super().__init__()
        self.global_only = global_only

    def action(self, runner: 'Runner') -> bool:
        super().action(runner)
        g = runner.get_stash(self, 'global')
        w = runner.config.loss_weights
        local = None
        if self.resolve_arg('global_only', runner, self.global_only):
            w = LossWeights(lambda_f=w.lambda_f, lambda_g=0.0, lambda_l=0.0, lambda_u=w.lambda_u,
                            lambda_c=0.0, lambda_conf=0.0, lambda_d=0.0)
        else:
            local = runner.get_stash(self, 'local')
        parts = component_losses(runner.get_stash(self, 'labels'), g.logits,
                                 runner.get_stash(self, 'dirichlet'),
                                 runner.get_stash(self, 'umap').normalized,
                                 runner.get_stash(self, 'fusion').fused_logits,
                                 local.patch_logits if local is not None else None,
                                 local.confidences if local is not None else None)
        runner.add_stash('losses', total_loss(parts, w))
        return True


class CheckFinite(Event):
    """Abort on divergence, naming the batch"""
    def action(self, runner: 'Runner') -> bool:
        super().action(runner)
        losses = runner.get_stash(self, 'losses')
        fused = runner.get_stash(self, 'fusion').fused_logits
        if not np.isfinite(losses.total) or not np.all(np.isfinite(fused.data)):
            raise EventError(self, "non-finite loss {} in batch {}"
                             .format(losses.total, runner.get_stash(self, 'batch_id')))
        return True


class OptimizerStep(Event):
    """Backpropagate the total loss and update parameters"""
    def action(self, runner: 'Runner') -> bool:
        super().action(runner)
        runner.step(self, runner.get_stash(self, 'losses'))
        return True


class CollectPredictions(Event):
    """Hand this batch's predictions to the runner"""
    def action(self, runner: 'Runner') -> bool:
        super().action(runner)
        runner.collect(self)
        return True


class RunTrial(Event):
    """Train and evaluate one configuration of an experiment matrix.

changes are top-level RunConfig fields to override for this trial.

    """
    def __init__(self, label: str, **changes: Resolvable):
        super().__init__()
        self.label = label
        self.changes = changes

    def action(self, runner: 'Runner') -> bool:
        super().action(runner)
        runner.trial(self, self.label, self.resolve_args(runner, self.changes))
        return True
