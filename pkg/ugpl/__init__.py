"""ugpl: uncertainty-guided patch classification for CT-like images.

A capacity-limited global network classifies the whole image and emits
evidential (Dirichlet) outputs per feature location.  The uncertainty
those imply picks a few patches for a local network to refine, and a
learned weight fuses the two predictions.

Everything runs on a small float64 autograd layer over numpy.  The
per-batch pipeline is a Sequence of Events executed by a Runner:
TrainRunner updates the model, EvalRunner collects predictions and
ExperimentRunner walks an ablation matrix.

"""
from .errors import EventError, ConfigError, ShapeError, DomainError, DatasetError, CheckpointError
from .config import (RunConfig, GlobalModelConfig, LocalNetConfig, FusionConfig, PatchExtractConfig,
                     LossWeights, OptimizerConfig, AugmentConfig, SyntheticConfig, ABLATIONS, LOSS_PRESETS)
from .rng import RngState
from .tensor import Tensor, no_grad
from .gradcheck import GradCheckReport, grad_check, grad_check_params, pipeline_suite
from .global_model import GlobalModel, GlobalOutput, global_forward
from .evidential import DirichletParams, UncertaintyMap, evidence_to_dirichlet, uncertainty_map
from .patches import PatchSet, extract_patches, brute_force_reference, fixed_patches
from .local_model import LocalModel, LocalOutput, local_forward
from .fusion import FusionModel, FusionOutput, fuse
from .losses import LossBreakdown, CorrectnessMap, total_loss
from .model import UGPLModel
from .data import Dataset, Sample, synthesize, load_dataset, write_dataset, augment
from .event import Event, ResolvableStr, ResolvableBool, Resolvable, RunTrial
from .structure import Sequence, TryAll, pipeline
from .runner import Runner, ModelRunner, TrainRunner, EvalRunner, ExperimentRunner, Predictions
from .harness import MetricsReport, TrainResult, train, evaluate, ablate

__all__ = [
    "EventError",
    "ConfigError",
    "ShapeError",
    "DomainError",
    "DatasetError",
    "CheckpointError",
    "RunConfig",
    "GlobalModelConfig",
    "LocalNetConfig",
    "FusionConfig",
    "PatchExtractConfig",
    "LossWeights",
    "OptimizerConfig",
    "AugmentConfig",
    "SyntheticConfig",
    "ABLATIONS",
    "LOSS_PRESETS",
    "RngState",
    "Tensor",
    "no_grad",
    "GradCheckReport",
    "grad_check",
    "grad_check_params",
    "pipeline_suite",
    "GlobalModel",
    "GlobalOutput",
    "global_forward",
    "DirichletParams",
    "UncertaintyMap",
    "evidence_to_dirichlet",
    "uncertainty_map",
    "PatchSet",
    "extract_patches",
    "brute_force_reference",
    "fixed_patches",
    "LocalModel",
    "LocalOutput",
    "local_forward",
    "FusionModel",
    "FusionOutput",
    "fuse",
    "LossBreakdown",
    "CorrectnessMap",
    "total_loss",
    "UGPLModel",
    "Dataset",
    "Sample",
    "synthesize",
    "load_dataset",
    "write_dataset",
    "augment",
    "Event",
    "ResolvableStr",
    "ResolvableBool",
    "Resolvable",
    "RunTrial",
    "Sequence",
    "TryAll",
    "pipeline",
    "Runner",
    "ModelRunner",
    "TrainRunner",
    "EvalRunner",
    "ExperimentRunner",
    "Predictions",
    "MetricsReport",
    "TrainResult",
    "train",
    "evaluate",
    "ablate",
]
