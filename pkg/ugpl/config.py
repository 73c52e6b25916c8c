#! /usr/bin/python3
"""Run configuration.

Every section is a dataclass with explicit defaults.  JSON configs may
omit any field, but unknown keys are rejected at every level so that a
typo never silently falls back to a default.

"""
import dataclasses
import json
import math
import os
from dataclasses import dataclass, field
from .errors import ConfigError
from typing import Any, Dict, List, Mapping, Optional, Tuple, Type, TypeVar

ABLATIONS = ('full', 'global_only', 'no_ug', 'fixed_patches')
SUPPRESSIONS = ('hard_mask', 'gaussian')
SELECTIONS = ('window_mean', 'pixel_argmax')

# Smallest patch the four max-pool stages of the local encoder accept.
LOCAL_MIN_PATCH = 16


@dataclass
class GlobalModelConfig:
    input_size: Tuple[int, int] = (64, 64)
    num_classes: int = 3
    backbone_channels: List[int] = field(default_factory=lambda: [16, 32, 64])
    downsample_factor: int = 8
    feature_dim: int = 64
    evidence_hidden: int = 32
    epsilon: float = 1e-6

    def validate(self) -> None:
        h, w = self.input_size
        f = self.downsample_factor
        if f < 1 or f & (f - 1):
            raise ConfigError("downsample_factor {} is not a power of two".format(f))
        if h % f or w % f:
            raise ConfigError("input size {}x{} not divisible by downsample_factor {}".format(h, w, f))
        if self.num_classes < 2:
            raise ConfigError("num_classes must be at least 2, not {}".format(self.num_classes))
        if not self.backbone_channels:
            raise ConfigError("backbone_channels is empty")
        if self.backbone_channels[-1] != self.feature_dim:
            raise ConfigError("last backbone stage has {} channels but feature_dim is {}"
                              .format(self.backbone_channels[-1], self.feature_dim))
        # One stride-2 stem plus one per stage transition.
        if int(math.log2(f)) > len(self.backbone_channels):
            raise ConfigError("downsample_factor {} needs more than {} backbone stages"
                              .format(f, len(self.backbone_channels)))

    @property
    def feature_size(self) -> Tuple[int, int]:
        return (self.input_size[0] // self.downsample_factor,
                self.input_size[1] // self.downsample_factor)


@dataclass
class LocalNetConfig:
    num_classes: Optional[int] = None
    encoder_channels: List[int] = field(default_factory=lambda: [64, 128, 256, 256])
    cls_hidden: int = 128
    conf_hidden: int = 64
    epsilon: float = 1e-6

    def validate(self) -> None:
        if len(self.encoder_channels) != 4:
            raise ConfigError("local encoder has exactly 4 blocks, not {}".format(len(self.encoder_channels)))
        if any(b < a for a, b in zip(self.encoder_channels, self.encoder_channels[1:])):
            raise ConfigError("encoder_channels {} must be non-decreasing".format(self.encoder_channels))

    @property
    def feature_dim(self) -> int:
        return self.encoder_channels[-1]


@dataclass
class FusionConfig:
    num_classes: Optional[int] = None
    hidden_dim: int = 32

    def validate(self) -> None:
        if self.hidden_dim < 1:
            raise ConfigError("fusion hidden_dim must be at least 1")


@dataclass
class PatchExtractConfig:
    patch_size: int = 16
    num_patches: int = 3
    margin: Optional[int] = None
    suppression: str = 'hard_mask'
    gaussian_sigma: Optional[float] = None
    selection: str = 'window_mean'
    # Recorded only: suppression is what enforces spatial diversity.
    diversity_lambda: float = 0.0
    output_size: Optional[int] = None

    @property
    def resolved_margin(self) -> int:
        return self.patch_size // 4 if self.margin is None else self.margin

    @property
    def resolved_sigma(self) -> float:
        return self.patch_size / 2 if self.gaussian_sigma is None else self.gaussian_sigma

    @property
    def resolved_output_size(self) -> int:
        return self.patch_size if self.output_size is None else self.output_size

    def validate(self, image_size: Optional[Tuple[int, int]] = None) -> None:
        if self.patch_size <= 0 or self.num_patches < 1 or self.resolved_margin < 0:
            raise ConfigError("need patch_size > 0, num_patches >= 1, margin >= 0 (got {}, {}, {})"
                              .format(self.patch_size, self.num_patches, self.resolved_margin))
        if self.suppression not in SUPPRESSIONS:
            raise ConfigError("suppression {} not one of {}".format(self.suppression, SUPPRESSIONS))
        if self.selection not in SELECTIONS:
            raise ConfigError("selection {} not one of {}".format(self.selection, SELECTIONS))
        if self.resolved_sigma <= 0:
            raise ConfigError("gaussian_sigma must be positive")
        if image_size is not None and self.patch_size > min(image_size):
            raise ConfigError("patch_size {} exceeds image size {}x{}".format(self.patch_size, *image_size))


@dataclass
class LossWeights:
    lambda_f: float = 1.0
    lambda_g: float = 0.5
    lambda_l: float = 0.5
    lambda_u: float = 0.3
    lambda_c: float = 0.2
    lambda_conf: float = 0.1
    lambda_d: float = 0.1

    def validate(self) -> None:
        for k, v in dataclasses.asdict(self).items():
            if v < 0:
                raise ConfigError("loss weight {} is negative ({})".format(k, v))

    def by_component(self) -> Dict[str, float]:
        """Weights keyed by loss component name"""
        return dict(zip(LOSS_COMPONENTS, dataclasses.astuple(self)))

    @classmethod
    def preset(cls, name: str) -> 'LossWeights':
        if name not in LOSS_PRESETS:
            raise ConfigError("unknown loss weight preset {} (have {})".format(name, ', '.join(LOSS_PRESETS)))
        return cls(*LOSS_PRESETS[name])


LOSS_COMPONENTS = ('fused', 'global', 'local', 'uncertainty', 'consistency', 'confidence', 'diversity')

# (fused, global, local, uncertainty, consistency, confidence, diversity)
LOSS_PRESETS: Dict[str, Tuple[float, ...]] = {
    'C1': (1.0, 0.5, 0.5, 0.3, 0.2, 0.1, 0.1),     # baseline
    'C2': (1.0, 0.3, 0.7, 0.3, 0.2, 0.1, 0.1),     # local emphasis
    'C3': (1.0, 0.7, 0.3, 0.3, 0.2, 0.1, 0.1),     # global-centric
    'C4': (1.0, 0.5, 0.5, 0.6, 0.2, 0.1, 0.1),     # uncertainty focus
    'C5': (1.0, 0.5, 0.5, 0.3, 0.5, 0.1, 0.1),     # consistency-driven
    'C6': (1.0, 0.5, 0.5, 0.4, 0.4, 0.2, 0.2),     # balanced high
    'C7': (1.0, 0.5, 0.5, 0.3, 0.2, 0.1, 0.4),     # diversity-enhanced
    'C8': (1.0, 0.5, 0.5, 0.3, 0.2, 0.4, 0.1),     # confidence-calibrated
    'C9': (0.5, 0.25, 0.25, 0.15, 0.1, 0.05, 0.05),  # conservative
    'C10': (2.0, 1.0, 1.0, 0.6, 0.4, 0.2, 0.2),    # aggressive
}


@dataclass
class OptimizerConfig:
    kind: str = 'adam'
    lr: float = 1e-4
    weight_decay: float = 1e-4
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8

    def validate(self) -> None:
        if self.kind != 'adam':
            raise ConfigError("only the adam optimizer is available, not {}".format(self.kind))
        if self.lr < 0 or self.weight_decay < 0:
            raise ConfigError("lr and weight_decay must be non-negative")
        if not all(0 <= b < 1 for b in self.betas):
            raise ConfigError("betas {} must lie in [0, 1)".format(self.betas))


@dataclass
class AugmentConfig:
    enabled: bool = True
    hflip: bool = True
    vflip: bool = True
    shift: float = 0.05
    rotation: float = 10.0
    brightness: float = 0.1
    contrast: float = 0.1


@dataclass
class SyntheticConfig:
    image_size: Tuple[int, int] = (64, 64)
    samples_per_class: int = 200
    lesion_radius: Tuple[int, int] = (3, 5)
    lesion_contrast: Tuple[float, float] = (0.25, 0.45)
    noise_sigma: float = 0.05
    seed: int = 0

    def validate(self) -> None:
        h, w = self.image_size
        r = self.lesion_radius[1]
        # The phantom interior must hold a lesion with a radius of clearance.
        if min(h, w) < 4 * r + 8:
            raise ConfigError("image {}x{} too small for lesion radius {}".format(h, w, r))
        if self.samples_per_class < 1:
            raise ConfigError("samples_per_class must be at least 1")
        if self.lesion_radius[0] < 1 or self.lesion_radius[0] > self.lesion_radius[1]:
            raise ConfigError("bad lesion_radius range {}".format(self.lesion_radius))


@dataclass
class RunConfig:
    global_model: GlobalModelConfig = field(default_factory=GlobalModelConfig)
    local_model: LocalNetConfig = field(default_factory=LocalNetConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    patches: PatchExtractConfig = field(default_factory=PatchExtractConfig)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    epochs: int = 30
    batch_size: int = 32
    early_stopping_patience: int = 7
    seed: int = 0
    ablation: str = 'full'
    deterministic: bool = False
    workers: int = 4
    verbose: bool = False
    full_scale: bool = False

    def __post_init__(self) -> None:
        if self.local_model.num_classes is None:
            self.local_model.num_classes = self.global_model.num_classes
        if self.fusion.num_classes is None:
            self.fusion.num_classes = self.global_model.num_classes

    @property
    def num_classes(self) -> int:
        return self.global_model.num_classes

    @property
    def local_patch_size(self) -> int:
        """What patches are resized to before the local encoder"""
        if self.patches.output_size is not None:
            return self.patches.output_size
        return max(self.patches.patch_size, LOCAL_MIN_PATCH)

    def getoption(self, name: str) -> Any:
        return getattr(self, name)

    def validate(self) -> 'RunConfig':
        self.global_model.validate()
        self.local_model.validate()
        self.fusion.validate()
        self.patches.validate(self.global_model.input_size)
        self.loss_weights.validate()
        self.optimizer.validate()
        if self.local_model.num_classes != self.num_classes or self.fusion.num_classes != self.num_classes:
            raise ConfigError("num_classes differs between sections ({}, {}, {})"
                              .format(self.num_classes, self.local_model.num_classes, self.fusion.num_classes))
        if self.ablation not in ABLATIONS:
            raise ConfigError("ablation {} not one of {}".format(self.ablation, ABLATIONS))
        if self.epochs < 1 or self.batch_size < 1 or self.early_stopping_patience < 1:
            raise ConfigError("epochs, batch_size and early_stopping_patience must be at least 1")
        if self.seed < 0 or self.seed >= 1 << 64:
            raise ConfigError("seed {} is not a 64-bit unsigned integer".format(self.seed))
        return self

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    def replace(self, **changes: Any) -> 'RunConfig':
        """A deep copy with top-level fields changed"""
        ret = RunConfig.from_dict(self.to_dict())
        for k, v in changes.items():
            setattr(ret, k, v)
        return ret

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> 'RunConfig':
        d = dict(d)
        if d.get('full_scale'):
            # Explicit values still win over the full-scale ones.
            for key, val in FULL_SCALE.items():
                if isinstance(val, dict) and isinstance(d.get(key, {}), dict):
                    d[key] = dict(val, **d.get(key, {}))
                else:
                    d.setdefault(key, val)
        if isinstance(d.get('loss_weights'), str):
            d['loss_weights'] = dataclasses.asdict(LossWeights.preset(d['loss_weights']))
        return _from_dict(cls, d, '')

    @classmethod
    def from_json(cls, path: Optional[str], env: Mapping[str, str] = os.environ) -> 'RunConfig':
        """Load a JSON config (or defaults if path is None); UGPL_SEED overrides the seed"""
        d: Dict[str, Any] = {}
        if path is not None:
            try:
                with open(path) as f:
                    d = json.load(f)
            except (OSError, ValueError) as e:
                raise ConfigError("cannot read config {}: {}".format(path, e))
            if not isinstance(d, dict):
                raise ConfigError("config {} is not a JSON object".format(path))
        cfg = cls.from_dict(d)
        if 'UGPL_SEED' in env:
            try:
                cfg.seed = int(env['UGPL_SEED'])
            except ValueError:
                raise ConfigError("UGPL_SEED={} is not an integer".format(env['UGPL_SEED']))
        return cfg.validate()


# Values the desk-scale defaults replace.
FULL_SCALE: Dict[str, Any] = {
    'global_model': {'input_size': [256, 256]},
    'patches': {'patch_size': 64},
    'synthetic': {'image_size': [256, 256]},
    'batch_size': 96,
    'epochs': 100,
}

T = TypeVar('T')


def _from_dict(cls: Type[T], d: Mapping[str, Any], prefix: str) -> T:
    if not isinstance(d, Mapping):
        raise ConfigError("{} must be an object".format(prefix.rstrip('.') or 'config'))
    fields = {f.name: f for f in dataclasses.fields(cls)}  # type: ignore
    unknown = [k for k in d if k not in fields]
    if unknown:
        raise ConfigError("unknown config key{} {}".format('s' if len(unknown) > 1 else '',
                                                             ', '.join(prefix + k for k in unknown)))
    kwargs: Dict[str, Any] = {}
    for k, v in d.items():
        f = fields[k]
        if dataclasses.is_dataclass(f.type):
            kwargs[k] = _from_dict(f.type, v, prefix + k + '.')  # type: ignore
        elif isinstance(f.default, tuple) and isinstance(v, list):
            kwargs[k] = tuple(v)
        else:
            kwargs[k] = v
    try:
        return cls(**kwargs)  # type: ignore
    except TypeError as e:
        raise ConfigError("{}: {}".format(prefix.rstrip('.') or 'config', e))


def test_unknown_key() -> None:
    try:
        RunConfig.from_dict({'patches': {'patch_sise': 8}})
        assert False, "typo should be rejected"
    except ConfigError as e:
        assert 'patches.patch_sise' in str(e)


def test_presets() -> None:
    assert RunConfig.from_dict({'loss_weights': 'C4'}).loss_weights.lambda_u == 0.6
    assert abs(sum(LossWeights.preset('C1').by_component().values()) - 2.7) < 1e-12
