#! /usr/bin/python3
import json
import pathlib
import pytest
from ugpl.config import LossWeights, RunConfig
from ugpl.errors import ConfigError


def test_defaults_validate() -> None:
    cfg = RunConfig.from_json(None, env={})
    assert cfg.num_classes == 3
    assert cfg.local_model.num_classes == 3 and cfg.fusion.num_classes == 3
    assert cfg.patches.resolved_margin == 4
    assert cfg.patches.resolved_sigma == 8.0


def test_local_patch_size() -> None:
    assert RunConfig.from_dict({'patches': {'patch_size': 8}}).local_patch_size == 16
    assert RunConfig.from_dict({'patches': {'patch_size': 24}}).local_patch_size == 24
    assert RunConfig.from_dict({'patches': {'patch_size': 8, 'output_size': 32}}).local_patch_size == 32


def test_from_json(tmp_path: pathlib.Path) -> None:
    path = tmp_path / 'cfg.json'
    path.write_text(json.dumps({'epochs': 3, 'patches': {'num_patches': 2}, 'loss_weights': 'C7'}))
    cfg = RunConfig.from_json(str(path), env={})
    assert cfg.epochs == 3 and cfg.patches.num_patches == 2 and cfg.patches.patch_size == 16
    assert cfg.loss_weights == LossWeights.preset('C7')
    assert RunConfig.from_json(str(path), env={'UGPL_SEED': '42'}).seed == 42

    with pytest.raises(ConfigError):
        RunConfig.from_json(str(path), env={'UGPL_SEED': 'forty-two'})
    with pytest.raises(ConfigError):
        RunConfig.from_json(str(tmp_path / 'missing.json'), env={})
    path.write_text('[1, 2]')
    with pytest.raises(ConfigError):
        RunConfig.from_json(str(path), env={})
    path.write_text('{"epochs": ')
    with pytest.raises(ConfigError):
        RunConfig.from_json(str(path), env={})


def test_full_scale() -> None:
    cfg = RunConfig.from_dict({'full_scale': True})
    assert tuple(cfg.global_model.input_size) == (256, 256)
    assert cfg.patches.patch_size == 64 and cfg.batch_size == 96 and cfg.epochs == 100
    cfg.validate()
    # Explicit values win.
    cfg = RunConfig.from_dict({'full_scale': True, 'patches': {'patch_size': 32}, 'epochs': 5})
    assert cfg.patches.patch_size == 32 and cfg.epochs == 5


@pytest.mark.parametrize('bad', [
    {'global_model': {'input_size': [60, 64]}},
    {'global_model': {'downsample_factor': 6}},
    {'global_model': {'feature_dim': 32}},
    {'global_model': {'num_classes': 1}},
    {'local_model': {'encoder_channels': [8, 4, 8, 8]}},
    {'patches': {'patch_size': 128}},
    {'patches': {'suppression': 'nms'}},
    {'patches': {'selection': 'centroid'}},
    {'loss_weights': {'lambda_d': -0.1}},
    {'loss_weights': 'C11'},
    {'optimizer': {'kind': 'sgd'}},
    {'ablation': 'no_fusion'},
    {'epochs': 0},
    {'seed': -1},
    {'fusion': {'num_classes': 4}},
])
def test_invalid(bad: dict) -> None:
    with pytest.raises(ConfigError):
        RunConfig.from_dict(bad).validate()


def test_bad_types() -> None:
    with pytest.raises(ConfigError):
        RunConfig.from_dict({'patches': 16})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({'epochs': 3, 'epoch': 4})


def test_replace_is_deep() -> None:
    base = RunConfig.from_dict({})
    other = base.replace(ablation='global_only')
    other.patches.patch_size = 8
    assert base.ablation == 'full' and base.patches.patch_size == 16
    assert other.validate().ablation == 'global_only'


def test_roundtrip_dict() -> None:
    cfg = RunConfig.from_dict({'patches': {'patch_size': 8, 'margin': 1}, 'seed': 9})
    again = RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg
