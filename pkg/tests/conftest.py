#! /usr/bin/python3
import pytest
import ugpl
from typing import Any, List


def pytest_addoption(parser: Any) -> None:
    parser.addoption("--run-slow", action="store_true", default=False,
                     help="also run the end-to-end training experiments marked slow")


def pytest_collection_modifyitems(config: Any, items: List[Any]) -> None:
    if config.getoption("--run-slow"):
        return
    skip = pytest.mark.skip(reason="needs --run-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


# Small enough to train for a couple of epochs in seconds.
TINY_CONFIG = {
    'global_model': {'input_size': [32, 32], 'backbone_channels': [4, 8, 8],
                     'feature_dim': 8, 'evidence_hidden': 8},
    'local_model': {'encoder_channels': [4, 4, 8, 8], 'cls_hidden': 8, 'conf_hidden': 8},
    'fusion': {'hidden_dim': 8},
    'patches': {'patch_size': 8, 'num_patches': 2},
    'synthetic': {'image_size': [32, 32], 'samples_per_class': 20},
    'epochs': 2,
    'batch_size': 32,
    'workers': 1,
    'deterministic': True,
}


@pytest.fixture()
def tiny_config() -> ugpl.RunConfig:
    return ugpl.RunConfig.from_dict(TINY_CONFIG).validate()


@pytest.fixture()
def tiny_dataset(tiny_config: ugpl.RunConfig) -> ugpl.Dataset:
    ds = ugpl.synthesize(tiny_config.synthetic)
    ds.compute_stats()
    return ds
