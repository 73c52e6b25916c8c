#! /usr/bin/python3
import json
import os
from . import checkpoint
from .config import RunConfig
from .errors import CheckpointError, ConfigError
from .fusion import FusionModel
from .global_model import GlobalModel
from .layers import Module
from .local_model import LocalModel
from .rng import RngState

CHECKPOINT_NAME = 'model.ugpl'
RUN_CONFIG_NAME = 'run_config.json'


def load_run_config(path: str) -> RunConfig:
    """The run_config.json saved beside a checkpoint"""
    cfgpath = os.path.join(os.path.dirname(os.path.abspath(path)), RUN_CONFIG_NAME)
    try:
        with open(cfgpath) as f:
            return RunConfig.from_dict(json.load(f))
    except (OSError, ValueError) as e:
        raise CheckpointError("cannot read {}: {}".format(cfgpath, e))
    except ConfigError as e:
        raise CheckpointError("{}: {}".format(cfgpath, e))


class UGPLModel(Module):
    """The global, local and fusion networks of one run"""
    def __init__(self, config: RunConfig):
        super().__init__()
        config.validate()
        self.config = config
        init = RngState(config.seed).child('init')
        self.global_model = self.add_child('global', GlobalModel(config.global_model, init.child('global').generator()))
        self.local_model = self.add_child('local', LocalModel(config.local_model, init.child('local').generator()))
        self.fusion = self.add_child('fusion', FusionModel(config.fusion, init.child('fusion').generator()))

    def save(self, out_dir: str, name: str = CHECKPOINT_NAME) -> str:
        """Write parameters and buffers, plus the config needed to rebuild them"""
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, name)
        checkpoint.save(path, self.state())
        with open(os.path.join(out_dir, RUN_CONFIG_NAME), 'w') as f:
            json.dump(self.config.to_dict(), f, indent=1, sort_keys=True)
        return path

    @classmethod
    def load(cls, path: str) -> 'UGPLModel':
        """Rebuild from a checkpoint and the run_config.json beside it"""
        config = load_run_config(path)
        model = cls(config)
        model.load_state(checkpoint.load(path))
        return model
