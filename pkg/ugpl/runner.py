#! /usr/bin/python3
import json
import logging
import math
import numpy as np
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from .config import RunConfig
from .data import Dataset, Sample, augment
from .errors import ConfigError
from .event import Event
from .losses import LossBreakdown
from .model import UGPLModel
from .optim import Adam, cosine_lr
from .rng import RngState
from .structure import Sequence, pipeline
from .tensor import no_grad, softmax
from typing import Any, Callable, Dict, IO, List, Optional, Union

logger = logging.getLogger(__name__)


class Runner(object):
    """Abstract base class for runners.

A runner owns the stash that pipeline events read from and write to;
the stash is emptied upon restart.

    """
    def __init__(self, config: RunConfig):
        self.config = config
        self.stash: Dict[str, Any] = {}
        self.training = False

    def post_check(self, sequence: Sequence) -> None:
        pass

    def restart(self) -> None:
        if self.config.getoption('verbose'):
            logger.debug("[RESTART]")
        self.stash = {}

    def run(self, events: Union[Sequence, List[Event], Event]) -> None:
        sequence = Sequence(events)
        self.start()
        while True:
            all_done = sequence.action(self)
            self.post_check(sequence)
            if all_done:
                self.stop()
                return
            self.restart()

    def add_stash(self, stashname: str, vals: Any) -> None:
        """Add an entry to the stash."""
        self.stash[stashname] = vals

    def get_stash(self, event: Event, stashname: str, default: Any = None) -> Any:
        """Get an entry from the stash; a missing one is a wiring mistake."""
        if stashname not in self.stash:
            if default is not None:
                return default
            raise ConfigError("{}: nothing stashed as {} (have {})"
                              .format(event, stashname, ', '.join(sorted(self.stash)) or 'nothing'))
        return self.stash[stashname]

    def start(self) -> None:
        pass

    def stop(self) -> None:
        pass

    # You need to implement these!
    def sample_rng(self, purpose: str, sample_id: str) -> RngState:
        raise NotImplementedError()

    def step(self, event: Event, losses: LossBreakdown) -> None:
        raise NotImplementedError()

    def collect(self, event: Event) -> None:
        raise NotImplementedError()

    def trial(self, event: Event, label: str, changes: Dict[str, Any]) -> None:
        raise NotImplementedError()


class ModelRunner(Runner):
    """Runs the per-batch pipeline of one model over batches of samples"""
    def __init__(self, config: RunConfig, model: UGPLModel, dataset: Dataset):
        super().__init__(config)
        self.model = model
        self.dataset = dataset
        self.epoch: Optional[int] = None
        self.pipeline = pipeline(config.ablation)

    def sample_rng(self, purpose: str, sample_id: str) -> RngState:
        """Per-sample stream: independent of batch composition and worker order"""
        when = 'eval' if self.epoch is None else 'epoch{}'.format(self.epoch)
        return RngState(self.config.seed).child(purpose).child(when).child(sample_id)

    def feed(self, samples: List[Sample], batch_id: str) -> None:
        images = np.stack([s.image for s in samples]).astype(np.float64)
        self.add_stash('images', self.dataset.normalize(images))
        self.add_stash('labels', np.array([s.label for s in samples], dtype=np.int64))
        self.add_stash('ids', [s.id for s in samples])
        self.add_stash('batch_id', batch_id)

    def run_batch(self, samples: List[Sample], batch_id: str) -> LossBreakdown:
        self.stash = {}
        self.feed(samples, batch_id)
        self.run(self.pipeline)
        return self.stash['losses']


def batches(samples: List[Sample], size: int) -> List[List[Sample]]:
    return [samples[i:i + size] for i in range(0, len(samples), size)]


class TrainRunner(ModelRunner):
    """Applies an optimizer step per batch and logs one JSON line per step"""
    def __init__(self, config: RunConfig, model: UGPLModel, dataset: Dataset,
                 log: Optional[IO[str]] = None):
        super().__init__(config, model, dataset)
        self.training = True
        self.optimizer = Adam(list(model.named_parameters()), config.optimizer)
        self.log = log
        self.global_step = 0
        self.records: List[Dict[str, Any]] = []

    def step(self, event: Event, losses: LossBreakdown) -> None:
        assert losses.loss is not None
        self.optimizer.zero_grad()
        losses.loss.backward()
        self.optimizer.step()
        record = {'epoch': self.epoch,
                  'step': self.global_step,
                  'batch': self.stash.get('batch_id'),
                  'lr': self.optimizer.lr,
                  'losses': losses.to_dict()}
        self.global_step += 1
        self.records.append(record)
        if self.log is not None:
            self.log.write(json.dumps(record, sort_keys=True) + '\n')

    def augmented(self, samples: List[Sample]) -> List[Sample]:
        """Augment in a worker pool; results keep the input order"""
        rngs = [self.sample_rng('augment', s.id) for s in samples]
        cfgs = [self.config.augment] * len(samples)
        if self.config.deterministic or self.config.workers <= 1:
            return list(map(augment, samples, rngs, cfgs))
        with ThreadPoolExecutor(max_workers=self.config.workers) as executor:
            return list(executor.map(augment, samples, rngs, cfgs))

    def train_epoch(self, epoch: int) -> float:
        """One pass over the training split; returns the mean total loss"""
        self.epoch = epoch
        self.optimizer.lr = cosine_lr(self.config.optimizer.lr, epoch, self.config.epochs)
        self.model.train()
        train = self.dataset.split('train')
        order = RngState(self.config.seed).child('shuffle').child('epoch{}'.format(epoch)).generator()
        samples = self.augmented([train[i] for i in order.permutation(len(train))])

        total, count = 0.0, 0
        for i, batch in enumerate(batches(samples, self.config.batch_size)):
            losses = self.run_batch(batch, 'epoch{}/batch{}'.format(epoch, i))
            total += losses.total * len(batch)
            count += len(batch)
        return total / max(count, 1)


@dataclass
class Predictions:
    """Per-sample outputs over one split, in split order"""
    ids: List[str] = field(default_factory=list)
    labels: List[int] = field(default_factory=list)
    global_pred: List[int] = field(default_factory=list)
    local_pred: List[int] = field(default_factory=list)
    fused_pred: List[int] = field(default_factory=list)
    global_scores: List[np.ndarray] = field(default_factory=list)
    fused_scores: List[np.ndarray] = field(default_factory=list)
    u_g: List[float] = field(default_factory=list)
    w_g: List[float] = field(default_factory=list)
    maps: List[np.ndarray] = field(default_factory=list)
    loss_sum: float = 0.0

    @property
    def mean_loss(self) -> float:
        return self.loss_sum / len(self.ids) if self.ids else math.nan

    @property
    def has_local(self) -> bool:
        return all(p >= 0 for p in self.local_pred)


class EvalRunner(ModelRunner):
    """Runs frozen: eval-mode batch norm, no gradient tape, no updates"""
    def __init__(self, config: RunConfig, model: UGPLModel, dataset: Dataset, keep_maps: bool = False):
        super().__init__(config, model, dataset)
        self.keep_maps = keep_maps
        self.predictions = Predictions()

    def collect(self, event: Event) -> None:
        p = self.predictions
        n = len(self.get_stash(event, 'ids'))
        z_g = self.get_stash(event, 'global').logits.data
        z_f = self.get_stash(event, 'fusion').fused_logits.data
        fusion = self.get_stash(event, 'fusion')
        local = self.stash.get('local')

        p.ids.extend(self.get_stash(event, 'ids'))
        p.labels.extend(int(v) for v in self.get_stash(event, 'labels'))
        p.global_pred.extend(int(v) for v in z_g.argmax(axis=-1))
        p.fused_pred.extend(int(v) for v in z_f.argmax(axis=-1))
        if local is None:
            p.local_pred.extend([-1] * n)
        else:
            p.local_pred.extend(int(v) for v in local.aggregated_logits.data.argmax(axis=-1))
        p.global_scores.extend(softmax(self.get_stash(event, 'global').logits).data)
        p.fused_scores.extend(softmax(fusion.fused_logits).data)
        p.u_g.extend(float(v) for v in fusion.u_g.data)
        p.w_g.extend(float(v) for v in fusion.w_g.data)
        if self.keep_maps:
            p.maps.extend(self.get_stash(event, 'umap').normalized.data)
        p.loss_sum += self.get_stash(event, 'losses').total * n

    def predict(self, samples: List[Sample]) -> Predictions:
        self.epoch = None
        self.predictions = Predictions()
        self.model.eval()
        try:
            with no_grad():
                for i, batch in enumerate(batches(samples, self.config.batch_size)):
                    self.run_batch(batch, 'eval/batch{}'.format(i))
        finally:
            self.model.train()
        return self.predictions


class ExperimentRunner(Runner):
    """Walks a TryAll of RunTrial events, one trial per pass.

trial_fn trains and evaluates one configuration and returns its result
row; rows survive restarts, the stash does not.

    """
    def __init__(self, config: RunConfig, trial_fn: Callable[[RunConfig, str], Dict[str, Any]]):
        super().__init__(config)
        self.trial_fn = trial_fn
        self.rows: List[Dict[str, Any]] = []

    def trial(self, event: Event, label: str, changes: Dict[str, Any]) -> None:
        logger.info("trial %s (%d done)", label, len(self.rows))
        cfg = self.config.replace(**changes).validate()
        row = {'trial': label}
        row.update(self.trial_fn(cfg, label))
        self.rows.append(row)
