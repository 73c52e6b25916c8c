#! /usr/bin/python3
"""Training with early stopping, evaluation reports, and ablation matrices.

Every run directory holds:

    model.ugpl        best-validation checkpoint
    run_config.json   the RunConfig it was trained with
    train_log.jsonl   one record per optimizer step
    history.json      per-epoch lr, losses and early-stopping state

"""
import csv
import dataclasses
import json
import logging
import math
import os
import numpy as np
import sklearn.metrics
from dataclasses import dataclass, field
from .config import ABLATIONS, LOSS_PRESETS, LossWeights, RunConfig
from .data import Dataset
from .errors import CheckpointError, DatasetError
from .event import RunTrial
from .evidential import dump_map
from .model import CHECKPOINT_NAME, UGPLModel
from .runner import EvalRunner, ExperimentRunner, Predictions, TrainRunner
from .structure import TryAll
from typing import Any, Dict, List, Optional, Sequence

logger = logging.getLogger(__name__)

TRAIN_LOG = 'train_log.jsonl'
HISTORY = 'history.json'
SWEEP_PATCH_SIZES = (8, 16, 24)
SWEEP_NUM_PATCHES = (2, 3, 4)


@dataclass
class ComponentMetrics:
    accuracy: float
    macro_f1: float


@dataclass
class MetricsReport:
    accuracy: float
    macro_f1: float
    per_class_f1: List[float]
    confusion: List[List[int]]
    per_component: Dict[str, ComponentMetrics]
    mean_u_g: float
    mean_w_g: float
    # class name -> {'u_g_mean', 'u_g_std', 'w_g_mean'}
    uncertainty_by_class: Dict[str, Dict[str, float]] = field(default_factory=dict)
    # 'global' / 'fused' -> one-vs-rest AUC per class (None if undefined)
    roc_auc: Dict[str, List[Optional[float]]] = field(default_factory=dict)
    split: str = 'test'
    num_samples: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)


@dataclass
class TrainResult:
    checkpoint: str
    best_epoch: int
    best_val_loss: float
    epochs_run: int
    history: List[Dict[str, Any]]


def classification_metrics(labels: Sequence[int], preds: Sequence[int],
                           num_classes: int) -> Dict[str, Any]:
    """accuracy, macro_f1, per_class_f1 and confusion (rows = true class)"""
    classes = list(range(num_classes))
    confusion = sklearn.metrics.confusion_matrix(labels, preds, labels=classes)
    per_class = sklearn.metrics.f1_score(labels, preds, labels=classes, average=None, zero_division=0)
    total = int(confusion.sum())
    return {'accuracy': float(np.trace(confusion)) / total if total else math.nan,
            'macro_f1': float(np.mean(per_class)),
            'per_class_f1': [float(f) for f in per_class],
            'confusion': confusion.astype(int).tolist()}


def _roc_auc(labels: np.ndarray, scores: np.ndarray, num_classes: int) -> List[Optional[float]]:
    ret: List[Optional[float]] = []
    for c in range(num_classes):
        positive = labels == c
        if positive.all() or not positive.any():
            ret.append(None)
        else:
            ret.append(float(sklearn.metrics.roc_auc_score(positive, scores[:, c])))
    return ret


def metrics_report(preds: Predictions, class_names: List[str], split: str) -> MetricsReport:
    num_classes = len(class_names)
    main = classification_metrics(preds.labels, preds.fused_pred, num_classes)
    per_component = {'fused': ComponentMetrics(main['accuracy'], main['macro_f1'])}
    g = classification_metrics(preds.labels, preds.global_pred, num_classes)
    per_component['global'] = ComponentMetrics(g['accuracy'], g['macro_f1'])
    if preds.has_local:
        loc = classification_metrics(preds.labels, preds.local_pred, num_classes)
        per_component['local'] = ComponentMetrics(loc['accuracy'], loc['macro_f1'])

    labels = np.array(preds.labels)
    u_g, w_g = np.array(preds.u_g), np.array(preds.w_g)
    by_class = {}
    for c, name in enumerate(class_names):
        sel = labels == c
        if sel.any():
            by_class[name] = {'u_g_mean': float(u_g[sel].mean()),
                              'u_g_std': float(u_g[sel].std()),
                              'w_g_mean': float(w_g[sel].mean())}

    return MetricsReport(accuracy=main['accuracy'], macro_f1=main['macro_f1'],
                         per_class_f1=main['per_class_f1'], confusion=main['confusion'],
                         per_component=per_component,
                         mean_u_g=float(u_g.mean()), mean_w_g=float(w_g.mean()),
                         uncertainty_by_class=by_class,
                         roc_auc={'global': _roc_auc(labels, np.array(preds.global_scores), num_classes),
                                  'fused': _roc_auc(labels, np.array(preds.fused_scores), num_classes)},
                         split=split, num_samples=len(preds.ids))


def train(cfg: RunConfig, dataset: Dataset, out_dir: str) -> TrainResult:
    """Train with cosine lr and early stopping on validation loss.

The checkpoint in out_dir is only ever replaced by one with strictly
lower validation loss.

    """
    cfg.validate()
    if len(dataset.class_names) != cfg.num_classes:
        raise DatasetError(["dataset has {} classes, config expects {}"
                            .format(len(dataset.class_names), cfg.num_classes)])
    val = dataset.split('val')
    if not val or not dataset.split('train'):
        raise DatasetError(["train and val splits must both be non-empty"])
    os.makedirs(out_dir, exist_ok=True)

    model = UGPLModel(cfg)
    evaluator = EvalRunner(cfg, model, dataset)
    history: List[Dict[str, Any]] = []
    best, best_epoch, stale = math.inf, -1, 0
    path = os.path.join(out_dir, CHECKPOINT_NAME)

    with open(os.path.join(out_dir, TRAIN_LOG), 'w') as log:
        trainer = TrainRunner(cfg, model, dataset, log)
        for epoch in range(cfg.epochs):
            train_loss = trainer.train_epoch(epoch)
            val_loss = evaluator.predict(val).mean_loss
            if val_loss < best:
                best, best_epoch, stale = val_loss, epoch, 0
                model.save(out_dir)
            else:
                stale += 1
            history.append({'epoch': epoch, 'lr': trainer.optimizer.lr,
                            'train_loss': train_loss, 'val_loss': val_loss,
                            'best_epoch': best_epoch, 'stale_epochs': stale})
            logger.info("epoch %d: lr %.3g train %.4f val %.4f%s", epoch, trainer.optimizer.lr,
                        train_loss, val_loss, ' (best)' if best_epoch == epoch else '')
            if stale >= cfg.early_stopping_patience:
                logger.info("early stop after epoch %d, best was %d", epoch, best_epoch)
                break

    if best_epoch < 0:
        # Every validation loss was nan: keep the final weights.
        model.save(out_dir)
    with open(os.path.join(out_dir, HISTORY), 'w') as f:
        json.dump(history, f, indent=1)
    return TrainResult(checkpoint=path, best_epoch=best_epoch, best_val_loss=best,
                       epochs_run=len(history), history=history)


def write_predictions_csv(path: str, preds: Predictions, class_names: List[str]) -> None:
    with open(path, 'w', newline='') as f:
        w = csv.writer(f)
        w.writerow(['id', 'label', 'global_pred', 'local_pred', 'fused_pred', 'u_g', 'w_g']
                   + ['score_' + n for n in class_names])
        for i, sid in enumerate(preds.ids):
            w.writerow([sid, preds.labels[i], preds.global_pred[i], preds.local_pred[i],
                        preds.fused_pred[i], repr(preds.u_g[i]), repr(preds.w_g[i])]
                       + [repr(float(s)) for s in preds.fused_scores[i]])


def evaluate(checkpoint: str, dataset: Dataset, split: str = 'test',
             out_dir: Optional[str] = None, dump_maps: bool = False) -> MetricsReport:
    """Report on one split; with out_dir, also write metrics JSON and a per-sample CSV"""
    model = UGPLModel.load(checkpoint)
    if model.config.num_classes != len(dataset.class_names):
        raise CheckpointError("{} has {} classes, dataset has {}"
                              .format(checkpoint, model.config.num_classes, len(dataset.class_names)))
    samples = dataset.split(split)
    if not samples:
        raise DatasetError(["split {} is empty".format(split)])
    preds = EvalRunner(model.config, model, dataset, keep_maps=dump_maps).predict(samples)
    report = metrics_report(preds, dataset.class_names, split)
    logger.info("%s: accuracy %.4f macro_f1 %.4f over %d samples",
                split, report.accuracy, report.macro_f1, report.num_samples)

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, 'metrics_{}.json'.format(split)), 'w') as f:
            json.dump(report.to_dict(), f, indent=1, sort_keys=True)
        write_predictions_csv(os.path.join(out_dir, 'predictions_{}.csv'.format(split)),
                              preds, dataset.class_names)
        if dump_maps:
            mapdir = os.path.join(out_dir, 'maps')
            os.makedirs(mapdir, exist_ok=True)
            for sid, m in zip(preds.ids, preds.maps):
                dump_map(os.path.join(mapdir, sid + '.pgm'), m)
    return report


def _row(cfg: RunConfig, report: MetricsReport, result: TrainResult) -> Dict[str, Any]:
    row: Dict[str, Any] = {'ablation': cfg.ablation,
                           'patch_size': cfg.patches.patch_size,
                           'num_patches': cfg.patches.num_patches,
                           'accuracy': report.accuracy,
                           'macro_f1': report.macro_f1,
                           'mean_u_g': report.mean_u_g,
                           'mean_w_g': report.mean_w_g,
                           'best_epoch': result.best_epoch,
                           'best_val_loss': result.best_val_loss}
    for name in ('global', 'local', 'fused'):
        comp = report.per_component.get(name)
        row[name + '_accuracy'] = comp.accuracy if comp else None
        row[name + '_macro_f1'] = comp.macro_f1 if comp else None
    row.update({'lambda_' + k: v for k, v in cfg.loss_weights.by_component().items()})
    return row


def trials(base_cfg: RunConfig, sweep: bool = False, loss_sweep: bool = False) -> List[RunTrial]:
    """The ablation modes, then the optional patch and loss-weight sweeps"""
    ret = [RunTrial(mode, ablation=mode) for mode in ABLATIONS]
    if sweep:
        for p in SWEEP_PATCH_SIZES:
            for k in SWEEP_NUM_PATCHES:
                ret.append(RunTrial('P{}-K{}'.format(p, k), ablation='full',
                                    patches=dataclasses.replace(base_cfg.patches, patch_size=p, num_patches=k)))
    if loss_sweep:
        for name in LOSS_PRESETS:
            ret.append(RunTrial(name, ablation='full', loss_weights=LossWeights.preset(name)))
    return ret


def ablate(base_cfg: RunConfig, dataset: Dataset, out_dir: str,
           sweep: bool = False, loss_sweep: bool = False) -> List[Dict[str, Any]]:
    """Train and test each trial; writes ablation.json and ablation.csv"""
    os.makedirs(out_dir, exist_ok=True)

    def run_trial(cfg: RunConfig, label: str) -> Dict[str, Any]:
        tdir = os.path.join(out_dir, label)
        result = train(cfg, dataset, tdir)
        return _row(cfg, evaluate(result.checkpoint, dataset, 'test', tdir), result)

    runner = ExperimentRunner(base_cfg, run_trial)
    runner.run(TryAll(*trials(base_cfg, sweep, loss_sweep)))

    with open(os.path.join(out_dir, 'ablation.json'), 'w') as f:
        json.dump(runner.rows, f, indent=1)
    with open(os.path.join(out_dir, 'ablation.csv'), 'w', newline='') as f:
        w = csv.DictWriter(f, fieldnames=list(runner.rows[0]))
        w.writeheader()
        w.writerows(runner.rows)
    return runner.rows


def test_metrics_closed_form() -> None:
    m = classification_metrics([0, 1, 1, 1], [0, 0, 1, 1], 2)
    assert m['accuracy'] == 0.75
    assert abs(m['per_class_f1'][0] - 2 / 3) < 1e-12
    assert abs(m['per_class_f1'][1] - 0.8) < 1e-12
    assert abs(m['macro_f1'] - 0.7333333333) < 1e-9
