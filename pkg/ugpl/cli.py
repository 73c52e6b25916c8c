#! /usr/bin/python3
"""Command line: ugpl synth | train | eval | ablate | gradcheck | extract-patches

Exit status is 0 on success, 1 on a usage or configuration error and 2
when a run fails.

"""
import argparse
import csv
import dataclasses
import logging
import os
import sys
from . import harness
from .config import RunConfig
from .data import load_dataset, read_pgm, synthesize, write_dataset, write_pgm
from .errors import CheckpointError, ConfigError, DatasetError, DomainError, EventError, ShapeError
from .gradcheck import pipeline_suite
from .model import load_run_config
from .patches import extract_patches
from .rng import RngState
from typing import List, NoReturn, Optional

logger = logging.getLogger('ugpl')

RUNTIME_ERRORS = (EventError, ShapeError, DomainError, DatasetError, CheckpointError, OSError)


class ArgumentParser(argparse.ArgumentParser):
    """Usage errors exit 1: 2 is reserved for failed runs"""
    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(1, '{}: error: {}\n'.format(self.prog, message))


def _existing_dir(path: str) -> str:
    if not os.path.isdir(path):
        raise argparse.ArgumentTypeError("no such directory: {}".format(path))
    return path


def _existing_file(path: str) -> str:
    if not os.path.isfile(path):
        raise argparse.ArgumentTypeError("no such file: {}".format(path))
    return path


def _config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.from_json(args.config)
    cfg.verbose = args.verbose
    if getattr(args, 'deterministic', False):
        cfg.deterministic = True
    return cfg


def cmd_synth(args: argparse.Namespace) -> None:
    cfg = _config(args)
    syn = dataclasses.replace(cfg.synthetic, samples_per_class=args.per_class, seed=args.seed)
    write_dataset(synthesize(syn), args.out)


def cmd_train(args: argparse.Namespace) -> None:
    cfg = _config(args)
    dataset = load_dataset(args.data, cfg.global_model.input_size, cfg.seed)
    result = harness.train(cfg, dataset, args.out)
    logger.info("best epoch %d (val loss %.4f), checkpoint %s",
                result.best_epoch, result.best_val_loss, result.checkpoint)


def cmd_eval(args: argparse.Namespace) -> None:
    cfg = load_run_config(args.checkpoint)
    dataset = load_dataset(args.data, cfg.global_model.input_size, cfg.seed)
    out = args.out or os.path.dirname(os.path.abspath(args.checkpoint))
    report = harness.evaluate(args.checkpoint, dataset, args.split, out, dump_maps=args.dump_maps)
    for name, comp in sorted(report.per_component.items()):
        print("{:8} accuracy {:.4f} macro_f1 {:.4f}".format(name, comp.accuracy, comp.macro_f1))


def cmd_ablate(args: argparse.Namespace) -> None:
    cfg = _config(args)
    dataset = load_dataset(args.data, cfg.global_model.input_size, cfg.seed)
    rows = harness.ablate(cfg, dataset, args.out, sweep=args.sweep, loss_sweep=args.loss_sweep)
    for row in rows:
        print("{:14} fused {:.4f} global {:.4f}".format(row['trial'], row['fused_accuracy'], row['global_accuracy']))


def cmd_gradcheck(args: argparse.Namespace) -> None:
    reports = pipeline_suite(tol=args.tol, seed=args.seed,
                             max_elements=args.max_elements if args.max_elements > 0 else None)
    for r in reports:
        print(r)
    failed = [r.name for r in reports if not r.passed]
    if failed:
        raise DomainError('gradcheck', "failed for {}".format(', '.join(failed)))


def cmd_extract_patches(args: argparse.Namespace) -> None:
    cfg = _config(args)
    pcfg = cfg.patches
    image = read_pgm(args.image)
    umap = read_pgm(args.map)
    name = os.path.splitext(os.path.basename(args.image))[0]
    patches = extract_patches(image, umap, pcfg, RngState(cfg.seed).child('patches').child(name))

    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, 'coords.csv'), 'w', newline='') as f:
        w = csv.writer(f)
        w.writerow(['k', 'x', 'y', 'score', 'fallback'])
        for k, ((x, y), score, fb) in enumerate(zip(patches.coords, patches.scores, patches.fallback_used)):
            write_pgm(os.path.join(args.out, '{}-patch{}.pgm'.format(name, k)), patches.patches[k, :, :, 0])
            w.writerow([k, x, y, repr(score), int(fb)])


def parser() -> ArgumentParser:
    top = ArgumentParser(prog='ugpl', description='Uncertainty-guided patch pipeline for CT-like images')
    top.add_argument('--verbose', '-v', action='store_true', help='debug logging, with pipeline tracing')
    sub = top.add_subparsers(dest='command', metavar='COMMAND')
    sub.required = True

    p = sub.add_parser('synth', help='write a synthetic dataset')
    p.add_argument('--out', required=True)
    p.add_argument('--per-class', type=int, default=200)
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--config', type=_existing_file, help='JSON config (synthetic section)')
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser('train', help='train one configuration')
    p.add_argument('--config', type=_existing_file)
    p.add_argument('--data', type=_existing_dir, required=True)
    p.add_argument('--out', required=True)
    p.add_argument('--deterministic', action='store_true', help='fully sequential, bit-exact')
    p.set_defaults(func=cmd_train)

    p = sub.add_parser('eval', help='evaluate a checkpoint on one split')
    p.add_argument('--checkpoint', type=_existing_file, required=True)
    p.add_argument('--data', type=_existing_dir, required=True)
    p.add_argument('--split', default='test', choices=['train', 'val', 'test'])
    p.add_argument('--out', help='report directory (default: beside the checkpoint)')
    p.add_argument('--dump-maps', action='store_true', help='write normalized uncertainty maps as PGM')
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser('ablate', help='train and test every ablation mode')
    p.add_argument('--config', type=_existing_file)
    p.add_argument('--data', type=_existing_dir, required=True)
    p.add_argument('--out', required=True)
    p.add_argument('--sweep', action='store_true', help='also sweep patch size and count')
    p.add_argument('--loss-sweep', action='store_true', help='also run every loss-weight preset')
    p.add_argument('--deterministic', action='store_true')
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser('gradcheck', help='finite-difference check of every loss component')
    p.add_argument('--tol', type=float, default=1e-4)
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--max-elements', type=int, default=3, help='elements checked per parameter (0: all)')
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser('extract-patches', help='select patches of one image given its uncertainty map')
    p.add_argument('--image', type=_existing_file, required=True)
    p.add_argument('--map', type=_existing_file, required=True)
    p.add_argument('--config', type=_existing_file)
    p.add_argument('--out', required=True)
    p.set_defaults(func=cmd_extract_patches)
    return top


def main(argv: Optional[List[str]] = None) -> int:
    args = parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    if not hasattr(args, 'config'):
        args.config = None
    try:
        args.func(args)
    except ConfigError as e:
        logger.error("configuration: %s", e)
        return 1
    except RUNTIME_ERRORS as e:
        logger.error("%s", e)
        return 2
    return 0


if __name__ == '__main__':
    sys.exit(main())
