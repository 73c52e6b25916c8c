#! /usr/bin/python3
"""Synthetic CT-like phantoms, the on-disk dataset format, and augmentation.

A dataset directory holds:

    images/<id>.pgm   8-bit binary PGM
    labels.csv        id,filename,label
    meta.json         class names, generator config, seed, splits,
                      normalization stats, per-file CRC32C

"""
import csv
import dataclasses
import json
import logging
import os
import crc32c
import numpy as np
import scipy.ndimage
import skimage.draw
from dataclasses import dataclass, field
from PIL import Image
from .config import AugmentConfig, SyntheticConfig
from .errors import DatasetError
from .patches import resize_bilinear
from .rng import RngState
from typing import Any, Dict, List, Optional, Sequence, Tuple

logger = logging.getLogger(__name__)

CLASS_NAMES = ['normal', 'focal_lesion', 'diffuse_texture']
SPLITS = ('train', 'val', 'test')
SPLIT_FRACTIONS = (0.6, 0.2)


@dataclass
class Sample:
    image: np.ndarray      # [H, W, 1], raw values in [0, 1]
    label: int
    id: str


@dataclass
class Dataset:
    samples: List[Sample]
    class_names: List[str]
    splits: Dict[str, List[str]]
    mean: float = 0.0
    std: float = 1.0
    meta: Dict[str, Any] = field(default_factory=dict)

    def split(self, name: str) -> List[Sample]:
        if name not in self.splits:
            raise DatasetError(["no split named {} (have {})".format(name, ', '.join(self.splits))])
        by_id = {s.id: s for s in self.samples}
        return [by_id[i] for i in self.splits[name]]

    def normalize(self, images: np.ndarray) -> np.ndarray:
        return (images - self.mean) / self.std

    def compute_stats(self) -> None:
        """Normalization statistics over the training split only"""
        train = np.stack([s.image for s in self.split('train')])
        self.mean = float(train.mean())
        self.std = float(train.std()) or 1.0


def write_pgm(path: str, values: np.ndarray) -> None:
    """Write [H, W] values in [0, 1] as 8-bit PGM (round(255 v))"""
    q = np.round(255.0 * np.clip(values, 0.0, 1.0)).astype(np.uint8)
    Image.fromarray(q).save(path, format='PPM')


def read_pgm(path: str) -> np.ndarray:
    """Read an 8-bit grayscale PGM as [H, W] floats in [0, 1]"""
    with Image.open(path) as im:
        if im.mode != 'L':
            raise ValueError("{} is mode {}, not 8-bit grayscale".format(path, im.mode))
        return np.asarray(im, dtype=np.float64) / 255.0


def file_crc(path: str) -> int:
    with open(path, 'rb') as f:
        return crc32c.crc32c(f.read())


def _phantom(gen: np.random.Generator, cfg: SyntheticConfig, label: int) -> np.ndarray:
    h, w = cfg.image_size
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    cy = h / 2 + gen.uniform(-0.05, 0.05) * h
    cx = w / 2 + gen.uniform(-0.05, 0.05) * w
    ay = gen.uniform(0.30, 0.40) * h
    ax = gen.uniform(0.30, 0.40) * w
    r = np.sqrt(((yy - cy) / ay) ** 2 + ((xx - cx) / ax) ** 2)
    body = gen.uniform(0.35, 0.45) / (1.0 + np.exp(-(1.0 - r) / 0.05))

    if label == 1:
        rad = int(gen.integers(cfg.lesion_radius[0], cfg.lesion_radius[1] + 1))
        contrast = gen.uniform(*cfg.lesion_contrast)
        theta = gen.uniform(0, 2 * np.pi)
        s = 0.6 * np.sqrt(gen.uniform())
        ly = int(np.clip(round(cy + s * ay * np.sin(theta)), rad, h - 1 - rad))
        lx = int(np.clip(round(cx + s * ax * np.cos(theta)), rad, w - 1 - rad))
        rr, cc = skimage.draw.disk((ly, lx), rad, shape=(h, w))
        body[rr, cc] += contrast
    elif label == 2:
        noise = gen.standard_normal((h, w))
        band = scipy.ndimage.gaussian_filter(noise, 1.0) - scipy.ndimage.gaussian_filter(noise, 3.0)
        body += 0.08 * band / (band.std() + 1e-12) * (r < 1.0)

    body += gen.normal(0.0, cfg.noise_sigma, (h, w))
    return np.clip(body, 0.0, 1.0)[:, :, None]


def stratified_split(ids: Sequence[str], labels: Sequence[int], rng: RngState) -> Dict[str, List[str]]:
    """60/20/20 per class, order fixed by the seed alone"""
    gen = rng.generator()
    ret: Dict[str, List[str]] = {s: [] for s in SPLITS}
    for c in sorted(set(labels)):
        members = [i for i, lab in zip(ids, labels) if lab == c]
        members = [members[j] for j in gen.permutation(len(members))]
        ntrain = int(round(SPLIT_FRACTIONS[0] * len(members)))
        nval = int(round(SPLIT_FRACTIONS[1] * len(members)))
        ret['train'] += members[:ntrain]
        ret['val'] += members[ntrain:ntrain + nval]
        ret['test'] += members[ntrain + nval:]
    return ret


def synthesize(cfg: SyntheticConfig) -> Dataset:
    """Balanced three-class phantom dataset; identical for identical configs"""
    cfg.validate()
    root = RngState(cfg.seed).child('synth')
    samples = []
    for label, cname in enumerate(CLASS_NAMES):
        for i in range(cfg.samples_per_class):
            sid = '{}-{:05d}'.format(cname, i)
            samples.append(Sample(image=_phantom(root.child(sid).generator(), cfg, label), label=label, id=sid))
    splits = stratified_split([s.id for s in samples], [s.label for s in samples],
                              RngState(cfg.seed).child('split'))
    ds = Dataset(samples=samples, class_names=list(CLASS_NAMES), splits=splits,
                 meta={'generator': dataclasses.asdict(cfg), 'seed': cfg.seed})
    ds.compute_stats()
    logger.info("synthesized %d samples (%s)", len(samples),
                ', '.join('{} {}'.format(s, len(v)) for s, v in splits.items()))
    return ds


def write_dataset(ds: Dataset, out_dir: str) -> None:
    imgdir = os.path.join(out_dir, 'images')
    os.makedirs(imgdir, exist_ok=True)
    checksums = {}
    with open(os.path.join(out_dir, 'labels.csv'), 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(['id', 'filename', 'label'])
        for s in ds.samples:
            fname = os.path.join('images', s.id + '.pgm')
            write_pgm(os.path.join(out_dir, fname), s.image[:, :, 0])
            checksums[fname] = file_crc(os.path.join(out_dir, fname))
            writer.writerow([s.id, fname, s.label])

    # Stats as the loader will see them, after 8-bit quantization.
    train_ids = set(ds.splits['train'])
    train = np.stack([np.round(255.0 * s.image) / 255.0 for s in ds.samples if s.id in train_ids])
    meta = dict(ds.meta)
    meta.update({'class_names': ds.class_names,
                 'splits': ds.splits,
                 'normalization': {'mean': float(train.mean()), 'std': float(train.std())},
                 'crc32c': checksums})
    with open(os.path.join(out_dir, 'meta.json'), 'w') as f:
        json.dump(meta, f, indent=1, sort_keys=True)


def load_dataset(data_dir: str, image_size: Optional[Tuple[int, int]] = None, seed: int = 0) -> Dataset:
    """Load a dataset directory; every bad file is collected before failing.

Without splits in meta.json the samples are split stratified, seeded by seed.

    """
    problems: List[str] = []
    labels_path = os.path.join(data_dir, 'labels.csv')
    meta_path = os.path.join(data_dir, 'meta.json')
    if not os.path.isdir(data_dir):
        raise DatasetError(["{}: no such directory".format(data_dir)])

    meta: Dict[str, Any] = {}
    if os.path.exists(meta_path):
        try:
            with open(meta_path) as f:
                meta = json.load(f)
        except (OSError, ValueError) as e:
            problems.append("{}: {}".format(meta_path, e))
    class_names = meta.get('class_names', list(CLASS_NAMES))
    checksums = meta.get('crc32c', {})

    rows: List[Dict[str, str]] = []
    try:
        with open(labels_path, newline='') as f:
            rows = list(csv.DictReader(f))
    except OSError as e:
        problems.append("{}: {}".format(labels_path, e))
    if not rows and not problems:
        problems.append("{}: 0 samples found".format(data_dir))

    samples = []
    for lineno, row in enumerate(rows, start=2):
        sid, fname, lab = row.get('id'), row.get('filename'), row.get('label')
        if not sid or not fname or lab is None:
            problems.append("labels.csv line {}: missing id, filename or label".format(lineno))
            continue
        path = os.path.join(data_dir, fname)
        try:
            label = int(lab)
        except ValueError:
            problems.append("{}: label {!r} is not an integer".format(fname, lab))
            continue
        if not 0 <= label < len(class_names):
            problems.append("{}: label {} out of range for {} classes".format(fname, label, len(class_names)))
            continue
        try:
            img = read_pgm(path)
        except (OSError, ValueError) as e:
            problems.append("{}: unreadable ({})".format(fname, e))
            continue
        if fname in checksums and file_crc(path) != checksums[fname]:
            problems.append("{}: checksum mismatch".format(fname))
            continue
        if image_size is not None and img.shape != tuple(image_size):
            img = resize_bilinear(img, image_size)
        samples.append(Sample(image=img[:, :, None], label=label, id=sid))

    if problems:
        raise DatasetError(problems)

    splits = meta.get('splits')
    ids = {s.id for s in samples}
    if splits is None:
        splits = stratified_split([s.id for s in samples], [s.label for s in samples], RngState(seed).child('split'))
    else:
        stale = sorted(i for v in splits.values() for i in v if i not in ids)
        if stale:
            raise DatasetError(["meta.json split names unknown sample {}".format(i) for i in stale])
    ds = Dataset(samples=samples, class_names=class_names, splits=splits, meta=meta)
    ds.compute_stats()
    logger.info("loaded %d samples from %s", len(samples), data_dir)
    return ds


def flip(image: np.ndarray, horizontal: bool) -> np.ndarray:
    return image[:, ::-1] if horizontal else image[::-1, :]


def scale_intensity(image: np.ndarray, brightness: float = 1.0, contrast: float = 1.0) -> np.ndarray:
    """Multiplicative brightness, then contrast about the mean, clipped to [0, 1]"""
    out = image * brightness
    if contrast == 1.0:
        return np.clip(out, 0.0, 1.0)
    m = out.mean()
    return np.clip((out - m) * contrast + m, 0.0, 1.0)


def augment(sample: Sample, rng: RngState, cfg: Optional[AugmentConfig] = None) -> Sample:
    """Random flips, rotation, integer shift and intensity jitter (training only)"""
    if cfg is None:
        cfg = AugmentConfig()
    if not cfg.enabled:
        return sample
    gen = rng.generator()
    img = sample.image[:, :, 0]
    h, w = img.shape
    if cfg.hflip and gen.random() < 0.5:
        img = flip(img, horizontal=True)
    if cfg.vflip and gen.random() < 0.5:
        img = flip(img, horizontal=False)
    if cfg.rotation > 0:
        angle = gen.uniform(-cfg.rotation, cfg.rotation)
        img = scipy.ndimage.rotate(img, angle, reshape=False, order=1, mode='nearest')
    if cfg.shift > 0:
        dy = int(gen.integers(-int(cfg.shift * h), int(cfg.shift * h) + 1))
        dx = int(gen.integers(-int(cfg.shift * w), int(cfg.shift * w) + 1))
        img = scipy.ndimage.shift(img, (dy, dx), order=0, mode='nearest')
    brightness = gen.uniform(1 - cfg.brightness, 1 + cfg.brightness) if cfg.brightness > 0 else 1.0
    contrast = gen.uniform(1 - cfg.contrast, 1 + cfg.contrast) if cfg.contrast > 0 else 1.0
    img = scale_intensity(img, brightness, contrast)
    return Sample(image=np.ascontiguousarray(img)[:, :, None], label=sample.label, id=sample.id)


def test_intensity_closed_form() -> None:
    out = scale_intensity(np.full((4, 4), 0.5), brightness=1.1)
    assert np.allclose(out, 0.55)
