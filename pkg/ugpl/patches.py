#! /usr/bin/python3
"""Uncertainty-guided greedy patch extraction.

The normalized uncertainty map is upsampled to image resolution, then K
times: the best unsuppressed location is picked, its margin-extended
neighbourhood suppressed, and the patch cut out.

Window scores are quantized onto a 2^-40 grid and summed as int64, so
the summed-area table and the exhaustive scan in brute_force_reference
rank windows identically, ties included.

"""
import math
import numpy as np
import scipy.ndimage
from dataclasses import dataclass, field
from .config import PatchExtractConfig
from .errors import ShapeError, DomainError
from .rng import RngState
from typing import Callable, List, Optional, Tuple

QUANTUM = float(1 << 40)
GAUSSIAN_FLOOR = 1e-12

Selector = Callable[[np.ndarray, np.ndarray, PatchExtractConfig], Optional[Tuple[int, int, float]]]


@dataclass
class PatchSet:
    patches: np.ndarray                  # [K, S, S, 1]
    coords: List[Tuple[int, int]] = field(default_factory=list)   # top-left (x, y)
    fallback_used: List[bool] = field(default_factory=list)
    scores: List[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.coords)


def resize_bilinear(arr: np.ndarray, size: Tuple[int, int]) -> np.ndarray:
    """Corner-aligned bilinear resize of a 2-D array"""
    arr = np.asarray(arr, dtype=np.float64)
    if arr.shape == tuple(size):
        return arr.copy()
    zoom = (size[0] / arr.shape[0], size[1] / arr.shape[1])
    out = scipy.ndimage.zoom(arr, zoom, order=1, mode='nearest', grid_mode=False)
    # Interpolation is convex: keep rounding from leaving the input range.
    return np.clip(out, arr.min(), arr.max())


def upsample_map(umap: np.ndarray, target: Tuple[int, int]) -> np.ndarray:
    umap = np.asarray(umap, dtype=np.float64)
    if umap.ndim != 2 or umap.shape[0] > target[0] or umap.shape[1] > target[1]:
        raise ShapeError('upsample_map', umap.shape, tuple(target))
    return resize_bilinear(umap, target)


def quantize(v: np.ndarray) -> np.ndarray:
    return np.rint(v * QUANTUM).astype(np.int64)


def window_sums(a: np.ndarray, p: int) -> np.ndarray:
    """Sum of every p x p window, indexed by top-left, via a summed-area table"""
    h, w = a.shape
    sat = np.zeros((h + 1, w + 1), dtype=np.int64)
    sat[1:, 1:] = a.astype(np.int64).cumsum(axis=0).cumsum(axis=1)
    return sat[p:, p:] - sat[:-p, p:] - sat[p:, :-p] + sat[:-p, :-p]


def _prepare(image: np.ndarray, umap: np.ndarray, cfg: PatchExtractConfig) -> Tuple[np.ndarray, np.ndarray]:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3:
        if img.shape[2] != 1:
            raise ShapeError('extract_patches', img.shape)
        img = img[:, :, 0]
    if img.ndim != 2:
        raise ShapeError('extract_patches', img.shape)
    cfg.validate(img.shape)
    if not np.all(np.isfinite(img)) or not np.all(np.isfinite(umap)):
        raise DomainError('extract_patches', "non-finite image or uncertainty map")
    return img, upsample_map(umap, img.shape)


def _fallback(gen: np.random.Generator, h: int, w: int, p: int) -> Tuple[int, int]:
    y = int(gen.integers(0, h - p + 1))
    x = int(gen.integers(0, w - p + 1))
    return y, x


def _suppress(u: np.ndarray, mask: np.ndarray, y: int, x: int, cfg: PatchExtractConfig) -> None:
    """Update the mask (hard_mask) or damp u (gaussian) around the patch at (y, x)"""
    h, w = u.shape
    p, m = cfg.patch_size, cfg.resolved_margin
    y0, y1 = max(0, y - m), min(h, y + p + m)
    x0, x1 = max(0, x - m), min(w, x + p + m)
    if cfg.suppression == 'hard_mask':
        mask[y0:y1, x0:x1] = True
    else:
        cy, cx = y + (p - 1) / 2, x + (p - 1) / 2
        yy, xx = np.mgrid[y0:y1, x0:x1]
        g = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * cfg.resolved_sigma ** 2))
        u[y0:y1, x0:x1] *= 1.0 - g


def _cut(img: np.ndarray, y: int, x: int, p: int, out: int) -> np.ndarray:
    patch = img[y:y + p, x:x + p]
    if patch.shape != (out, out):
        patch = resize_bilinear(patch, (out, out))
    return patch


def _exhausted(v: np.ndarray, cfg: PatchExtractConfig) -> bool:
    return bool(v.max() <= (0.0 if cfg.suppression == 'hard_mask' else GAUSSIAN_FLOOR))


def _select_fast(q: np.ndarray, mask: np.ndarray, cfg: PatchExtractConfig) -> Optional[Tuple[int, int, float]]:
    h, w = q.shape
    p = cfg.patch_size
    if cfg.selection == 'pixel_argmax':
        py, px = np.unravel_index(int(np.argmax(q)), q.shape)
        return min(int(py), h - p), min(int(px), w - p), q[py, px] / QUANTUM
    sums = window_sums(q, p)
    if cfg.suppression == 'hard_mask':
        sums[window_sums(mask, p) > 0] = -1
    best = int(np.argmax(sums))
    y, x = divmod(best, sums.shape[1])
    if sums[y, x] < 0:
        return None
    return y, x, sums[y, x] / QUANTUM / (p * p)


def _select_exhaustive(q: np.ndarray, mask: np.ndarray, cfg: PatchExtractConfig) -> Optional[Tuple[int, int, float]]:
    h, w = q.shape
    p = cfg.patch_size
    if cfg.selection == 'pixel_argmax':
        by, bx = 0, 0
        for yy in range(h):
            for xx in range(w):
                if q[yy, xx] > q[by, bx]:
                    by, bx = yy, xx
        return min(by, h - p), min(bx, w - p), q[by, bx] / QUANTUM

    best: Optional[Tuple[int, int, int]] = None
    for y in range(h - p + 1):
        for x in range(w - p + 1):
            if cfg.suppression == 'hard_mask' and mask[y:y + p, x:x + p].any():
                continue
            s = int(q[y:y + p, x:x + p].sum())
            if best is None or s > best[0]:
                best = (s, y, x)
    if best is None:
        return None
    return best[1], best[2], best[0] / QUANTUM / (p * p)


def _greedy(image: np.ndarray, umap: np.ndarray, cfg: PatchExtractConfig, rng: RngState,
            select: Selector) -> PatchSet:
    img, u = _prepare(image, umap, cfg)
    h, w = img.shape
    p = cfg.patch_size
    out = cfg.resolved_output_size
    mask = np.zeros((h, w), dtype=bool)
    gen = rng.generator()

    patches = []
    ret = PatchSet(patches=np.zeros((0, out, out, 1)))
    for _ in range(cfg.num_patches):
        v = np.where(mask, 0.0, u)
        q = quantize(v)
        choice = None if _exhausted(v, cfg) else select(q, mask, cfg)
        if choice is None:
            y, x = _fallback(gen, h, w, p)
            score = q[y:y + p, x:x + p].sum() / QUANTUM / (p * p)
            ret.fallback_used.append(True)
        else:
            y, x, score = choice
            ret.fallback_used.append(False)
        ret.coords.append((x, y))
        ret.scores.append(float(score))
        _suppress(u, mask, y, x, cfg)
        patches.append(_cut(img, y, x, p, out))

    ret.patches = np.stack(patches)[..., None]
    return ret


def extract_patches(image: np.ndarray, umap: np.ndarray, cfg: PatchExtractConfig, rng: RngState) -> PatchSet:
    """Select K patches of image guided by the [h, w] normalized uncertainty map"""
    return _greedy(image, umap, cfg, rng, _select_fast)


def brute_force_reference(image: np.ndarray, umap: np.ndarray, cfg: PatchExtractConfig, rng: RngState) -> PatchSet:
    """extract_patches by exhaustive scan of every candidate at every step"""
    return _greedy(image, umap, cfg, rng, _select_exhaustive)


def fixed_patch_coords(size: Tuple[int, int], p: int, k: int) -> List[Tuple[int, int]]:
    """K top-left (x, y) positions on a centered square grid, filled row-major.

The grid is ceil(sqrt(K)) cells a side, spread evenly across the image.
K=3 is the exception: image thirds along the main diagonal.

    """
    h, w = size

    def spread(side: int, n: int) -> List[int]:
        if n == 1:
            return [(side - p) // 2]
        return [int(round(i * (side - p) / (n - 1))) for i in range(n)]

    if k == 3:
        return list(zip(spread(w, 3), spread(h, 3)))
    g = int(math.ceil(math.sqrt(k)))
    return [(x, y) for y in spread(h, g) for x in spread(w, g)][:k]


def fixed_patches(image: np.ndarray, cfg: PatchExtractConfig) -> PatchSet:
    """Predefined patch locations, ignoring any uncertainty"""
    img, _ = _prepare(image, np.zeros((1, 1)), cfg)
    p, out = cfg.patch_size, cfg.resolved_output_size
    coords = fixed_patch_coords(img.shape, p, cfg.num_patches)
    patches = np.stack([_cut(img, y, x, p, out) for x, y in coords])[..., None]
    return PatchSet(patches=patches, coords=coords,
                    fallback_used=[False] * len(coords), scores=[0.0] * len(coords))


def test_upsample_corner_aligned() -> None:
    out = upsample_map(np.array([[0.0, 1.0], [0.0, 1.0]]), (2, 4))
    assert np.allclose(out, [[0, 1 / 3, 2 / 3, 1]] * 2)
