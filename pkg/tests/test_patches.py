#! /usr/bin/python3
import dataclasses
import numpy as np
import pytest
from ugpl.config import PatchExtractConfig
from ugpl.errors import ConfigError, DomainError, ShapeError
from ugpl.patches import (brute_force_reference, extract_patches, fixed_patch_coords, fixed_patches,
                          upsample_map, window_sums)
from ugpl.rng import RngState
from typing import Tuple


def random_case(seed: int) -> Tuple[np.ndarray, np.ndarray, PatchExtractConfig]:
    gen = np.random.default_rng(seed)
    h, w = int(gen.integers(12, 33)), int(gen.integers(12, 33))
    mh, mw = int(gen.integers(2, h + 1)), int(gen.integers(2, w + 1))
    umap = gen.random((mh, mw))
    kind = seed % 4
    if kind == 1:
        # Sparse: most of the map is zero, so fallback gets exercised.
        umap *= gen.random((mh, mw)) > 0.85
    elif kind == 2:
        # Plateaus: many exact ties.
        umap = np.round(umap * 3) / 3
    elif kind == 3 and seed % 8 == 3:
        umap = np.zeros((mh, mw))
    cfg = PatchExtractConfig(patch_size=int(gen.choice([4, 8])),
                             num_patches=int(gen.integers(1, 4)),
                             margin=int(gen.integers(0, 4)) if seed % 3 else None,
                             suppression=['hard_mask', 'gaussian'][seed % 2],
                             selection=['window_mean', 'pixel_argmax'][(seed // 2) % 2])
    return gen.random((h, w, 1)), umap, cfg


def test_matches_brute_force() -> None:
    fallbacks = 0
    for seed in range(240):
        image, umap, cfg = random_case(seed)
        got = extract_patches(image, umap, cfg, RngState(seed))
        want = brute_force_reference(image, umap, cfg, RngState(seed))
        assert got.coords == want.coords, (seed, cfg)
        assert got.fallback_used == want.fallback_used, (seed, cfg)
        assert got.scores == want.scores, (seed, cfg)
        assert np.array_equal(got.patches, want.patches)
        fallbacks += sum(got.fallback_used)
    # The matrix must actually reach the fallback path.
    assert fallbacks > 0


def test_bounds_and_shapes() -> None:
    for seed in range(60):
        image, umap, cfg = random_case(seed)
        h, w = image.shape[:2]
        ps = extract_patches(image, umap, cfg, RngState(seed))
        assert len(ps) == cfg.num_patches
        assert ps.patches.shape == (cfg.num_patches, cfg.patch_size, cfg.patch_size, 1)
        for x, y in ps.coords:
            assert 0 <= x <= w - cfg.patch_size and 0 <= y <= h - cfg.patch_size


def test_extreme_sizes() -> None:
    image = np.random.default_rng(1).random((9, 13, 1))
    umap = np.random.default_rng(2).random((3, 3))
    for p in (1, 9):
        for k in (1, 6):
            cfg = PatchExtractConfig(patch_size=p, num_patches=k)
            ps = extract_patches(image, umap, cfg, RngState(0))
            assert all(0 <= x <= 13 - p and 0 <= y <= 9 - p for x, y in ps.coords)


def test_zero_map_falls_back() -> None:
    cfg = PatchExtractConfig(patch_size=8, num_patches=2)
    image = np.zeros((32, 32, 1))
    a = extract_patches(image, np.zeros((4, 4)), cfg, RngState(7))
    b = extract_patches(image, np.zeros((4, 4)), cfg, RngState(7))
    assert a.fallback_used == [True, True]
    assert a.coords == b.coords
    assert all(0 <= v <= 24 for xy in a.coords for v in xy)


def test_delta_peak_tie_break() -> None:
    umap = np.zeros((32, 32))
    umap[10, 10] = 1.0
    cfg = PatchExtractConfig(patch_size=8, num_patches=1)
    ps = extract_patches(np.zeros((32, 32, 1)), umap, cfg, RngState(0))
    assert ps.coords == [(3, 3)]
    assert ps.fallback_used == [False]

    argmax = dataclasses.replace(cfg, selection='pixel_argmax')
    assert extract_patches(np.zeros((32, 32, 1)), umap, argmax, RngState(0)).coords == [(10, 10)]


def test_two_peaks() -> None:
    umap = np.zeros((32, 32))
    umap[4, 4] = 1.0
    umap[24, 24] = 0.8
    cfg = PatchExtractConfig(patch_size=8, num_patches=2, margin=2)
    ps = extract_patches(np.zeros((32, 32, 1)), umap, cfg, RngState(0))
    (x0, y0), (x1, y1) = ps.coords
    assert x0 <= 4 < x0 + 8 and y0 <= 4 < y0 + 8
    assert x1 <= 24 < x1 + 8 and y1 <= 24 < y1 + 8
    assert ps.scores[0] >= ps.scores[1]
    assert ps.fallback_used == [False, False]


def test_corner_peak_clamped() -> None:
    umap = np.zeros((16, 16))
    umap[15, 15] = 1.0
    for selection in ('window_mean', 'pixel_argmax'):
        cfg = PatchExtractConfig(patch_size=4, num_patches=1, selection=selection)
        got = extract_patches(np.zeros((16, 16, 1)), umap, cfg, RngState(0))
        assert got.coords == [(12, 12)]
        assert got.coords == brute_force_reference(np.zeros((16, 16, 1)), umap, cfg, RngState(0)).coords


def test_constant_map_ties() -> None:
    cfg = PatchExtractConfig(patch_size=4, num_patches=3, margin=0)
    ps = extract_patches(np.zeros((16, 16, 1)), np.full((16, 16), 0.5), cfg, RngState(0))
    assert ps.coords == [(0, 0), (4, 0), (8, 0)]
    assert ps.coords == brute_force_reference(np.zeros((16, 16, 1)), np.full((16, 16), 0.5),
                                              cfg, RngState(0)).coords


def test_hard_mask_zero_overlap() -> None:
    for seed in range(40):
        gen = np.random.default_rng(seed)
        cfg = PatchExtractConfig(patch_size=6, num_patches=3, margin=int(gen.integers(0, 3)))
        ps = extract_patches(np.zeros((32, 32, 1)), gen.random((32, 32)), cfg, RngState(seed))
        mask = np.zeros((32, 32), dtype=bool)
        m = cfg.resolved_margin
        for (x, y), fb in zip(ps.coords, ps.fallback_used):
            if not fb:
                assert not mask[y:y + 6, x:x + 6].any()
            mask[max(0, y - m):y + 6 + m, max(0, x - m):x + 6 + m] = True
        if not any(ps.fallback_used):
            assert ps.scores == sorted(ps.scores, reverse=True)


def test_gaussian_damps_selected_peak() -> None:
    umap = np.zeros((32, 32))
    umap[10, 10] = 1.0
    umap[24, 24] = 0.5
    cfg = PatchExtractConfig(patch_size=4, num_patches=2, suppression='gaussian')
    ps = extract_patches(np.zeros((32, 32, 1)), umap, cfg, RngState(0))
    # The first peak sits 1.5 px off the patch center in each axis, so it
    # keeps 1 - exp(-4.5 / 8) of its value: below the second peak.
    assert ps.coords == [(7, 7), (21, 21)]


def test_output_size_resizes() -> None:
    cfg = PatchExtractConfig(patch_size=8, num_patches=2, output_size=16)
    ps = extract_patches(np.random.default_rng(0).random((32, 32, 1)), np.ones((4, 4)), cfg, RngState(0))
    assert ps.patches.shape == (2, 16, 16, 1)


def test_patch_contents() -> None:
    image = np.arange(256.0).reshape(16, 16, 1)
    umap = np.zeros((16, 16))
    umap[5, 9] = 1.0
    cfg = PatchExtractConfig(patch_size=4, num_patches=1, selection='pixel_argmax')
    ps = extract_patches(image, umap, cfg, RngState(0))
    assert ps.coords == [(9, 5)]
    assert np.array_equal(ps.patches[0], image[5:9, 9:13])


def test_errors() -> None:
    with pytest.raises(ConfigError):
        extract_patches(np.zeros((8, 8, 1)), np.zeros((2, 2)), PatchExtractConfig(patch_size=9), RngState(0))
    with pytest.raises(DomainError):
        extract_patches(np.full((8, 8, 1), np.nan), np.zeros((2, 2)), PatchExtractConfig(patch_size=4), RngState(0))
    with pytest.raises(ShapeError):
        upsample_map(np.zeros((9, 9)), (8, 8))


def test_upsample() -> None:
    assert np.allclose(upsample_map(np.full((3, 3), 0.25), (12, 9)), 0.25)
    assert np.allclose(upsample_map(np.array([[0.7]]), (5, 6)), 0.7)
    out = upsample_map(np.random.default_rng(0).random((4, 4)), (32, 32))
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_window_sums() -> None:
    a = np.random.default_rng(0).integers(0, 100, (7, 9))
    sums = window_sums(a, 3)
    assert sums.shape == (5, 7)
    for y in range(5):
        for x in range(7):
            assert sums[y, x] == a[y:y + 3, x:x + 3].sum()


def test_fixed_patches() -> None:
    assert fixed_patch_coords((64, 64), 16, 3) == [(0, 0), (24, 24), (48, 48)]
    assert fixed_patch_coords((64, 64), 16, 1) == [(24, 24)]
    ps = fixed_patches(np.zeros((64, 64, 1)), PatchExtractConfig(patch_size=16, num_patches=3))
    assert ps.patches.shape == (3, 16, 16, 1)
    assert ps.fallback_used == [False] * 3


def test_fixed_patches_square_grid() -> None:
    assert fixed_patch_coords((64, 64), 16, 4) == [(0, 0), (48, 0), (0, 48), (48, 48)]
    nine = fixed_patch_coords((64, 64), 16, 9)
    assert nine == [(x, y) for y in (0, 24, 48) for x in (0, 24, 48)]
    # Partial grids fill row-major.
    assert fixed_patch_coords((64, 64), 16, 2) == [(0, 0), (48, 0)]
    assert fixed_patch_coords((64, 32), 16, 5) == [(0, 0), (8, 0), (16, 0), (0, 24), (8, 24)]
    ps = fixed_patches(np.zeros((64, 64, 1)), PatchExtractConfig(patch_size=16, num_patches=4))
    assert ps.coords == [(0, 0), (48, 0), (0, 48), (48, 48)]
