"""Full-slice denoising by overlapped tiling.

Training uses fixed-size patches, so larger slices are covered by a grid
of overlapping tiles whose contributions are blended with a cosine ramp
across the overlap bands. Blending is done by convex incremental updates
(acc += w/(acc_w+w) * (tile - acc)), which is exactly value-preserving
wherever overlapping tiles agree — a single-tile cover or an identity
generator reproduces the input bit-for-bit.
"""

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .models import generator_forward

DEFAULT_TILE = 160
DEFAULT_OVERLAP = 16


def _tile_starts(size, tile, step):
    starts = list(range(0, size - tile + 1, step))
    if starts[-1] != size - tile:
        starts.append(size - tile)
    return starts


def _ramp_profile(tile, overlap, at_start_edge, at_end_edge):
    """Per-axis blend weight: cosine 0->1 over interior overlap bands."""
    w = np.ones(tile)
    ramp = 0.5 * (1.0 - np.cos(np.pi * (np.arange(overlap) + 0.5) / overlap))
    if not at_start_edge:
        w[:overlap] = ramp
    if not at_end_edge:
        w[-overlap:] = ramp[::-1]
    return w


def denoise_slice(gen_store, slice_unit, tile=DEFAULT_TILE, overlap=DEFAULT_OVERLAP,
                  batch=4):
    """Denoise one unit-scaled [H,W] slice; returns the same shape."""
    img = np.asarray(slice_unit, dtype=np.float64)
    if img.ndim != 2:
        raise ConfigError(f"expected a 2-D slice, got shape {img.shape}")
    h, w = img.shape
    tile_h, tile_w = min(tile, h), min(tile, w)
    if overlap < 1 or overlap >= min(tile_h, tile_w):
        raise ConfigError(f"overlap {overlap} must be in [1, tile)")
    step_h, step_w = tile_h - overlap, tile_w - overlap

    jobs = []
    for r in _tile_starts(h, tile_h, step_h):
        for c in _tile_starts(w, tile_w, step_w):
            wr = _ramp_profile(tile_h, overlap, r == 0, r + tile_h == h)
            wc = _ramp_profile(tile_w, overlap, c == 0, c + tile_w == w)
            jobs.append((r, c, np.outer(wr, wc)))

    acc = np.zeros((h, w))
    acc_w = np.zeros((h, w))
    for start in range(0, len(jobs), batch):
        chunk = jobs[start : start + batch]
        tiles = np.stack([img[r : r + tile_h, c : c + tile_w] for r, c, _ in chunk])
        with T.no_grad():
            out = generator_forward(gen_store, T.constant(tiles[:, None])).data[:, 0]
        for (r, c, wgt), den in zip(chunk, out):
            view_v = acc[r : r + tile_h, c : c + tile_w]
            view_w = acc_w[r : r + tile_h, c : c + tile_w]
            total = view_w + wgt
            view_v += (wgt / total) * (den - view_v)
            view_w += wgt
    return acc
