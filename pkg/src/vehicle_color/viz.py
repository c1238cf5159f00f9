"""Tiled rendering of first-layer convolution kernels."""

import math

import numpy as np

from .model import BASE_NETWORKS

GAP = 1
BACKGROUND = 255

# 3x5 bitmaps for the grid labels.
_DIGITS = {
    "1": ["010", "110", "010", "010", "111"],
    "2": ["111", "001", "111", "100", "111"],
}


def normalize_kernel(kernel):
    """Min-max scale one (3, k, k) kernel to [0, 255]; constant kernels become 128."""
    lo, hi = float(kernel.min()), float(kernel.max())
    if hi == lo:
        return np.full(kernel.shape, 128, dtype=np.uint8)
    return np.rint((kernel - lo) * (255.0 / (hi - lo))).astype(np.uint8)


def tile_kernels(weights, cols=None):
    """Grid of (O, 3, k, k) kernels -> (3, H, W) uint8 with 1-pixel gaps."""
    n, _, k, _ = weights.shape
    cols = cols or math.ceil(math.sqrt(n))
    rows = math.ceil(n / cols)
    step = k + GAP
    img = np.full((3, rows * step - GAP, cols * step - GAP), BACKGROUND, dtype=np.uint8)
    for idx in range(n):
        r, c = divmod(idx, cols)
        img[:, r * step : r * step + k, c * step : c * step + k] = normalize_kernel(weights[idx])
    return img


def tile_positions(n, k, cols=None):
    """Top-left corners of each tile inside :func:`tile_kernels` output."""
    cols = cols or math.ceil(math.sqrt(n))
    step = k + GAP
    return [(divmod(i, cols)[0] * step, divmod(i, cols)[1] * step) for i in range(n)]


def _label(text, scale):
    glyph = np.array([[ch == "1" for ch in row] for row in _DIGITS[text]], dtype=bool)
    glyph = np.kron(glyph, np.ones((scale, scale), dtype=bool))
    img = np.full((3,) + glyph.shape, BACKGROUND, dtype=np.uint8)
    img[:, glyph] = 0
    return img


def kernel_figure(state, layer="conv1"):
    """Both base networks' first-layer kernels, each grid under a numeric label.

    Returns ``(image, grid_origins)`` where ``grid_origins`` gives the
    top-left pixel of each network's tile grid.
    """
    grids = [tile_kernels(state.params[f"{net}.{layer}.weights"]) for net in BASE_NETWORKS]
    k = state.params[f"{BASE_NETWORKS[0]}.{layer}.weights"].shape[2]
    scale = max(1, k // 7)
    label_h = 5 * scale
    margin = 4
    height = max(g.shape[1] for g in grids) + label_h + 3 * margin
    width = sum(g.shape[2] for g in grids) + (len(grids) + 1) * margin * 2
    canvas = np.full((3, height, width), BACKGROUND, dtype=np.uint8)
    origins = []
    x = 2 * margin
    for i, grid in enumerate(grids):
        lab = _label(str(i + 1), scale)
        canvas[:, margin : margin + lab.shape[1], x : x + lab.shape[2]] = lab
        y = 2 * margin + label_h
        canvas[:, y : y + grid.shape[1], x : x + grid.shape[2]] = grid
        origins.append((y, x))
        x += grid.shape[2] + 2 * margin
    return canvas, origins
