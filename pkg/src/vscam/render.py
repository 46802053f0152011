"""PNG rendering: grayscale heatmaps, jet overlays, tiled probe grids."""

from __future__ import annotations

import io

import numpy as np
from PIL import Image

from .cam import Heatmap, ProbeMapSet, normalize_heatmap
from .tensor import ShapeError

__all__ = [
    "jet",
    "heatmap_png",
    "overlay_png",
    "probe_grid_png",
    "annotate_vertices_png",
    "image_png",
    "render",
]


def jet(values: np.ndarray) -> np.ndarray:
    """Classic jet colormap: 0 -> dark blue, 1 -> dark red. Returns uint8 RGB."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    r = np.clip(1.5 - np.abs(4.0 * v - 3.0), 0.0, 1.0)
    g = np.clip(1.5 - np.abs(4.0 * v - 2.0), 0.0, 1.0)
    b = np.clip(1.5 - np.abs(4.0 * v - 1.0), 0.0, 1.0)
    return (np.stack([r, g, b], axis=-1) * 255.0).round().astype(np.uint8)


def _png_bytes(img: Image.Image) -> bytes:
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def _values(heatmap) -> np.ndarray:
    return heatmap.values if isinstance(heatmap, Heatmap) else np.asarray(heatmap)


def heatmap_png(heatmap) -> bytes:
    """8-bit grayscale PNG of a [0,1] heatmap."""
    v = np.clip(_values(heatmap), 0.0, 1.0)
    return _png_bytes(Image.fromarray((v * 255.0).round().astype(np.uint8), mode="L"))


def _image_rgb(image) -> np.ndarray:
    """(3, H, W) floats in [0,1] -> (H, W, 3) uint8."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ShapeError(f"expected a (3, H, W) image, got {arr.shape}")
    return (np.clip(arr, 0, 1).transpose(1, 2, 0) * 255.0).round().astype(np.uint8)


def image_png(image) -> bytes:
    return _png_bytes(Image.fromarray(_image_rgb(image), mode="RGB"))


def overlay_png(heatmap, image, alpha: float = 0.5) -> bytes:
    """Jet-colored heatmap alpha-blended onto the image."""
    v = _values(heatmap)
    rgb = _image_rgb(image)
    if v.shape != rgb.shape[:2]:
        raise ShapeError(f"heatmap {v.shape} does not match image {rgb.shape[:2]}")
    colored = jet(v).astype(np.float64)
    blended = (1.0 - alpha) * rgb.astype(np.float64) + alpha * colored
    return _png_bytes(Image.fromarray(blended.round().astype(np.uint8), mode="RGB"))


def probe_grid_png(probes: ProbeMapSet, separator: int = 1, sep_value: int = 128) -> bytes:
    """All probe maps tiled in raster order with thin separators, each tile
    min-max normalized on its own."""
    w, h = probes.width, probes.height
    tile_h, tile_w = w, h
    grid_h = w * tile_h + (w - 1) * separator
    grid_w = h * tile_w + (h - 1) * separator
    canvas = np.full((grid_h, grid_w), sep_value, dtype=np.uint8)
    for i in range(w):
        for j in range(h):
            tile = normalize_heatmap(probes.probe(i, j))
            r = i * (tile_h + separator)
            c = j * (tile_w + separator)
            canvas[r:r + tile_h, c:c + tile_w] = (tile * 255.0).round().astype(np.uint8)
    return _png_bytes(Image.fromarray(canvas, mode="L"))


_VERTEX_COLORS = [(255, 0, 0), (0, 255, 0), (0, 0, 255), (255, 255, 0)]


def annotate_vertices_png(image, vertices, ref_side: int) -> bytes:
    """Mark each reference-grid vertex as a colored square outline on the image."""
    rgb = _image_rgb(image).copy()
    side = rgb.shape[0]
    cell = side // ref_side
    for idx, (vw, vh) in enumerate(vertices):
        color = _VERTEX_COLORS[idx % len(_VERTEX_COLORS)]
        r0, c0 = vw * cell, vh * cell
        r1, c1 = min(r0 + cell, side) - 1, min(c0 + cell, side) - 1
        rgb[r0, c0:c1 + 1] = color
        rgb[r1, c0:c1 + 1] = color
        rgb[r0:r1 + 1, c0] = color
        rgb[r0:r1 + 1, c1] = color
    return _png_bytes(Image.fromarray(rgb, mode="RGB"))


def render(obj, base_image=None, mode: str = "raw_png") -> bytes:
    """Dispatch by mode: raw_png, jet_overlay_png, probe_grid_png."""
    if mode == "raw_png":
        return heatmap_png(obj)
    if mode == "jet_overlay_png":
        return overlay_png(obj, base_image)
    if mode == "probe_grid_png":
        return probe_grid_png(obj)
    raise ValueError(f"unknown render mode {mode!r}")
