"""Semantic-probe maps, semantic-base maps, VS-CAM and Grad-CAM heatmaps.

All inputs here are plain arrays: a feature grid F of shape (W, H, D) captured
from one block, and the gradient of the class score at that activation with
the same shape. Heatmaps come out resized to the input resolution and min-max
normalized to [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError

__all__ = [
    "MEASURES",
    "ProbeMapSet",
    "SemanticBaseMap",
    "Heatmap",
    "compute_probe_maps",
    "compute_semantic_base",
    "compose_vscam",
    "gradcam",
    "topology_map",
    "resize_bilinear",
    "normalize_heatmap",
]

MEASURES = ("euclidean", "angle", "projection", "inner")

_NORM_TOL = 1e-12


@dataclass
class ProbeMapSet:
    """One similarity matrix per vertex: maps[w, h] is the WxH matrix S_{w,h}."""

    width: int
    height: int
    channels: int
    measure: str
    maps: np.ndarray  # (W, H, W, H)

    def probe(self, w: int, h: int) -> np.ndarray:
        return self.maps[w, h]

    @property
    def n_probes(self) -> int:
        return self.width * self.height


@dataclass
class SemanticBaseMap:
    q: np.ndarray  # (W, H)
    class_index: int
    layer: int = -1


@dataclass
class Heatmap:
    values: np.ndarray  # (H_out, W_out) in [0, 1]
    source: str         # "vscam" | "gradcam" | "topology"
    class_index: int = -1


def _check_feature_grid(f: np.ndarray) -> np.ndarray:
    f = np.asarray(f, dtype=np.float64)
    if f.ndim != 3 or min(f.shape) == 0:
        raise ShapeError(f"expected a (W, H, D) feature grid, got {f.shape}")
    return f


def compute_probe_maps(f, measure: str = "inner") -> ProbeMapSet:
    """Similarity of every vertex pair under the chosen measure.

    inner: dot product. angle: cosine. projection: dot / |probed vertex|,
    i.e. S_{w,h}(i,j) projects F(w,h) onto F(i,j). euclidean: L2 distance.
    Zero vectors get similarity 0 under angle/projection.
    """
    f = _check_feature_grid(f)
    w, h, d = f.shape
    flat = f.reshape(w * h, d)
    if measure == "inner":
        s = flat @ flat.T
    elif measure == "angle":
        g = flat @ flat.T
        norms = np.linalg.norm(flat, axis=1)
        denom = np.outer(norms, norms)
        s = np.divide(g, denom, out=np.zeros_like(g), where=denom > _NORM_TOL)
    elif measure == "projection":
        g = flat @ flat.T
        norms = np.linalg.norm(flat, axis=1)
        denom = np.broadcast_to(norms[None, :], g.shape)
        s = np.divide(g, denom, out=np.zeros_like(g), where=denom > _NORM_TOL)
    elif measure == "euclidean":
        sq = np.sum(flat ** 2, axis=1)
        d2 = sq[:, None] + sq[None, :] - 2.0 * (flat @ flat.T)
        s = np.sqrt(np.maximum(d2, 0.0))
        np.fill_diagonal(s, 0.0)
    else:
        raise ValueError(f"unknown similarity measure {measure!r}; choose from {MEASURES}")
    return ProbeMapSet(width=w, height=h, channels=d, measure=measure,
                       maps=s.reshape(w, h, w, h))


def compute_semantic_base(grad, class_index: int, layer: int = -1) -> SemanticBaseMap:
    """Gradient-only base map: channels weighted by their own spatial sums.

    Q(i,j) = sum_d omega_d * grad_d(i,j) with omega_d = sum_{i,j} grad_d(i,j).
    """
    grad = _check_feature_grid(grad)
    omega = grad.sum(axis=(0, 1))           # (D,)
    q = grad @ omega                        # (W, H)
    return SemanticBaseMap(q=q, class_index=class_index, layer=layer)


def resize_bilinear(src: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel centers (the usual image convention)."""
    src = np.asarray(src, dtype=np.float64)
    in_h, in_w = src.shape
    if (in_h, in_w) == (out_h, out_w):
        return src.copy()

    def axis_coords(n_in, n_out):
        c = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        c = np.clip(c, 0, n_in - 1)
        lo = np.floor(c).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, c - lo

    r0, r1, rt = axis_coords(in_h, out_h)
    c0, c1, ct = axis_coords(in_w, out_w)
    top = src[np.ix_(r0, c0)] * (1 - ct)[None, :] + src[np.ix_(r0, c1)] * ct[None, :]
    bot = src[np.ix_(r1, c0)] * (1 - ct)[None, :] + src[np.ix_(r1, c1)] * ct[None, :]
    return top * (1 - rt)[:, None] + bot * rt[:, None]


def normalize_heatmap(raw: np.ndarray) -> np.ndarray:
    """Min-max to [0, 1]; a constant map normalizes to all zeros."""
    raw = np.asarray(raw, dtype=np.float64)
    lo, hi = raw.min(), raw.max()
    if hi - lo < _NORM_TOL:
        return np.zeros_like(raw)
    return (raw - lo) / (hi - lo)


def probe_contributions(probes: ProbeMapSet, base: SemanticBaseMap) -> np.ndarray:
    """Frobenius inner product of every probe map with the base map, shape (W, H)."""
    if probes.maps.shape[2:] != base.q.shape:
        raise ShapeError(f"probe maps {probes.maps.shape[2:]} and base map {base.q.shape} disagree")
    return np.tensordot(probes.maps, base.q, axes=([2, 3], [0, 1]))


def compose_vscam(probes: ProbeMapSet, base: SemanticBaseMap, top_k=None,
                  out_size=(224, 224)) -> Heatmap:
    """Couple probe maps with the base map into the VS-CAM heatmap.

    raw(i,j) = <S_{i,j}, Q>; with top_k set, only the top_k probes by
    |contribution| keep their value, the rest contribute 0. The raw grid is
    bilinearly resized to out_size and min-max normalized.
    """
    contrib = probe_contributions(probes, base)
    n = probes.n_probes
    if top_k is None or top_k == "all":
        top_k = n
    top_k = int(top_k)
    if not 1 <= top_k <= n:
        raise ValueError(f"top_k must be in [1, {n}], got {top_k}")
    raw = contrib
    if top_k < n:
        flat = contrib.ravel()
        keep = np.argsort(-np.abs(flat), kind="stable")[:top_k]
        masked = np.zeros_like(flat)
        masked[keep] = flat[keep]
        raw = masked.reshape(contrib.shape)
    out_h, out_w = out_size
    values = normalize_heatmap(resize_bilinear(raw, out_h, out_w))
    return Heatmap(values=values, source="vscam", class_index=base.class_index)


def gradcam(f, grad, out_size=(224, 224), class_index: int = -1,
            relu_clamp: bool = False) -> Heatmap:
    """Channel-weighted feature sum: alpha_d = spatial sum of grad_d, M = sum alpha_d F_d.

    No ReLU on the raw map by default; relu_clamp enables the conventional clamp.
    """
    f = _check_feature_grid(f)
    grad = _check_feature_grid(grad)
    if f.shape != grad.shape:
        raise ShapeError(f"features {f.shape} and gradient {grad.shape} disagree")
    alpha = grad.sum(axis=(0, 1))
    raw = f @ alpha
    if relu_clamp:
        raw = np.maximum(raw, 0.0)
    out_h, out_w = out_size
    values = normalize_heatmap(resize_bilinear(raw, out_h, out_w))
    return Heatmap(values=values, source="gradcam", class_index=class_index)


def topology_map(f, vertex, measure: str = "inner", out_size=(224, 224),
                 ref_side: int | None = None) -> Heatmap:
    """The single probe map of one vertex, showing where it connects.

    When the feature grid is larger than the reference grid it is average-pooled
    down first so vertex coordinates line up across blocks.
    """
    f = _check_feature_grid(f)
    w, h, d = f.shape
    if ref_side is not None and (w != ref_side or h != ref_side):
        if w % ref_side or h % ref_side:
            raise ShapeError(f"grid {w}x{h} not divisible down to reference {ref_side}x{ref_side}")
        pw, ph = w // ref_side, h // ref_side
        f = f.reshape(ref_side, pw, ref_side, ph, d).mean(axis=(1, 3))
        w = h = ref_side
    vw, vh = vertex
    if not (0 <= vw < w and 0 <= vh < h):
        raise ValueError(f"vertex {vertex} out of range for {w}x{h} grid")
    probes = compute_probe_maps(f, measure)
    raw = probes.probe(vw, vh)
    out_h, out_w = out_size
    values = normalize_heatmap(resize_bilinear(raw, out_h, out_w))
    return Heatmap(values=values, source="topology")
