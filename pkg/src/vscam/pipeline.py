"""Glue between the model and the CAM engine: one call from image to heatmap."""

from __future__ import annotations

import numpy as np

from .cam import Heatmap, compose_vscam, compute_probe_maps, compute_semantic_base, gradcam
from .model import ViGModel, model_forward, softmax
from .tensor import Tape

__all__ = ["class_gradients", "generate_heatmap"]


def class_gradients(model: ViGModel, image, layer: int = -1, class_index=None,
                    score_mode: str = "logit", precision: str = "single"):
    """Forward with capture, backward from the (masked) class score.

    Returns (features (W,H,D), gradient (W,H,D), class index, softmax probs).
    score_mode picks what gets differentiated: the raw logit or the softmax
    probability of the class.
    """
    tape = Tape(precision)
    logits, cap = model_forward(model, image, capture=True, tape=tape)
    probs = softmax(logits.data)
    c = int(np.argmax(probs)) if class_index is None else int(class_index)
    if not 0 <= c < logits.data.shape[0]:
        raise ValueError(f"class index {c} out of range")
    n_classes = logits.data.shape[0]
    onehot = np.zeros(n_classes)
    onehot[c] = 1.0
    if score_mode == "logit":
        seed = onehot
    elif score_mode == "softmax":
        seed = probs[c] * (onehot - probs)
    else:
        raise ValueError(f"unknown score mode {score_mode!r}")
    grads = tape.backward(logits, seed=seed.astype(tape.dtype))
    if not -len(cap) <= layer < len(cap):
        raise ValueError(f"layer {layer} out of range for {len(cap)} captured blocks")
    rec = cap.block(layer)
    return rec.feature_grid(), rec.grad_grid(grads), c, probs


def generate_heatmap(model: ViGModel, image, method: str = "vscam", layer: int = -1,
                     measure: str = "inner", top_k=None, score_mode: str = "logit",
                     out_size=None, class_index=None, relu_clamp: bool = False) -> tuple[Heatmap, dict]:
    """Produce a VS-CAM or Grad-CAM heatmap for one image.

    Returns the heatmap plus a metadata dict (class, score, parameters).
    """
    side = model.config.input_side
    if out_size is None:
        out_size = (side, side)
    f, grad, c, probs = class_gradients(model, image, layer=layer,
                                        class_index=class_index, score_mode=score_mode)
    if method == "vscam":
        probes = compute_probe_maps(f, measure)
        base = compute_semantic_base(grad, c, layer=layer)
        heatmap = compose_vscam(probes, base, top_k=top_k, out_size=out_size)
    elif method == "gradcam":
        heatmap = gradcam(f, grad, out_size=out_size, class_index=c, relu_clamp=relu_clamp)
    else:
        raise ValueError(f"unknown CAM method {method!r}; choose vscam or gradcam")
    meta = {
        "method": method,
        "class_index": c,
        "score": float(probs[c]),
        "layer": layer,
        "measure": measure if method == "vscam" else None,
        "top_k": top_k if method == "vscam" else None,
        "score_mode": score_mode,
    }
    return heatmap, meta
