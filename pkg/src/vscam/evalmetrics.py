"""Occlusion-based faithfulness metrics: confidence drop, increase number,
localization mass, and JSON report export."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cam import Heatmap
from .model import ViGModel, model_forward, softmax
from .pipeline import generate_heatmap
from .tensor import ShapeError

__all__ = [
    "MetricsReport",
    "explanation_map",
    "class_confidence",
    "confidence_drop",
    "evaluate_dataset",
    "localization_mass",
    "export_report",
    "load_report",
]

REPORT_SCHEMA_VERSION = 1

# Published full-scale reference values (pretrained tiny ViG on ILSVRC).
# Desk-scale runs reproduce the ordering, not these magnitudes.
FULL_SCALE_REFERENCE = {
    "gradcam": {"confidence_drop": 24.49, "increase_number": 13.97},
    "vscam": {"confidence_drop": 9.01, "increase_number": 33.05},
}


@dataclass
class MetricsReport:
    method: str
    n_images: int
    mean_confidence_drop: float          # percent, negatives included
    mean_confidence_drop_clamped: float  # percent, max(0, drop) per image
    increase_count: int
    increase_percent: float
    per_class: dict = field(default_factory=dict)  # class -> {"mean_drop", "increase_count", "n"}
    per_image: list = field(default_factory=list)  # [{"index", "label", "drop"}]


def _heat_values(heatmap) -> np.ndarray:
    return heatmap.values if isinstance(heatmap, Heatmap) else np.asarray(heatmap, dtype=np.float64)


def explanation_map(heatmap, image) -> np.ndarray:
    """Occluded input: the heatmap multiplied into every channel of the image."""
    v = _heat_values(heatmap)
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[1:] != v.shape:
        raise ShapeError(f"heatmap {v.shape} does not match image {img.shape}")
    return img * v[None, :, :]


def class_confidence(model: ViGModel, image, class_index: int,
                     score_mode: str = "softmax") -> float:
    logits, _ = model_forward(model, image, capture=False)
    if score_mode == "softmax":
        return float(softmax(logits.data)[class_index])
    return float(logits.data[class_index])


def confidence_drop(model: ViGModel, image, heatmap, class_index: int,
                    score_mode: str = "softmax") -> float:
    """Percent drop of the class score when the model sees the explanation map.

    Negative values mean the score increased. Logit mode refuses non-positive
    original scores since the ratio is meaningless there.
    """
    s_orig = class_confidence(model, image, class_index, score_mode)
    if s_orig <= 0:
        raise ValueError(
            f"original score {s_orig} is not positive; use score_mode='softmax' for metrics")
    s_expl = class_confidence(model, explanation_map(heatmap, image), class_index, score_mode)
    return 100.0 * (s_orig - s_expl) / s_orig


def localization_mass(heatmap, mask) -> float:
    """Fraction of total heatmap mass that falls inside the object mask."""
    v = _heat_values(heatmap)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != v.shape:
        raise ShapeError(f"mask {mask.shape} does not match heatmap {v.shape}")
    total = v.sum()
    if total <= 0:
        raise ValueError("heatmap is all zeros; localization mass is undefined")
    return float(v[mask].sum() / total)


def evaluate_dataset(model: ViGModel, samples, cam_method: str = "vscam",
                     layer: int = -1, score_mode: str = "softmax",
                     measure: str = "inner", top_k=None,
                     cam_score_mode: str = "logit") -> MetricsReport:
    """Confidence drop / increase number over a dataset, using ground-truth labels.

    ``score_mode`` governs how confidences are read for the metric;
    ``cam_score_mode`` governs what the CAM differentiates.
    """
    if not samples:
        raise ValueError("empty dataset")
    drops = []
    per_class: dict = {}
    per_image = []
    # means accumulate in double precision so the reduction is order-independent
    for idx, s in enumerate(samples):
        heatmap, _ = generate_heatmap(model, s.image, method=cam_method, layer=layer,
                                      measure=measure, top_k=top_k,
                                      score_mode=cam_score_mode, class_index=s.label)
        drop = confidence_drop(model, s.image, heatmap, s.label, score_mode=score_mode)
        drops.append(drop)
        per_image.append({"index": idx, "label": int(s.label), "drop": drop})
        entry = per_class.setdefault(int(s.label), {"drops": [], "increase_count": 0})
        entry["drops"].append(drop)
        if drop < 0:
            entry["increase_count"] += 1
    drops_arr = np.asarray(drops, dtype=np.float64)
    increase_count = int(np.sum(drops_arr < 0))
    per_class_out = {
        c: {
            "mean_drop": float(np.mean(e["drops"])),
            "increase_count": e["increase_count"],
            "n": len(e["drops"]),
        }
        for c, e in sorted(per_class.items())
    }
    return MetricsReport(
        method=cam_method,
        n_images=len(samples),
        mean_confidence_drop=float(drops_arr.mean()),
        mean_confidence_drop_clamped=float(np.maximum(drops_arr, 0.0).mean()),
        increase_count=increase_count,
        increase_percent=100.0 * increase_count / len(samples),
        per_class=per_class_out,
        per_image=per_image,
    )


def export_report(report: MetricsReport, path) -> None:
    doc = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "method": report.method,
        "n_images": report.n_images,
        "mean_confidence_drop": report.mean_confidence_drop,
        "mean_confidence_drop_clamped": report.mean_confidence_drop_clamped,
        "increase_count": report.increase_count,
        "increase_percent": report.increase_percent,
        "per_class": {str(c): v for c, v in report.per_class.items()},
        "per_image": report.per_image,
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_report(path) -> MetricsReport:
    doc = json.loads(Path(path).read_text())
    if doc.get("schema_version") != REPORT_SCHEMA_VERSION:
        raise ValueError(f"unsupported report schema version {doc.get('schema_version')}")
    return MetricsReport(
        method=doc["method"],
        n_images=doc["n_images"],
        mean_confidence_drop=doc["mean_confidence_drop"],
        mean_confidence_drop_clamped=doc["mean_confidence_drop_clamped"],
        increase_count=doc["increase_count"],
        increase_percent=doc["increase_percent"],
        per_class={int(c): v for c, v in doc["per_class"].items()},
        per_image=doc["per_image"],
    )
