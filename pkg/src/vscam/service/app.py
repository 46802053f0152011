"""FastAPI service exposing the train / explain / probe / topology / evaluate /
synth workflows. The CLI is a thin client of these endpoints; paths in requests
refer to the server's filesystem."""

from __future__ import annotations

import csv
import json
from collections import Counter
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException

from .. import __version__
from ..cam import topology_map
from ..evalmetrics import evaluate_dataset, explanation_map, export_report
from ..model import ConfigError, ViGConfig, desk_config, init_random, predict, train_step
from ..pipeline import class_gradients, generate_heatmap
from ..render import (
    annotate_vertices_png,
    heatmap_png,
    image_png,
    overlay_png,
    probe_grid_png,
)
from ..cam import MEASURES, compute_probe_maps
from ..synth import CLASS_NAMES, load_dataset, save_dataset, synth_generate
from ..weights_io import FormatError, load_weights, save_weights
from . import schemas

app = FastAPI(title="vscam", version=__version__)


def _bad(msg: str):
    raise HTTPException(status_code=400, detail=msg)


def _require_file(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        _bad(f"{what} not found: {path}")
    return p


def _require_dir(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        _bad(f"{what} not found: {path}")
    return p


def _load_model(model_path: str, config_path):
    _require_file(model_path, "model file")
    cfg_path = config_path or str(Path(model_path).with_suffix(".json"))
    _require_file(cfg_path, "config file")
    try:
        cfg = ViGConfig.from_dict(json.loads(Path(cfg_path).read_text()))
        return load_weights(cfg, model_path)
    except (ConfigError, FormatError, json.JSONDecodeError) as e:
        _bad(f"could not load model: {e}")


def _load_image(path: str, side: int) -> np.ndarray:
    from PIL import Image

    p = _require_file(path, "image")
    img = Image.open(p).convert("RGB")
    if img.size != (side, side):
        img = img.resize((side, side), Image.BILINEAR)
    return np.asarray(img, dtype=np.float64).transpose(2, 0, 1) / 255.0


@app.get("/health", response_model=schemas.HealthResponse)
def health():
    return schemas.HealthResponse(status="ok", version=__version__)


@app.post("/synth", response_model=schemas.SynthResponse)
def synth(req: schemas.SynthRequest):
    if req.side < 16:
        _bad(f"side must be >= 16, got {req.side}")
    out = Path(req.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    samples = synth_generate(req.n, req.side, req.seed)
    save_dataset(samples, out)
    counts = Counter(CLASS_NAMES[s.label] for s in samples)
    return schemas.SynthResponse(n_images=len(samples), out_dir=str(out),
                                 class_counts=dict(counts))


@app.post("/train", response_model=schemas.TrainResponse)
def train(req: schemas.TrainRequest):
    _require_dir(req.dataset_dir, "dataset directory")
    try:
        samples = load_dataset(req.dataset_dir)
    except FileNotFoundError as e:
        _bad(str(e))
    if not samples:
        _bad(f"dataset {req.dataset_dir} is empty")
    if req.config_path is not None:
        _require_file(req.config_path, "config file")
        try:
            cfg = ViGConfig.from_dict(json.loads(Path(req.config_path).read_text()))
        except (ConfigError, json.JSONDecodeError) as e:
            _bad(f"bad config: {e}")
    else:
        cfg = desk_config()
    model = init_random(cfg, seed=req.seed)
    rng = np.random.default_rng(req.seed)
    stats = []
    acc = float("nan")
    for epoch in range(req.epochs):
        order = rng.permutation(len(samples))
        losses = []
        for i in range(0, len(samples), req.batch_size):
            batch = [(samples[j].image, samples[j].label) for j in order[i:i + req.batch_size]]
            losses.append(train_step(model, batch, lr=req.lr))
        acc = float(np.mean([predict(model, s.image)[0] == s.label for s in samples]))
        stats.append(schemas.EpochStats(epoch=epoch, loss=float(np.mean(losses)), acc=acc))
    if req.epochs == 0:
        acc = float(np.mean([predict(model, s.image)[0] == s.label for s in samples]))
    out_model = Path(req.out_model)
    out_model.parent.mkdir(parents=True, exist_ok=True)
    save_weights(model, out_model)
    cfg_out = out_model.with_suffix(".json")
    cfg_out.write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
    return schemas.TrainResponse(model_path=str(out_model), config_path=str(cfg_out),
                                 epochs=stats, final_acc=acc)


@app.post("/explain", response_model=schemas.ExplainResponse)
def explain(req: schemas.ExplainRequest):
    model = _load_model(req.model_path, req.config_path)
    image = _load_image(req.image_path, model.config.input_side)
    n_blocks = sum(s[0] for s in model.config.stages)
    if not -n_blocks <= req.layer < n_blocks:
        _bad(f"layer {req.layer} out of range for {n_blocks} blocks")
    if req.method not in ("vscam", "gradcam"):
        _bad(f"unknown method {req.method!r}")
    if req.measure not in MEASURES:
        _bad(f"unknown measure {req.measure!r}")
    try:
        heatmap, meta = generate_heatmap(model, image, method=req.method, layer=req.layer,
                                         measure=req.measure, top_k=req.top_k,
                                         score_mode=req.score_mode, class_index=req.class_index)
    except ValueError as e:
        _bad(str(e))
    out = Path(req.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "heatmap": str(out / "heatmap.png"),
        "overlay": str(out / "overlay.png"),
        "explanation": str(out / "explanation.png"),
        "meta": str(out / "meta.json"),
    }
    Path(files["heatmap"]).write_bytes(heatmap_png(heatmap))
    Path(files["overlay"]).write_bytes(overlay_png(heatmap, image))
    Path(files["explanation"]).write_bytes(image_png(explanation_map(heatmap, image)))
    Path(files["meta"]).write_text(json.dumps(meta, indent=2) + "\n")
    return schemas.ExplainResponse(files=files, class_index=meta["class_index"],
                                   score=meta["score"], method=req.method)


@app.post("/probe", response_model=schemas.ProbeResponse)
def probe(req: schemas.ProbeRequest):
    model = _load_model(req.model_path, req.config_path)
    image = _load_image(req.image_path, model.config.input_side)
    n_blocks = sum(s[0] for s in model.config.stages)
    if not -n_blocks <= req.layer < n_blocks:
        _bad(f"layer {req.layer} out of range for {n_blocks} blocks")
    measures = MEASURES if req.measure == "all" else (req.measure,)
    for m in measures:
        if m not in MEASURES:
            _bad(f"unknown measure {m!r}")
    f, _, _, _ = class_gradients(model, image, layer=req.layer)
    out = Path(req.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    grid_side = 0
    n_probes = 0
    for m in measures:
        probes = compute_probe_maps(f, m)
        path = out / f"probe_grid_{m}.png"
        path.write_bytes(probe_grid_png(probes))
        files[m] = str(path)
        grid_side, n_probes = probes.width, probes.n_probes
    return schemas.ProbeResponse(files=files, n_probes=n_probes, grid_side=grid_side)


@app.post("/topology", response_model=schemas.TopologyResponse)
def topology(req: schemas.TopologyRequest):
    model = _load_model(req.model_path, req.config_path)
    image = _load_image(req.image_path, model.config.input_side)
    cfg = model.config
    ref_side = cfg.stages[-1][2]
    n_blocks = sum(s[0] for s in cfg.stages)
    for vw, vh in req.vertices:
        if not (0 <= vw < ref_side and 0 <= vh < ref_side):
            _bad(f"vertex ({vw}, {vh}) outside the {ref_side}x{ref_side} reference grid")
    for layer in req.layers:
        if not -n_blocks <= layer < n_blocks:
            _bad(f"layer {layer} out of range for {n_blocks} blocks")
    if req.measure not in MEASURES:
        _bad(f"unknown measure {req.measure!r}")
    side = cfg.input_side
    out = Path(req.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    for layer in req.layers:
        f, _, _, _ = class_gradients(model, image, layer=layer)
        for vw, vh in req.vertices:
            hm = topology_map(f, (vw, vh), measure=req.measure,
                              out_size=(side, side), ref_side=ref_side)
            name = f"topology_l{layer}_v{vw}_{vh}.png"
            (out / name).write_bytes(overlay_png(hm, image))
            files[name] = str(out / name)
    annotated = out / "input_annotated.png"
    annotated.write_bytes(annotate_vertices_png(image, req.vertices, ref_side))
    files["input_annotated"] = str(annotated)
    return schemas.TopologyResponse(files=files, ref_side=ref_side)


@app.post("/evaluate", response_model=schemas.EvaluateResponse)
def evaluate(req: schemas.EvaluateRequest):
    model = _load_model(req.model_path, req.config_path)
    _require_dir(req.dataset_dir, "dataset directory")
    try:
        samples = load_dataset(req.dataset_dir)
    except FileNotFoundError as e:
        _bad(str(e))
    if not samples:
        _bad(f"dataset {req.dataset_dir} is empty")
    for m in req.methods:
        if m not in ("vscam", "gradcam"):
            _bad(f"unknown method {m!r}")
    out = Path(req.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    summary = {}
    for method in req.methods:
        report = evaluate_dataset(model, samples, cam_method=method, layer=req.layer,
                                  score_mode=req.score_mode, measure=req.measure,
                                  top_k=req.top_k, cam_score_mode=req.cam_score_mode)
        report_path = out / f"report_{method}.json"
        export_report(report, report_path)
        files[f"report_{method}"] = str(report_path)

        hist_path = out / f"per_class_{method}.csv"
        with open(hist_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["class", "mean_drop", "increase_count", "n"])
            for c, row in report.per_class.items():
                w.writerow([c, row["mean_drop"], row["increase_count"], row["n"]])
        files[f"per_class_{method}"] = str(hist_path)

        img_path = out / f"per_image_{method}.csv"
        with open(img_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "label", "drop"])
            for row in report.per_image:
                w.writerow([row["index"], row["label"], row["drop"]])
        files[f"per_image_{method}"] = str(img_path)

        summary[method] = schemas.MethodSummary(
            mean_confidence_drop=report.mean_confidence_drop,
            increase_count=report.increase_count,
            increase_percent=report.increase_percent,
        )
    return schemas.EvaluateResponse(files=files, summary=summary, n_images=len(samples))
