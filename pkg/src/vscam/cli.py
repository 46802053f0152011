"""Command-line client for the vscam service.

By default the service runs in-process; ``--server URL`` points the same
commands at a remote instance instead. Exit codes: 0 success, 2 usage or
validation error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys

import httpx

MEASURES = ("euclidean", "angle", "projection", "inner")


class _InProcessClient:
    """httpx client bound to the in-process ASGI app."""

    def __init__(self):
        from fastapi.testclient import TestClient

        from .service import app
        self._client = TestClient(app, raise_server_exceptions=False)

    def post(self, path, payload):
        return self._client.post(path, json=payload)


class _RemoteClient:
    def __init__(self, base_url: str):
        self._client = httpx.Client(base_url=base_url, timeout=600.0)

    def post(self, path, payload):
        return self._client.post(path, json=payload)


def _client(args):
    if args.server:
        return _RemoteClient(args.server)
    return _InProcessClient()


def _call(args, path, payload):
    """POST and map HTTP status to an exit code; returns the response document."""
    try:
        resp = _client(args).post(path, payload)
    except httpx.HTTPError as e:
        print(f"error: cannot reach server: {e}", file=sys.stderr)
        raise SystemExit(1)
    if resp.status_code in (400, 422):
        detail = resp.json().get("detail", resp.text)
        print(f"error: {detail}", file=sys.stderr)
        raise SystemExit(2)
    if resp.status_code != 200:
        print(f"error: server failure ({resp.status_code}): {resp.text}", file=sys.stderr)
        raise SystemExit(1)
    return resp.json()


def _top_k(value):
    if value is None or value == "all":
        return None
    return int(value)


def cmd_synth(args):
    doc = _call(args, "/synth", {"n": args.n, "side": args.side,
                                 "seed": args.seed, "out_dir": args.out})
    print(f"wrote {doc['n_images']} images to {doc['out_dir']}")
    for cls, count in sorted(doc["class_counts"].items()):
        print(f"  {cls}: {count}")
    return 0


def cmd_train(args):
    doc = _call(args, "/train", {
        "dataset_dir": args.dataset, "out_model": args.out_model,
        "config_path": args.config, "epochs": args.epochs, "lr": args.lr,
        "batch_size": args.batch_size, "seed": args.seed,
    })
    for e in doc["epochs"]:
        print(f"epoch {e['epoch']} loss {e['loss']:.4f} acc {e['acc']:.4f}")
    print(f"model written to {doc['model_path']} (config {doc['config_path']})")
    return 0


def cmd_explain(args):
    doc = _call(args, "/explain", {
        "model_path": args.model, "config_path": args.config,
        "image_path": args.image, "out_dir": args.out,
        "method": args.method, "layer": args.layer, "measure": args.measure,
        "top_k": _top_k(args.top_k), "score_mode": args.score_mode,
        "class_index": args.class_index,
    })
    print(f"class {doc['class_index']} score {doc['score']:.4f} ({doc['method']})")
    for name, path in doc["files"].items():
        print(f"  {name}: {path}")
    return 0


def cmd_probe(args):
    doc = _call(args, "/probe", {
        "model_path": args.model, "config_path": args.config,
        "image_path": args.image, "out_dir": args.out,
        "layer": args.layer, "measure": args.measure,
    })
    print(f"{doc['n_probes']} probe maps on a {doc['grid_side']}x{doc['grid_side']} grid")
    for name, path in doc["files"].items():
        print(f"  {name}: {path}")
    return 0


def _parse_vertices(text: str):
    vertices = []
    for part in text.split(";"):
        w, h = part.split(",")
        vertices.append((int(w), int(h)))
    return vertices


def cmd_topology(args):
    try:
        vertices = _parse_vertices(args.vertices)
    except ValueError:
        print("error: --vertices must look like '1,2;3,4'", file=sys.stderr)
        return 2
    layers = [int(x) for x in args.layers.split(",")]
    doc = _call(args, "/topology", {
        "model_path": args.model, "config_path": args.config,
        "image_path": args.image, "out_dir": args.out,
        "vertices": vertices, "layers": layers, "measure": args.measure,
    })
    print(f"reference grid {doc['ref_side']}x{doc['ref_side']}")
    for name, path in doc["files"].items():
        print(f"  {name}: {path}")
    return 0


def cmd_evaluate(args):
    doc = _call(args, "/evaluate", {
        "model_path": args.model, "config_path": args.config,
        "dataset_dir": args.dataset, "out_dir": args.out,
        "methods": args.methods.split(","), "layer": args.layer,
        "measure": args.measure, "top_k": _top_k(args.top_k),
        "score_mode": args.score_mode,
    })
    print(f"{doc['n_images']} images")
    print(f"{'Method':<12} {'Confidence drop':>16} {'Increase number':>16}")
    for method, s in doc["summary"].items():
        print(f"{method:<12} {s['mean_confidence_drop']:>16.2f} {s['increase_count']:>16d}")
    for name, path in doc["files"].items():
        print(f"  {name}: {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vscam",
                                     description="Vertex-semantic CAM workflows")
    parser.add_argument("--server", default=None,
                        help="base URL of a running service (default: in-process)")
    sub = parser.add_subparsers(dest="command", required=True)

    def model_args(p):
        p.add_argument("--model", required=True, help="VSCW weight file")
        p.add_argument("--config", default=None, help="model config JSON (default: <model>.json)")
        p.add_argument("--layer", type=int, default=-1, help="captured block index")
        p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("synth", help="generate a synthetic shape dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--side", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the desk-scale model")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out-model", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=0.04)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("explain", help="write heatmap / overlay / explanation map")
    model_args(p)
    p.add_argument("--image", required=True)
    p.add_argument("--method", choices=("vscam", "gradcam"), default="vscam")
    p.add_argument("--measure", choices=MEASURES, default="inner")
    p.add_argument("--top-k", default=None, help="number of probes, or 'all'")
    p.add_argument("--score-mode", choices=("logit", "softmax"), default="logit")
    p.add_argument("--class-index", type=int, default=None)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("probe", help="write tiled probe-map grids")
    model_args(p)
    p.add_argument("--image", required=True)
    p.add_argument("--measure", choices=MEASURES + ("all",), default="all")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("topology", help="per-vertex connection maps across blocks")
    model_args(p)
    p.add_argument("--image", required=True)
    p.add_argument("--vertices", required=True, help="semicolon-separated w,h pairs")
    p.add_argument("--layers", required=True, help="comma-separated block indices")
    p.add_argument("--measure", choices=MEASURES, default="inner")
    p.set_defaults(func=cmd_topology)

    p = sub.add_parser("evaluate", help="confidence drop / increase number over a dataset")
    model_args(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--methods", default="vscam,gradcam")
    p.add_argument("--measure", choices=MEASURES, default="inner")
    p.add_argument("--top-k", default=None)
    p.add_argument("--score-mode", choices=("logit", "softmax"), default="softmax")
    p.set_defaults(func=cmd_evaluate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 1


if __name__ == "__main__":
    sys.exit(main())
