import csv
import json

import pytest
from fastapi.testclient import TestClient

from vscam.service import app


@pytest.fixture(scope="module")
def client():
    return TestClient(app, raise_server_exceptions=False)


@pytest.fixture(scope="module")
def workspace(client, tmp_path_factory):
    """Small dataset + briefly trained model shared by the endpoint tests."""
    root = tmp_path_factory.mktemp("svc")
    data_dir = root / "data"
    r = client.post("/synth", json={"n": 8, "side": 32, "seed": 0,
                                    "out_dir": str(data_dir)})
    assert r.status_code == 200
    model_path = root / "model.vscw"
    r = client.post("/train", json={"dataset_dir": str(data_dir),
                                    "out_model": str(model_path), "epochs": 2,
                                    "lr": 0.04, "batch_size": 4, "seed": 0})
    assert r.status_code == 200
    return {"root": root, "data": data_dir, "model": model_path,
            "image": data_dir / "img_00000.png", "train": r.json()}


def test_health(client):
    doc = client.get("/health").json()
    assert doc["status"] == "ok" and doc["version"]


def test_synth_counts_and_files(client, tmp_path):
    out = tmp_path / "ds"
    doc = client.post("/synth", json={"n": 8, "out_dir": str(out)}).json()
    assert doc["n_images"] == 8
    assert sum(doc["class_counts"].values()) == 8
    assert len(list(out.glob("img_*.png"))) == 8
    assert (out / "labels.tsv").is_file()
    assert len(list((out / "masks").glob("*.png"))) == 8


def test_synth_rejects_small_side(client, tmp_path):
    r = client.post("/synth", json={"n": 2, "side": 8, "out_dir": str(tmp_path)})
    assert r.status_code == 400
    assert "16" in r.json()["detail"]


def test_train_writes_model_and_config(workspace):
    doc = workspace["train"]
    assert workspace["model"].is_file()
    cfg = json.loads((workspace["model"].with_suffix(".json")).read_text())
    assert cfg["input_side"] == 32
    assert len(doc["epochs"]) == 2
    assert all("loss" in e and "acc" in e for e in doc["epochs"])


def test_train_epochs_zero_writes_initial_weights(client, workspace, tmp_path):
    out = tmp_path / "init.vscw"
    doc = client.post("/train", json={"dataset_dir": str(workspace["data"]),
                                      "out_model": str(out), "epochs": 0}).json()
    assert out.is_file()
    assert doc["epochs"] == []
    # untrained: accuracy near chance for 4 balanced classes
    assert doc["final_acc"] <= 0.75


def test_train_missing_dataset_is_400(client, tmp_path):
    r = client.post("/train", json={"dataset_dir": str(tmp_path / "nope"),
                                    "out_model": str(tmp_path / "m.vscw")})
    assert r.status_code == 400
    assert "nope" in r.json()["detail"]


def test_explain_both_methods_write_distinct_files(client, workspace, tmp_path):
    outs = {}
    for method in ("vscam", "gradcam"):
        out = tmp_path / method
        r = client.post("/explain", json={"model_path": str(workspace["model"]),
                                          "image_path": str(workspace["image"]),
                                          "out_dir": str(out), "method": method})
        assert r.status_code == 200
        doc = r.json()
        assert doc["method"] == method
        for path in doc["files"].values():
            assert (tmp_path / method / path.split("/")[-1]).is_file()
        outs[method] = (out / "overlay.png").read_bytes()
    assert outs["vscam"] != outs["gradcam"]


def test_explain_is_deterministic(client, workspace, tmp_path):
    payload = {"model_path": str(workspace["model"]),
               "image_path": str(workspace["image"])}
    a, b = tmp_path / "a", tmp_path / "b"
    client.post("/explain", json={**payload, "out_dir": str(a)})
    client.post("/explain", json={**payload, "out_dir": str(b)})
    for name in ("heatmap.png", "overlay.png", "explanation.png"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_explain_top_k_changes_output(client, workspace, tmp_path):
    payload = {"model_path": str(workspace["model"]),
               "image_path": str(workspace["image"])}
    a, b = tmp_path / "k1", tmp_path / "kall"
    client.post("/explain", json={**payload, "out_dir": str(a), "top_k": 1})
    client.post("/explain", json={**payload, "out_dir": str(b)})
    assert (a / "heatmap.png").read_bytes() != (b / "heatmap.png").read_bytes()


def test_explain_meta_records_request(client, workspace, tmp_path):
    out = tmp_path / "meta"
    client.post("/explain", json={"model_path": str(workspace["model"]),
                                  "image_path": str(workspace["image"]),
                                  "out_dir": str(out), "measure": "angle",
                                  "score_mode": "softmax"})
    meta = json.loads((out / "meta.json").read_text())
    assert meta["measure"] == "angle"
    assert meta["score_mode"] == "softmax"
    assert meta["method"] == "vscam"


def test_explain_bad_layer_is_400(client, workspace, tmp_path):
    r = client.post("/explain", json={"model_path": str(workspace["model"]),
                                      "image_path": str(workspace["image"]),
                                      "out_dir": str(tmp_path), "layer": 9})
    assert r.status_code == 400


def test_explain_missing_model_is_400(client, workspace, tmp_path):
    r = client.post("/explain", json={"model_path": str(tmp_path / "no.vscw"),
                                      "image_path": str(workspace["image"]),
                                      "out_dir": str(tmp_path)})
    assert r.status_code == 400


def test_probe_all_measures_write_four_grids(client, workspace, tmp_path):
    out = tmp_path / "probes"
    doc = client.post("/probe", json={"model_path": str(workspace["model"]),
                                      "image_path": str(workspace["image"]),
                                      "out_dir": str(out)}).json()
    assert len(doc["files"]) == 4
    assert doc["n_probes"] == doc["grid_side"] ** 2 == 16
    for path in doc["files"].values():
        assert (out / path.split("/")[-1]).is_file()


def test_probe_single_measure(client, workspace, tmp_path):
    doc = client.post("/probe", json={"model_path": str(workspace["model"]),
                                      "image_path": str(workspace["image"]),
                                      "out_dir": str(tmp_path),
                                      "measure": "inner"}).json()
    assert list(doc["files"]) == ["inner"]


def test_topology_file_enumeration(client, workspace, tmp_path):
    doc = client.post("/topology", json={"model_path": str(workspace["model"]),
                                         "image_path": str(workspace["image"]),
                                         "out_dir": str(tmp_path),
                                         "vertices": [[0, 0], [1, 2]],
                                         "layers": [0, 1]}).json()
    # 2 vertices x 2 layers + annotated input
    assert len(doc["files"]) == 5
    assert "input_annotated" in doc["files"]
    assert doc["ref_side"] == 4


def test_topology_vertex_out_of_grid_is_400(client, workspace, tmp_path):
    r = client.post("/topology", json={"model_path": str(workspace["model"]),
                                       "image_path": str(workspace["image"]),
                                       "out_dir": str(tmp_path),
                                       "vertices": [[7, 0]], "layers": [0]})
    assert r.status_code == 400
    assert "(7, 0)" in r.json()["detail"]


def test_evaluate_reports_and_csvs(client, workspace, tmp_path):
    out = tmp_path / "eval"
    doc = client.post("/evaluate", json={"model_path": str(workspace["model"]),
                                         "dataset_dir": str(workspace["data"]),
                                         "out_dir": str(out)}).json()
    assert doc["n_images"] == 8
    assert set(doc["summary"]) == {"vscam", "gradcam"}
    for method in ("vscam", "gradcam"):
        report = json.loads((out / f"report_{method}.json").read_text())
        assert report["n_images"] == 8
        with open(out / f"per_image_{method}.csv") as fh:
            rows = list(csv.reader(fh))
        assert len(rows) == 9  # header + one row per image
        assert rows[0] == ["index", "label", "drop"]


def test_evaluate_unknown_method_is_400(client, workspace, tmp_path):
    r = client.post("/evaluate", json={"model_path": str(workspace["model"]),
                                       "dataset_dir": str(workspace["data"]),
                                       "out_dir": str(tmp_path),
                                       "methods": ["scorecam"]})
    assert r.status_code == 400


def test_validation_error_is_422(client):
    r = client.post("/synth", json={"side": 32})  # missing required fields
    assert r.status_code == 422
