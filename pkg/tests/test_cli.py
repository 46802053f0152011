import json

import pytest

from vscam.cli import main


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert main(["synth", "--n", "8", "--seed", "0", "--out", str(data)]) == 0
    model = root / "model.vscw"
    assert main(["train", "--dataset", str(data), "--out-model", str(model),
                 "--epochs", "2", "--batch-size", "4"]) == 0
    return {"data": data, "model": model, "image": data / "img_00000.png"}


def test_synth_reports_counts(tmp_path, capsys):
    assert main(["synth", "--n", "8", "--out", str(tmp_path / "d")]) == 0
    out = capsys.readouterr().out
    assert "wrote 8 images" in out
    assert "disk: 2" in out


def test_synth_small_side_exits_2(tmp_path, capsys):
    assert main(["synth", "--n", "2", "--side", "8", "--out", str(tmp_path)]) == 2
    assert "16" in capsys.readouterr().err


def test_train_prints_epoch_lines(workspace, tmp_path, capsys):
    rc = main(["train", "--dataset", str(workspace["data"]),
               "--out-model", str(tmp_path / "m.vscw"), "--epochs", "1",
               "--batch-size", "4"])
    assert rc == 0
    out = capsys.readouterr().out
    assert out.startswith("epoch 0 loss ")
    assert " acc " in out


def test_train_missing_dataset_exits_2(tmp_path, capsys):
    rc = main(["train", "--dataset", str(tmp_path / "absent"),
               "--out-model", str(tmp_path / "m.vscw")])
    assert rc == 2
    assert "absent" in capsys.readouterr().err


def test_explain_writes_artifacts(workspace, tmp_path, capsys):
    out = tmp_path / "explain"
    rc = main(["explain", "--model", str(workspace["model"]),
               "--image", str(workspace["image"]), "--out", str(out)])
    assert rc == 0
    assert (out / "heatmap.png").is_file()
    assert (out / "overlay.png").is_file()
    stdout = capsys.readouterr().out
    assert "class " in stdout and "(vscam)" in stdout


def test_explain_gradcam_and_top_k_flags(workspace, tmp_path):
    out = tmp_path / "g"
    rc = main(["explain", "--model", str(workspace["model"]),
               "--image", str(workspace["image"]), "--out", str(out),
               "--method", "gradcam", "--score-mode", "softmax"])
    assert rc == 0
    meta = json.loads((out / "meta.json").read_text())
    assert meta["method"] == "gradcam"

    out2 = tmp_path / "k"
    rc = main(["explain", "--model", str(workspace["model"]),
               "--image", str(workspace["image"]), "--out", str(out2),
               "--top-k", "all"])
    assert rc == 0


def test_explain_missing_model_exits_2(workspace, tmp_path, capsys):
    rc = main(["explain", "--model", str(tmp_path / "no.vscw"),
               "--image", str(workspace["image"]), "--out", str(tmp_path)])
    assert rc == 2


def test_probe_all_measures(workspace, tmp_path, capsys):
    out = tmp_path / "p"
    rc = main(["probe", "--model", str(workspace["model"]),
               "--image", str(workspace["image"]), "--out", str(out)])
    assert rc == 0
    assert "16 probe maps on a 4x4 grid" in capsys.readouterr().out
    assert len(list(out.glob("probe_grid_*.png"))) == 4


def test_topology_vertices_and_layers(workspace, tmp_path, capsys):
    out = tmp_path / "t"
    rc = main(["topology", "--model", str(workspace["model"]),
               "--image", str(workspace["image"]), "--out", str(out),
               "--vertices", "0,0;1,2", "--layers", "0,1"])
    assert rc == 0
    assert len(list(out.glob("topology_l*_v*.png"))) == 4
    assert (out / "input_annotated.png").is_file()


def test_topology_bad_vertex_exits_2(workspace, tmp_path, capsys):
    rc = main(["topology", "--model", str(workspace["model"]),
               "--image", str(workspace["image"]), "--out", str(tmp_path),
               "--vertices", "7,0", "--layers", "0"])
    assert rc == 2


def test_topology_malformed_vertices_exits_2(workspace, tmp_path, capsys):
    rc = main(["topology", "--model", str(workspace["model"]),
               "--image", str(workspace["image"]), "--out", str(tmp_path),
               "--vertices", "banana", "--layers", "0"])
    assert rc == 2
    assert "--vertices" in capsys.readouterr().err


def test_evaluate_prints_summary_table(workspace, tmp_path, capsys):
    out = tmp_path / "e"
    rc = main(["evaluate", "--model", str(workspace["model"]),
               "--dataset", str(workspace["data"]), "--out", str(out)])
    assert rc == 0
    stdout = capsys.readouterr().out
    assert "Confidence drop" in stdout and "Increase number" in stdout
    assert (out / "report_vscam.json").is_file()
    assert (out / "report_gradcam.json").is_file()


def test_unreachable_server_exits_1(capsys):
    rc = main(["--server", "http://127.0.0.1:1", "synth", "--n", "1",
               "--out", "/tmp/unused"])
    assert rc == 1
    assert "cannot reach server" in capsys.readouterr().err
