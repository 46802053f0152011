import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vscam.evalmetrics import (
    FULL_SCALE_REFERENCE,
    MetricsReport,
    class_confidence,
    confidence_drop,
    evaluate_dataset,
    explanation_map,
    export_report,
    load_report,
    localization_mass,
)
from vscam.model import desk_config, init_random
from vscam.synth import synth_generate
from vscam.tensor import ShapeError


@pytest.fixture(scope="module")
def model():
    return init_random(desk_config(), seed=0)


def rand_image(seed=0, side=32):
    return np.random.default_rng(seed).uniform(0, 1, size=(3, side, side))


# --- explanation_map -------------------------------------------------------

def test_explanation_all_ones_is_identity():
    img = rand_image(1)
    np.testing.assert_array_equal(explanation_map(np.ones((32, 32)), img), img)


def test_explanation_all_zeros_is_black():
    img = rand_image(2)
    np.testing.assert_array_equal(explanation_map(np.zeros((32, 32)), img), np.zeros_like(img))


def test_explanation_half_plane():
    img = rand_image(3)
    hm = np.zeros((32, 32))
    hm[:, 16:] = 1.0
    out = explanation_map(hm, img)
    np.testing.assert_array_equal(out[:, :, :16], np.zeros((3, 32, 16)))
    np.testing.assert_array_equal(out[:, :, 16:], img[:, :, 16:])


def test_explanation_shape_mismatch():
    with pytest.raises(ShapeError):
        explanation_map(np.ones((16, 16)), rand_image(4))


# --- confidence_drop -------------------------------------------------------

def test_worked_example_75_percent(model, monkeypatch):
    # pin the two confidences to 0.8 and 0.2: the drop is exactly 75%
    import vscam.evalmetrics as em
    scores = iter([0.8, 0.2])
    monkeypatch.setattr(em, "class_confidence", lambda *a, **k: next(scores))
    assert em.confidence_drop(model, rand_image(5), np.ones((32, 32)), 0) == 75.0


def test_all_ones_heatmap_drop_is_zero(model):
    img = rand_image(6)
    assert confidence_drop(model, img, np.ones((32, 32)), 1) == pytest.approx(0.0, abs=1e-9)


def test_drop_sign_matches_score_movement(model):
    img = rand_image(7)
    hm = np.full((32, 32), 0.5)
    for c in range(4):
        s_orig = class_confidence(model, img, c)
        s_expl = class_confidence(model, explanation_map(hm, img), c)
        drop = confidence_drop(model, img, hm, c)
        assert (drop < 0) == (s_expl > s_orig)
        assert drop == pytest.approx(100.0 * (s_orig - s_expl) / s_orig)


def test_logit_mode_rejects_non_positive_score():
    forced = init_random(desk_config(), seed=1)
    forced.weights["classifier.bias"] = np.array([-100.0, 0, 0, 0], dtype=np.float32)
    img = rand_image(8)
    assert class_confidence(forced, img, 0, "logit") <= 0
    with pytest.raises(ValueError):
        confidence_drop(forced, img, np.ones((32, 32)), 0, score_mode="logit")


# --- localization_mass -----------------------------------------------------

def test_localization_heatmap_equals_mask_is_one():
    mask = np.zeros((8, 8), bool)
    mask[2:5, 2:5] = True
    assert localization_mass(mask.astype(float), mask) == pytest.approx(1.0)


def test_localization_uniform_heatmap_equals_mask_fraction():
    mask = np.zeros((8, 8), bool)
    mask[:4, :4] = True  # 25%
    assert localization_mass(np.ones((8, 8)), mask) == pytest.approx(0.25)


def test_localization_hand_case():
    hm = np.array([[1.0, 2.0, 0.0, 0.0],
                   [3.0, 4.0, 0.0, 0.0],
                   [0.0, 0.0, 1.0, 1.0],
                   [0.0, 0.0, 1.0, 1.0]])
    mask = np.zeros((4, 4), bool)
    mask[:2, :2] = True
    assert localization_mass(hm, mask) == pytest.approx(10.0 / 14.0)


def test_localization_zero_heatmap_rejected():
    with pytest.raises(ValueError):
        localization_mass(np.zeros((4, 4)), np.ones((4, 4), bool))


def test_localization_shape_mismatch():
    with pytest.raises(ShapeError):
        localization_mass(np.ones((4, 4)), np.ones((5, 5), bool))


# --- evaluate_dataset ------------------------------------------------------

def test_evaluate_dataset_aggregates(model):
    samples = synth_generate(8, 32, seed=9)
    rep = evaluate_dataset(model, samples, cam_method="gradcam")
    assert rep.n_images == 8
    assert rep.method == "gradcam"
    assert 0 <= rep.increase_percent <= 100
    assert rep.increase_count <= rep.n_images
    drops = [r["drop"] for r in rep.per_image]
    assert len(drops) == 8
    assert rep.mean_confidence_drop == pytest.approx(np.mean(drops))
    assert rep.mean_confidence_drop_clamped == pytest.approx(np.mean(np.maximum(drops, 0.0)))
    assert rep.increase_count == sum(d < 0 for d in drops)
    assert sum(v["n"] for v in rep.per_class.values()) == 8


def test_evaluate_dataset_empty_rejected(model):
    with pytest.raises(ValueError):
        evaluate_dataset(model, [])


def test_singleton_and_hand_average_aggregation():
    # aggregation math on synthetic per-image drops, no model involved
    drops = [75.0]
    assert np.mean(drops) == 75.0 and sum(d < 0 for d in drops) == 0
    drops = [10.0, -10.0]
    assert np.mean(drops) == 0.0
    assert sum(d < 0 for d in drops) == 1
    assert 100.0 * 1 / 2 == 50.0


def test_full_scale_reference_constants():
    assert FULL_SCALE_REFERENCE["gradcam"] == {"confidence_drop": 24.49,
                                               "increase_number": 13.97}
    assert FULL_SCALE_REFERENCE["vscam"] == {"confidence_drop": 9.01,
                                             "increase_number": 33.05}


# --- report round-trip -----------------------------------------------------

def make_report(rng):
    n = int(rng.integers(1, 20))
    drops = rng.normal(scale=50.0, size=n)
    labels = rng.integers(0, 4, size=n)
    per_class = {}
    for c in range(4):
        sel = drops[labels == c]
        if len(sel):
            per_class[c] = {"mean_drop": float(sel.mean()),
                            "increase_count": int((sel < 0).sum()), "n": int(len(sel))}
    return MetricsReport(
        method=rng.choice(["vscam", "gradcam"]),
        n_images=n,
        mean_confidence_drop=float(drops.mean()),
        mean_confidence_drop_clamped=float(np.maximum(drops, 0).mean()),
        increase_count=int((drops < 0).sum()),
        increase_percent=float(100.0 * (drops < 0).sum() / n),
        per_class=per_class,
        per_image=[{"index": i, "label": int(labels[i]), "drop": float(drops[i])}
                   for i in range(n)],
    )


def test_report_round_trip_exact(tmp_path):
    rng = np.random.default_rng(10)
    rep = make_report(rng)
    path = tmp_path / "report.json"
    export_report(rep, path)
    back = load_report(path)
    assert back == rep


def test_report_four_class_array_length(tmp_path):
    rng = np.random.default_rng(11)
    rep = None
    while rep is None or len(rep.per_class) != 4:
        rep = make_report(rng)
    path = tmp_path / "report.json"
    export_report(rep, path)
    assert len(load_report(path).per_class) == 4


def test_report_rejects_unknown_schema(tmp_path):
    rep = make_report(np.random.default_rng(12))
    path = tmp_path / "report.json"
    export_report(rep, path)
    import json
    doc = json.loads(path.read_text())
    doc["schema_version"] = 99
    path.write_text(json.dumps(doc))
    with pytest.raises(ValueError):
        load_report(path)


@given(st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_report_round_trip_randomized(seed):
    import json
    import tempfile
    from pathlib import Path

    rep = make_report(np.random.default_rng(seed))
    with tempfile.TemporaryDirectory() as d:
        path = Path(d) / "r.json"
        export_report(rep, path)
        assert load_report(path) == rep
        json.loads(path.read_text())  # well-formed JSON
