import math

import numpy as np
import pytest

import siamfc


def test_paper_geometry():
    shapes = {name: (c, h) for name, c, h, _ in siamfc.infer_shapes("paper", 255)}
    assert shapes["conv1"] == (96, 123)
    assert shapes["conv5"] == (256, 22)
    assert siamfc.infer_shapes("paper", 127)[-1][2] == 6
    with pytest.raises(siamfc.ConfigError):
        siamfc.infer_shapes("huge", 127)


def test_xcorr_matches_numpy():
    rng = np.random.default_rng(0)
    z = rng.standard_normal((1, 4, 3, 3)).astype(np.float32)
    x = rng.standard_normal((2, 4, 8, 7)).astype(np.float32)
    out = siamfc.xcorr(z, x)
    assert out.shape == (2, 1, 6, 5)
    for b in range(2):
        for u in range(6):
            for v in range(5):
                ref = float(np.sum(z[0] * x[b, :, u : u + 3, v : v + 3]))
                assert out[b, 0, u, v] == pytest.approx(ref, abs=1e-4)
    with pytest.raises(siamfc.ShapeError):
        siamfc.xcorr(z, x[:, :2])


def test_labels_and_loss():
    labels, weights = siamfc.label_map()
    assert int((labels > 0).sum()) == 13
    assert weights[labels > 0].sum() == pytest.approx(0.5)
    assert weights[labels < 0].sum() == pytest.approx(0.5)
    assert siamfc.logistic_loss(0.0, 1.0) == pytest.approx(math.log(2))
    assert siamfc.map_loss(np.zeros((17, 17), np.float32)) == pytest.approx(math.log(2))


def test_crop_geometry():
    assert siamfc.crop_scale(63.5, 63.5) == pytest.approx(1.0)
    image = np.full((40, 50, 3), 80.0, np.float32)
    crop, fill = siamfc.extract_crop(image, 0.0, 0.0, 40.0, 64)
    assert crop.shape == (64, 64, 3)
    assert fill == pytest.approx(0.75, abs=2 / 64)


def test_boxes():
    a = siamfc.BoundingBox.from_corner(0, 0, 2, 2)
    b = siamfc.BoundingBox.from_corner(1, 1, 2, 2)
    assert siamfc.iou(a, b) == pytest.approx(1 / 7)
    assert siamfc.ope_auc([a, a], [a, a]) == pytest.approx(20 / 21)


def test_model_round_trip(tmp_path):
    model = siamfc.Model("tiny", seed=3)
    model.bias = 0.25
    model.save(tmp_path / "m.sfcm")
    back = siamfc.Model.load(tmp_path / "m.sfcm")
    assert back.preset == "tiny"
    assert back.bias == pytest.approx(0.25)
    x = np.random.default_rng(1).random((1, 3, 127, 127), dtype=np.float32)
    np.testing.assert_array_equal(model.embed(x), back.embed(x))
    assert model.embed(x).shape == (1, 32, 6, 6)
    (tmp_path / "bad.sfcm").write_bytes(b"nope")
    with pytest.raises(siamfc.FormatError):
        siamfc.Model.load(tmp_path / "bad.sfcm")
    with pytest.raises(siamfc.IoError):
        siamfc.Model.load(tmp_path / "missing.sfcm")


def test_track_synthetic_sequence():
    frames, truth = siamfc.synth_sequence(seed=4, frames=5, canvas=160)
    assert frames[0].shape == (160, 160, 3)
    boxes = siamfc.track(siamfc.Model("tiny", seed=1), frames, truth[0], num_scales=3)
    assert len(boxes) == 5
    assert boxes[0].cx == truth[0].cx
    with pytest.raises(siamfc.ConfigError):
        siamfc.track(siamfc.Model("tiny"), frames, truth[0], num_scales=4)


def test_small_pipeline(tmp_path):
    siamfc.set_num_threads(1)
    assert siamfc.synth_dataset(tmp_path / "train", 2, seed=1, frames=6, canvas=128) == 2
    assert siamfc.synth_dataset(tmp_path / "test", 1, seed=1, test=True, frames=6, canvas=128) == 1
    assert siamfc.curate(tmp_path / "train", tmp_path / "cur") == 12
    model, losses = siamfc.train(tmp_path / "cur", epochs=2, pairs_per_epoch=4, batch=2, out_dir=tmp_path / "out")
    assert len(losses) == 2
    assert all(math.isfinite(v) for v in losses)
    assert (tmp_path / "out" / "model.sfcm").exists()
    report = siamfc.evaluate(model, tmp_path / "test", vot=True)
    assert 0.0 <= report["auc"] <= 1.0
    assert len(report["sequences"]) == 1
    assert len(report["sequences"][0]["predictions"]) == 6
