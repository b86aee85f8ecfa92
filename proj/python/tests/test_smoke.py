import json
import math

import numpy as np
import pytest

import graspmamba as gm


def test_discretize_matches_closed_form():
    a = np.array([[-1.0, -2.0]])
    b = np.ones((1, 2))
    a_bar, b_bar = gm.discretize(a, b, np.array([math.log(0.1)]))
    assert np.allclose(a_bar, np.exp(0.1 * a))
    assert np.allclose(b_bar, (np.exp(0.1 * a) - 1.0) / a * b)


def test_scan_equals_convolution():
    rng = np.random.default_rng(0)
    a_bar = rng.uniform(0.2, 0.9, (3, 4))
    b_bar = rng.normal(size=(3, 4))
    c = rng.normal(size=(3, 4))
    x = rng.normal(size=(16, 3))
    y_scan = gm.scan(a_bar, b_bar, c, x)
    y_conv = gm.conv_apply(x, gm.ssm_kernel(a_bar, b_bar, c, 16))
    assert y_scan.shape == (16, 3)
    assert np.allclose(y_scan, y_conv, atol=1e-10)


def test_geometry():
    a = gm.GraspRect(0, 0, 4, 2, 0)
    assert gm.rotated_iou(a, a) == pytest.approx(1.0)
    assert gm.rotated_iou(a, gm.GraspRect(1, 0, 4, 2, 0)) == pytest.approx(0.6)
    assert gm.angle_offset_deg(0.0, math.pi) == pytest.approx(0.0)
    assert gm.is_success(a, [a])
    assert gm.harmonic_mean(0.5, 0.5) == pytest.approx(0.5)


def test_encode_decode_round_trip():
    g = gm.GraspRect(30, 20, 24, 12, 0.3)
    maps = gm.encode_targets([g], 64, 64, 40.0)
    assert maps["quality"].shape == (1, 64, 64)
    (rect, q), = gm.decode_grasps(maps, 1, 40.0)
    assert abs(rect.x - g.x) <= 1 and abs(rect.y - g.y) <= 1
    assert gm.angle_offset_deg(rect.theta, g.theta) < 5
    assert q > 0.5


def test_text_encoder():
    e = gm.encode_text("the red bar", dim=16)
    assert e.shape == (16,)
    assert np.allclose(e, gm.encode_text("THE red, bar!", dim=16))
    with pytest.raises(ValueError):
        gm.encode_text("", dim=16)


def test_dataset_round_trip(tmp_path):
    samples = gm.generate_dataset(4, 3, image_size=64)
    assert len(samples) == 4
    assert samples[0].image.shape == (3, 64, 64)
    gm.save_dataset(samples, tmp_path)
    loaded = gm.load_dataset(tmp_path)
    assert [s.id for s in loaded] == [s.id for s in samples]
    assert np.array_equal(loaded[0].image, samples[0].image)
    with pytest.raises(OSError):
        gm.load_dataset(tmp_path / "missing")


def test_train_checkpoint_infer(tmp_path):
    samples = gm.generate_dataset(6, 1, image_size=32, split_ratio=0.9)
    cfg = json.dumps({"model": {"width": 2, "fused_width": 4, "text_dim": 8, "head_hidden": 4,
                                "depths": [1, 1, 1, 1], "heads": 1, "state_size": 2},
                      "train": {"epochs": 2, "batch_size": 2, "lr": 0.1}})
    model, losses = gm.train(cfg, samples)
    assert len(losses) == 2 and all(math.isfinite(l) for l in losses)
    path = tmp_path / "m.gmv"
    model.save(path)
    restored = gm.load_checkpoint(path)
    image = samples[0].image
    m1 = model.predict_maps(image[None], [samples[0].prompt])
    m2 = restored.predict_maps(image[None], [samples[0].prompt])
    assert np.array_equal(m1["quality"], m2["quality"])
    grasps, heat = restored.infer(image, samples[0].prompt, 2)
    assert heat.shape == (32, 32, 3) and heat.dtype == np.uint8
    assert len(grasps) <= 2
    report = gm.evaluate(restored, samples)
    assert 0.0 <= report["seen"] <= 1.0
    with pytest.raises(ValueError):
        restored.infer(np.zeros((3, 48, 32)), "red bar", 1)


def test_benchmark():
    rows = gm.benchmark_scan([64, 128], ["scan", "attention"], repeats=1)
    assert len(rows) == 4
    assert all(r[2] > 0 for r in rows)
