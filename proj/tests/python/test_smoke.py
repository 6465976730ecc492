import json

import numpy as np
import pytest

import diffaug


def test_schedule():
    s = diffaug.linear_schedule(1000, 1e-4, 0.02)
    assert s.T == 1000
    assert s.signal_to_noise(1000) < 1e-4
    two = diffaug.linear_schedule(2, 0.1, 0.2)
    assert two.alpha_bar(2) == pytest.approx(0.72)
    with pytest.raises(ValueError):
        diffaug.linear_schedule(0, 0.1, 0.2)
    with pytest.raises(IndexError):
        s.beta(0)


def test_q_sample_is_seeded():
    s = diffaug.linear_schedule(50, 1e-3, 0.3)
    x0 = np.linspace(-1, 1, 3 * 4 * 4).reshape(3, 4, 4)
    a = diffaug.q_sample(x0, 10, s, 7)
    b = diffaug.q_sample(x0, 10, s, 7)
    assert a.shape == (3, 4, 4)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, diffaug.q_sample(x0, 10, s, 8))


def test_average_precision():
    gts = [[(0, 0, 4, 4), (10, 10, 4, 4)]]
    assert diffaug.average_precision(gts, [[(0, 0, 4, 4, 1.0), (10, 10, 4, 4, 1.0)]])["ap"] == 1.0
    r = diffaug.average_precision(gts, [[(20, 20, 2, 2, 0.9), (0, 0, 4, 4, 0.8)]])
    assert r["ap"] == pytest.approx(51 * 0.5 / 101)
    assert r["num_tp"] == 1 and r["num_fp"] == 1
    assert diffaug.average_precision(gts, [[(20, 20, 2, 2, 0.9), (0, 0, 4, 4, 0.8)]],
                                     interpolation="all_points")["ap"] == 0.25
    assert diffaug.iou((0, 0, 2, 2), (1, 1, 2, 2)) == pytest.approx(1 / 7)


def test_dataset_operations(tmp_path):
    sim = diffaug.render_toy("sim", 3, tmp_path / "sim")
    real = diffaug.render_toy("real", 2, tmp_path / "real", seed=5)
    assert sim["images"] == 3 and sim["boxes"] >= 3
    assert real["provenance"]["domain"] == "real"
    mixed = diffaug.mix(tmp_path / "sim", tmp_path / "real", tmp_path / "mixed")
    assert mixed["images"] == 5
    assert diffaug.dataset_summary(tmp_path / "mixed")["boxes"] == sim["boxes"] + real["boxes"]
    big = diffaug.resize(tmp_path / "mixed", 64, tmp_path / "big")
    assert big["images"] == 5


def test_cli_in_process(tmp_path):
    code, out, _ = diffaug.run_cli(["render-toy", "--domain", "sim", "--n", "2", "--out", str(tmp_path / "d")])
    assert code == 0
    code, out, _ = diffaug.run_cli(["mix", "--help"])
    assert code == 0 and "--augment" in out
    code, _, err = diffaug.run_cli(["frobnicate"])
    assert code == 2
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"schedule": {"T": 0}}))
    code, _, err = diffaug.run_cli(["experiment", "--config", str(cfg)])
    assert code == 1 and "schedule" in err


def test_config_hash(tmp_path):
    a = tmp_path / "a.json"
    a.write_text(json.dumps({"seed": 1}))
    b = tmp_path / "b.json"
    b.write_text(json.dumps({"seed": 1, "schedule": {}}))
    assert diffaug.config_hash(a) == diffaug.config_hash(b)
    b.write_text(json.dumps({"seed": 2}))
    assert diffaug.config_hash(a) != diffaug.config_hash(b)
