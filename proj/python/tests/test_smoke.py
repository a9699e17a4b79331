# Copyright 2026 The vitlab Authors
# SPDX-License-Identifier: Apache-2.0

import json
import math

import numpy as np
import pytest

import vitlab


def test_patchify_layout_and_shape():
    img = np.arange(16, dtype=np.float64).reshape(1, 4, 4, 1)
    tokens = vitlab.patchify(img, 2)
    assert tokens.shape == (1, 4, 4)
    assert tokens[0].tolist() == [[0, 1, 4, 5], [2, 3, 6, 7], [8, 9, 12, 13], [10, 11, 14, 15]]
    # Same order as a NumPy reshape/transpose.
    x = np.random.default_rng(0).normal(size=(2, 6, 4, 3))
    ref = x.reshape(2, 3, 2, 2, 2, 3).transpose(0, 1, 3, 2, 4, 5).reshape(2, 6, 12)
    assert np.array_equal(vitlab.patchify(x, 2), ref)
    with pytest.raises(vitlab.Error, match="not divisible"):
        vitlab.patchify(np.zeros((1, 5, 4, 1)), 2)
    with pytest.raises(vitlab.ShapeError):
        vitlab.patchify(np.zeros((5, 4, 1)), 2)
    assert issubclass(vitlab.ShapeError, vitlab.Error)


def test_norms_match_numpy():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(3, 7))
    g, b = rng.normal(size=7), rng.normal(size=7)
    mu, var = x.mean(-1, keepdims=True), x.var(-1, keepdims=True)
    z = (x - mu) / np.sqrt(var + 1e-6)
    np.testing.assert_allclose(vitlab.layer_norm(x, g, b), g * z + b, atol=1e-12)
    np.testing.assert_allclose(vitlab.normalize_only(x), z, atol=1e-12)
    rms = np.sqrt((x * x).mean(-1, keepdims=True) + 1e-6)
    np.testing.assert_allclose(vitlab.rms_norm(x, g), g * x / rms, atol=1e-12)
    np.testing.assert_allclose(vitlab.affine_only(x, g, b), g * x + b, atol=1e-15)


def test_dpn_stem_matches_numpy_composition():
    cfg = vitlab.micro_model(stem_norm="dpn")
    params = vitlab.init_params(cfg, seed=3)
    rng = np.random.default_rng(2)
    for k in ("stem/ln0/gamma", "stem/ln0/beta", "stem/ln1/gamma", "stem/ln1/beta"):
        params[k] = params[k] + rng.normal(size=params[k].shape)
    x = rng.normal(size=(2, 4, 4))

    def ln(v, g, b):
        return g * (v - v.mean(-1, keepdims=True)) / np.sqrt(v.var(-1, keepdims=True) + 1e-6) + b

    h = ln(x, params["stem/ln0/gamma"], params["stem/ln0/beta"])
    h = h @ params["stem/dense/kernel"] + params["stem/dense/bias"]
    h = ln(h, params["stem/ln1/gamma"], params["stem/ln1/beta"])
    np.testing.assert_allclose(vitlab.stem_forward(cfg, params, x), h, atol=1e-12)


def test_model_logits_and_head_bias():
    cfg = vitlab.micro_model()
    params = vitlab.init_params(cfg, seed=0)
    assert np.all(params["head/dense/bias"] == -6.9)
    logits = vitlab.vit_logits(cfg, params, np.zeros((2, 4, 4, 1)))
    assert logits.shape == (2, 3)
    assert np.all(np.isfinite(logits))
    assert abs(1 / (1 + math.exp(6.9)) - 1.006e-3) < 1e-5


def test_gradient_check_rows_cover_every_parameter():
    cfg = vitlab.micro_model(stem_norm="dpn", block_sa_ln="pre_post")
    rows = vitlab.gradient_check_model(cfg)
    assert len(rows) == len(vitlab.init_params(cfg))
    assert all(r["passed"] for r in rows), [r for r in rows if not r["passed"]]


def test_schedule_clip_and_grid():
    train = {"total_steps": 100, "warmup_steps": 10, "base_lr": 0.01}
    assert vitlab.cosine_schedule(0, train) == 0.0
    assert vitlab.cosine_schedule(10, train) == 0.01
    assert abs(vitlab.cosine_schedule(100, train)) < 1e-12
    grads, before = vitlab.clip_global_norm([np.array([1.2, 0.0]), np.array([1.6])], 1.0)
    assert before == pytest.approx(2.0)
    assert grads[0].tolist() == [0.6, 0.0]
    grid = vitlab.placement_grid()
    assert len(grid) == 9 and len(set(grid)) == 9 and grid[0] == ("pre", "pre")


def test_train_on_synthetic_is_deterministic(tmp_path):
    spec = {
        "name": "smoke",
        "model": {"image_size": [8, 8], "channels": 1, "patch_size": 4,
                  "hidden": 16, "depth": 1, "heads": 2, "mlp_dim": 16, "num_classes": 2,
                  "stem_norm": "dpn"},
        "train": {"total_steps": 10, "batch_size": 8, "warmup_steps": 2, "log_every": 5},
        "data": {"dataset": "synthetic", "synthetic_train": 16, "synthetic_test": 8},
    }
    out = []
    for name in ("a", "b"):
        spec["out_dir"] = str(tmp_path / name)
        r = vitlab.train(spec)
        assert r["status"] == "ok"
        out.append(open(r["metrics_path"], "rb").read() + open(r["checkpoint_path"], "rb").read())
    assert out[0] == out[1]
    images, csv = vitlab.export_scales(tmp_path / "a" / "checkpoint.bin", tmp_path / "scales")
    assert len(images) == 1 and open(images[0]).read().startswith("P2")


def test_config_errors_surface():
    with pytest.raises(Exception, match="post_posemb"):
        vitlab.init_params(vitlab.micro_model(stem_norm="bogus"))
    with pytest.raises(Exception, match="unknown"):
        vitlab.init_params(json.dumps({"hiden": 3}))
