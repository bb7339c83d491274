"""Smoke tests for the _xlsor extension via the xlsor package."""

import numpy as np
import pytest

import xlsor


def test_poly_lr_values():
    assert xlsor.poly_lr(0.02, 0, 1000) == 0.02
    assert xlsor.poly_lr(0.02, 1000, 1000) == 0.0
    assert abs(xlsor.poly_lr(0.02, 500, 1000) - 0.010718) < 1e-6
    with pytest.raises(ValueError):
        xlsor.poly_lr(0.02, 1001, 1000)


def test_crisscross_set():
    assert xlsor.crisscross_set(0, 0, 1, 1) == [(0, 0)]
    members = xlsor.crisscross_set(1, 1, 3, 3)
    assert len(members) == 5
    assert members.count((1, 1)) == 1
    with pytest.raises(ValueError):
        xlsor.crisscross_set(5, 0, 3, 3)


def test_attention_cost_ratio():
    cc = xlsor.attention_cost(64, 64, 64, 8, "crisscross")
    nl = xlsor.attention_cost(64, 64, 64, 8, "nonlocal")
    assert nl / cc == 4096 / 127


def test_cca_forward_attention_normalized():
    rng = np.random.default_rng(0)
    h = rng.normal(size=(1, 8, 5, 6))
    wq, wk, wv = xlsor.make_cca_weights(8, seed=7)
    out, attn = xlsor.cca_forward(h, wq, wk, wv)
    assert out.shape == h.shape
    assert attn.shape == (1, 5 + 6 - 1, 5, 6)
    np.testing.assert_allclose(attn.sum(axis=1), 1.0, atol=1e-9)

    # single-row map: criss-cross coincides with dense attention
    row = rng.normal(size=(1, 8, 1, 5))
    np.testing.assert_allclose(
        xlsor.cca_forward(row, wq, wk, wv)[0],
        xlsor.nonlocal_forward(row, wq, wk, wv),
        atol=1e-10,
    )


def test_influence_map_row_column_then_all():
    rng = np.random.default_rng(1)
    h = rng.normal(size=(1, 3, 5, 7))
    wq, wk, wv = xlsor.make_cca_weights(3, seed=9)
    one = xlsor.influence_map(h, wq, wk, wv, x=2, y=3, passes=1)
    expected = np.zeros((5, 7), dtype=np.uint8)
    expected[3, :] = 1
    expected[:, 2] = 1
    np.testing.assert_array_equal(one, expected)
    two = xlsor.influence_map(h, wq, wk, wv, x=2, y=3, passes=2)
    assert two.all()


def test_phantom_determinism_and_fraction():
    img1, mask1 = xlsor.generate_phantom(64, 64, seed=5)
    img2, mask2 = xlsor.generate_phantom(64, 64, seed=5)
    np.testing.assert_array_equal(img1, img2)
    np.testing.assert_array_equal(mask1, mask2)
    assert 0.15 <= mask1.mean() <= 0.45
    assert img1.min() >= 0.0 and img1.max() <= 1.0
    with pytest.raises(ValueError):
        xlsor.generate_phantom(16, 64, seed=5)


def test_synthesize_abnormal_identity_and_mask_free():
    img, mask = xlsor.generate_phantom(48, 48, seed=11)
    unchanged = xlsor.synthesize_abnormal(img, mask, "diffuse_haze", 0.0, seed=3)
    np.testing.assert_array_equal(unchanged, img)
    hazy = xlsor.synthesize_abnormal(img, mask, "diffuse_haze", 0.9, seed=3)
    assert hazy.mean() > img.mean()
    with pytest.raises(ValueError):
        xlsor.synthesize_abnormal(img, mask, "not_a_style", 0.5, seed=3)


def test_metrics_and_avd_example():
    a = np.zeros((1, 3), dtype=np.uint8)
    b = np.zeros((1, 3), dtype=np.uint8)
    a[0, 0] = a[0, 1] = 1
    b[0, 2] = 1
    assert xlsor.averaged_hausdorff(a, b) == 1.5

    scores = xlsor.evaluate_masks(a, a)
    assert scores["dice"] == 1.0
    assert scores["avd"] == 0.0

    report = xlsor.evaluate_dataset([a, b], [a, a])
    assert list(report.keys()) == ["rec", "pre", "dice", "avd", "vs"]
    assert report["dice"]["n"] == 2


def test_segmentor_build_predict_and_train(tmp_path):
    seg = xlsor.Segmentor.build(input_h=32, input_w=32, base_channels=2, seed=21)
    img, mask = xlsor.generate_phantom(32, 32, seed=33)
    prob = seg.predict(img)
    assert prob.shape == (32, 32)
    assert prob.min() >= 0.0 and prob.max() <= 1.0

    path = tmp_path / "model.xlsr"
    seg.save(str(path))
    loaded = xlsor.Segmentor.load(str(path))
    np.testing.assert_array_equal(loaded.predict(img), prob)
    assert loaded.config["base_channels"] == 2

    imgs = np.stack([img, img])
    masks = np.stack([mask, mask])
    trained, log = xlsor.train_segmentor(
        imgs, masks, base_channels=2, max_iter=30, batch_size=2, model_seed=1, train_seed=2
    )
    assert len(log) == 30
    assert log[-1][2] < log[0][2]  # loss decreased
    pm = trained.propagate_mask(img)
    assert pm.shape == (32, 32)


def test_gradcheck_binding():
    checks = xlsor.gradcheck(trials=2, seed=99)
    assert len(checks) >= 10
    assert all(c["passed"] for c in checks)
