import numpy as np
import pytest

import resunetpp as rp


def m_cfg():
    cfg = rp.ModelConfig()
    cfg.filters = [4, 8, 8, 8, 8]
    cfg.se_reduction = 4
    return cfg


def small_model(seed=0):
    cfg = m_cfg()
    m = rp.Model(cfg, seed)
    # record batch-norm running statistics so eval mode is usable
    m.forward(np.random.default_rng(seed).random((2, 3, 8, 8), dtype=np.float32), train=True)
    return m


def test_default_parameter_count():
    m = rp.Model()
    assert m.count_parameters() == 13_097_600
    assert "delta_vs_reference" in m.summary()
    assert rp.REFERENCE_PARAMETERS == 16_228_001


def test_predict_shape_range_and_tta():
    m = small_model()
    x = np.random.default_rng(0).random((2, 3, 16, 24), dtype=np.float32)
    with pytest.raises(rp.StateError):
        rp.Model(m_cfg()).predict(x)
    p = m.predict(x)
    assert p.shape == (2, 1, 16, 24)
    assert np.all((p >= 0) & (p <= 1))
    assert np.array_equal(m.predict(x, tta=["identity"]), p)
    assert m.predict(x, tta=["identity", "hflip"]).shape == p.shape
    with pytest.raises(rp.ShapeError):
        m.predict(np.zeros((1, 3, 10, 10), np.float32))


def test_save_load_identical(tmp_path):
    m = small_model(3)
    path = str(tmp_path / "w.bin")
    m.save(path, {"note": "x"})
    assert rp.read_weight_metadata(path)["note"] == "x"
    x = np.random.default_rng(1).random((1, 3, 8, 8), dtype=np.float32)
    assert np.array_equal(rp.Model.load(path).predict(x), m.predict(x))


def test_metrics_against_numpy():
    rng = np.random.default_rng(2)
    pred = (rng.random(100) > 0.5).astype(np.uint8)
    gt = (rng.random(100) > 0.5).astype(np.uint8)
    tp = np.sum(pred & gt)
    assert rp.dsc(pred, gt) == pytest.approx(2 * tp / (pred.sum() + gt.sum()))
    assert rp.iou(pred, gt) == pytest.approx(tp / np.sum(pred | gt))
    scores = rng.random(100)
    pos, neg = scores[gt == 1], scores[gt == 0]
    pairwise = np.mean((pos[:, None] > neg[None, :]) + 0.5 * (pos[:, None] == neg[None, :]))
    assert rp.roc_auc(scores, gt) == pytest.approx(pairwise)


def test_crf_identity_and_smoothing():
    img = np.full((8, 8, 3), 128, np.uint8)
    prob = np.full((8, 8), 0.2)
    prob[:, :4] = 0.8
    params = rp.CrfParams()
    params.iterations = 0
    assert np.allclose(rp.crf_refine(img, prob, params), prob)
    params.iterations = 5
    q = rp.crf_refine(img, prob, params)
    assert q.shape == (8, 8)
    assert q[0, 0] > 0.5 > q[0, 7]
    with pytest.raises(rp.ConfigError):
        params.iterations = -1
        rp.crf_refine(img, prob, params)
