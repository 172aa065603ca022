import numpy as np
import pytest
from hypothesis import given, strategies as st

from pcclean import autodiff as ad
from pcclean.data import ContaminationSpec, contaminate, generate_shape
from pcclean.detector import (DetectorDataset, OutlierDecision, classify_outliers, cloud_patches, decide,
                              detector_dataset, detector_loss, remove_outliers, train_detector)
from pcclean.geometry import EmptyCloudError, PointCloud
from pcclean.network import Model, ModelConfig
from pcclean.training import TrainConfig

SMALL = ModelConfig.desk(k=8, patch_points=24)


def test_threshold_strict():
    d = decide([0.6, 0.5, 0.4999, 1.0], 0.5)
    assert d.is_outlier.tolist() == [True, False, False, True]
    assert d.outlier_indices.tolist() == [0, 3]
    assert not decide(np.zeros(5)).is_outlier.any()
    with pytest.raises(ValueError):
        decide([0.1], 1.5)


def test_remove_none_and_all(rng):
    cloud = PointCloud(rng.normal(size=(10, 3)), rng.integers(0, 2, 10))
    keep = remove_outliers(cloud, decide(np.zeros(10)))
    np.testing.assert_array_equal(keep.points, cloud.points)
    np.testing.assert_array_equal(keep.labels, cloud.labels)
    empty = remove_outliers(cloud, decide(np.ones(10)))
    assert len(empty) == 0
    with pytest.raises(EmptyCloudError):
        empty.require_nonempty()


def test_remove_matches_filter(rng):
    cloud = PointCloud(rng.normal(size=(100, 3)))
    flags = rng.random(100) < 0.3
    kept = remove_outliers(cloud, OutlierDecision(flags.astype(float), flags, 0.5))
    want = [p for p, f in zip(cloud.points, flags) if not f]
    np.testing.assert_array_equal(kept.points, np.array(want))


def test_remove_length_mismatch(rng):
    with pytest.raises(ValueError):
        remove_outliers(PointCloud(rng.normal(size=(4, 3))), decide(np.zeros(3)))


def test_loss_values(rng):
    assert detector_loss(0.7, 1) == pytest.approx(0.3)
    assert detector_loss(0.0, 0) == 0.0
    p, y = rng.random(50), rng.integers(0, 2, 50)
    assert float(ad.mean(detector_loss(ad.Tensor(p), y)).values) == pytest.approx(
        sum(abs(a - b) for a, b in zip(p, y)) / 50, rel=1e-14)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=30), st.floats(0, 1))
def test_decision_properties(probs, t):
    d = decide(probs, t)
    assert d.is_outlier.tolist() == [p > t for p in probs]


def test_cloud_patches_guard():
    with pytest.raises(ValueError):
        cloud_patches(PointCloud(np.zeros((8, 3)) + np.arange(8)[:, None]), SMALL)


def test_classify_shapes(rng):
    cloud = PointCloud(rng.normal(size=(60, 3)))
    model = Model.create("detector", SMALL, seed=0)
    d = classify_outliers(cloud, model, 0.5)
    assert len(d) == 60 and d.threshold == 0.5
    assert np.all((d.probabilities >= 0) & (d.probabilities <= 1))
    with pytest.raises(ValueError):
        classify_outliers(cloud, Model.create("denoiser", SMALL), 0.5)


def _small_set(n_patches, seed=0):
    pair = contaminate(generate_shape("sphere", 400, seed=seed),
                       ContaminationSpec(0.01, 0.3, seed=seed + 1))
    return detector_dataset([pair.contaminated], SMALL, n_patches, seed=seed)


def test_dataset():
    ds = _small_set(200)
    assert len(ds) == 200 and ds.patches.points.shape == (200, 24, 3)
    assert 0 < ds.labels.mean() < 1
    both = DetectorDataset.concat([ds, ds])
    assert len(both) == 400
    with pytest.raises(ValueError):
        detector_dataset([PointCloud(np.zeros((30, 3)))], SMALL)


def test_zero_lr_keeps_params():
    ds = _small_set(40)
    model = Model.create("detector", SMALL, seed=1)
    before = {n: t.values.copy() for n, t in model.params.items()}
    train_detector(ds, SMALL, TrainConfig(lr=0.0, epochs=2), model=model)
    assert all(np.array_equal(before[n], model.params[n].values) for n in before)


def test_training_smoke_and_determinism():
    ds = _small_set(200)
    hyper = TrainConfig.preset("desk", "detector", epochs=20)
    model, hist = train_detector(ds, SMALL, hyper, init_seed=2)
    assert hist[-1][1] < hist[0][1]
    again, _ = train_detector(ds, SMALL, hyper.with_(epochs=20), init_seed=2)
    from pcclean.checkpoint import dumps
    assert dumps(model.to_checkpoint()) == dumps(again.to_checkpoint())


def test_single_class_warns(caplog):
    ds = _small_set(20)
    ds = DetectorDataset(ds.patches, np.zeros(len(ds)))
    train_detector(ds, SMALL, TrainConfig(epochs=1))
    assert "single class" in caplog.text
