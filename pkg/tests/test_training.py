import numpy as np
import pytest

from pcclean import autodiff as ad
from pcclean.training import PRESETS, TrainConfig, format_loss_log, run_sgd


def quadratic_problem():
    w = ad.Tensor(np.array([3.0, -2.0]), requires_grad=True)
    targets = np.random.default_rng(0).normal(size=(20, 2))

    def batch_loss(idx):
        d = w - targets[idx]
        return ad.mean(ad.sum_(d * d, axis=1))

    return w, targets, batch_loss


def test_presets():
    assert TrainConfig.preset("paper-hyper", "detector").lr == 1e-4
    assert TrainConfig.preset("paper-hyper", "denoiser").lr == 1e-8
    assert TrainConfig.preset("paper-hyper", "denoiser").epochs == 800
    assert TrainConfig.preset("desk", "detector", epochs=3).epochs == 3
    assert set(PRESETS) == {"paper-hyper", "desk"}
    with pytest.raises(ValueError):
        TrainConfig.preset("fast", "detector")


def test_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(lr=-1)


def test_converges_to_mean():
    w, targets, loss = quadratic_problem()
    hist = run_sgd([w], 20, loss, TrainConfig(batch_size=20, lr=0.25, epochs=40))
    np.testing.assert_allclose(w.values, targets.mean(axis=0), atol=1e-8)
    assert hist[-1][1] < hist[0][1]
    assert [e for e, _ in hist] == list(range(1, 41))


def test_zero_lr_is_identity():
    w, _, loss = quadratic_problem()
    run_sgd([w], 20, loss, TrainConfig(batch_size=3, lr=0.0, epochs=5))
    np.testing.assert_array_equal(w.values, [3.0, -2.0])


def test_seeded_shuffles_reproducible():
    runs = []
    for _ in range(2):
        w, _, loss = quadratic_problem()
        run_sgd([w], 20, loss, TrainConfig(batch_size=3, lr=0.1, epochs=3, seed=7))
        runs.append(w.values.copy())
    assert runs[0].tobytes() == runs[1].tobytes()


def test_callback_and_log():
    w, _, loss = quadratic_problem()
    seen = []
    hist = run_sgd([w], 20, loss, TrainConfig(epochs=2), on_epoch=lambda e, m: seen.append(e))
    assert seen == [1, 2]
    lines = format_loss_log(hist).splitlines()
    assert len(lines) == 2 and lines[0].startswith("1,")
    assert float(lines[1].split(",")[1]) == hist[1][1]


def test_no_samples():
    w, _, loss = quadratic_problem()
    with pytest.raises(ValueError):
        run_sgd([w], 0, loss, TrainConfig())
