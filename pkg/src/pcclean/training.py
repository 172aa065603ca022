"""Plain minibatch SGD shared by both trainers."""
import logging
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad

log = logging.getLogger(__name__)

# hyperparameter presets per model kind; "paper-hyper" holds the reference
# long-run values, "desk" the ones that make progress in minutes
PRESETS = {
    "paper-hyper": {
        "detector": {"lr": 1e-4, "epochs": 800, "init": "he"},
        "denoiser": {"lr": 1e-8, "epochs": 800, "init": "uniform"},
    },
    "desk": {
        "detector": {"lr": 1e-2, "epochs": 50, "init": "he"},
        "denoiser": {"lr": 1e-1, "epochs": 50, "init": "mixed"},
    },
}


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    lr: float = 1e-4
    epochs: int = 50
    seed: int = 0
    init: str | None = None  # parameter init scheme for fresh models

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 0 or self.lr < 0:
            raise ValueError("need batch_size >= 1, epochs >= 0, lr >= 0")

    @classmethod
    def preset(cls, name, kind, **overrides):
        try:
            values = dict(PRESETS[name][kind])
        except KeyError:
            raise ValueError(f"unknown preset {name!r} for {kind!r}") from None
        values.update(overrides)
        return cls(**values)

    def with_(self, **changes):
        return replace(self, **changes)


def sgd_step(params, lr):
    for p in params:
        if p.grad is not None:
            p.values = p.values - lr * p.grad


def run_sgd(params, n_samples, batch_loss, cfg, on_epoch=None):
    """Minimize ``batch_loss(indices) -> scalar Tensor`` (a batch mean).

    Samples are reshuffled each epoch from ``cfg.seed``. Returns the history
    as (epoch, mean loss over the epoch's samples) pairs.
    """
    if n_samples < 1:
        raise ValueError("no training samples")
    rng = np.random.default_rng(cfg.seed)
    history = []
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n_samples)
        total = 0.0
        for start in range(0, n_samples, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            for p in params:
                p.zero_grad()
            loss = batch_loss(idx)
            ad.backward(loss)
            sgd_step(params, cfg.lr)
            total += float(loss.values) * len(idx)
        mean = total / n_samples
        history.append((epoch, mean))
        log.info("epoch %d mean loss %.6g", epoch, mean)
        if on_epoch is not None:
            on_epoch(epoch, mean)
    return history


def format_loss_log(history):
    """``epoch,mean_loss`` lines."""
    return "".join(f"{epoch},{loss!r}\n" for epoch, loss in history)
