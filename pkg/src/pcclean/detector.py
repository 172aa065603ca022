"""Outlier detection: per-point probabilities, thresholding, removal, training."""
import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .geometry import PatchBatch, SpatialIndex, bounding_box, extract_patches
from .network import Model
from .training import TrainConfig, run_sgd

log = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.5


@dataclass
class OutlierDecision:
    probabilities: np.ndarray
    is_outlier: np.ndarray
    threshold: float

    def __post_init__(self):
        if len(self.probabilities) != len(self.is_outlier):
            raise ValueError("probabilities and flags differ in length")

    def __len__(self):
        return len(self.probabilities)

    @property
    def outlier_indices(self):
        return np.flatnonzero(self.is_outlier)


def decide(probabilities, threshold=DEFAULT_THRESHOLD):
    """Flag every point whose probability is strictly above ``threshold``."""
    if not 0 <= threshold <= 1:
        raise ValueError(f"threshold must be in [0, 1], got {threshold}")
    probs = np.asarray(probabilities, dtype=np.float64)
    return OutlierDecision(probs, probs > threshold, float(threshold))


def cloud_patches(cloud, config, centers=None, seed=0, index=None):
    """Patches for the given centers (default: every point) under a model config."""
    cloud.require_nonempty()
    if len(cloud) <= config.k:
        raise ValueError(f"cloud has {len(cloud)} points; need more than k={config.k}")
    radius = config.patch_radius * bounding_box(cloud).diagonal
    if radius <= 0:
        raise ValueError("degenerate cloud: bounding-box diagonal is zero")
    if centers is None:
        centers = np.arange(len(cloud))
    return extract_patches(cloud, centers, radius, config.patch_points, seed,
                           index=index, k_min=config.k)


def outlier_probabilities(cloud, model, seed=0, batch_size=256):
    if model.kind != "detector":
        raise ValueError(f"expected a detector model, got {model.kind}")
    return model.predict(cloud_patches(cloud, model.config, seed=seed), batch_size)


def classify_outliers(cloud, model, threshold=DEFAULT_THRESHOLD, seed=0, batch_size=256):
    """Run the detector on a patch around every point and threshold the result."""
    if not 0 <= threshold <= 1:
        raise ValueError(f"threshold must be in [0, 1], got {threshold}")
    return decide(outlier_probabilities(cloud, model, seed, batch_size), threshold)


def remove_outliers(cloud, decision):
    """Surviving points in their original order (labels filtered alike)."""
    if len(decision) != len(cloud):
        raise ValueError(f"decision covers {len(decision)} points, cloud has {len(cloud)}")
    return cloud.subset(~np.asarray(decision.is_outlier, dtype=bool))


def detector_loss(predicted, label):
    """|predicted - label|; elementwise on arrays, differentiable on Tensors."""
    if isinstance(predicted, ad.Tensor):
        return ad.abs_(predicted - label)
    return np.abs(np.asarray(predicted, dtype=np.float64) - label)


@dataclass
class DetectorDataset:
    patches: PatchBatch
    labels: np.ndarray

    def __len__(self):
        return len(self.labels)

    @classmethod
    def concat(cls, parts):
        return cls(PatchBatch(np.concatenate([p.patches.center_indices for p in parts]),
                              np.concatenate([p.patches.points for p in parts]),
                              np.concatenate([p.patches.scales for p in parts]),
                              np.concatenate([p.patches.offsets for p in parts])),
                   np.concatenate([p.labels for p in parts]))


def detector_dataset(clouds, config, patches_per_cloud=None, seed=0):
    """(patch, center label) pairs from labelled clouds.

    With ``patches_per_cloud`` set, centers are drawn uniformly without
    replacement; otherwise every point is used.
    """
    rng = np.random.default_rng(seed)
    parts = []
    for cloud in clouds:
        if cloud.labels is None:
            raise ValueError("detector training clouds need outlier labels")
        n = len(cloud)
        if patches_per_cloud is None or patches_per_cloud >= n:
            centers = np.arange(n)
        else:
            centers = np.sort(rng.choice(n, patches_per_cloud, replace=False))
        patch_seed = int(rng.integers(2**31))
        patches = cloud_patches(cloud, config, centers, seed=patch_seed, index=SpatialIndex(cloud.points))
        parts.append(DetectorDataset(patches, cloud.labels[centers].astype(np.float64)))
    return DetectorDataset.concat(parts)


def train_detector(dataset, config, hyper=None, init_seed=0, model=None, on_epoch=None, scheme=None):
    """SGD on the mean L1 loss between probabilities and labels.

    Returns (model, history). Pass ``model`` to continue training it in place.
    """
    hyper = hyper or TrainConfig.preset("desk", "detector")
    labels = np.asarray(dataset.labels, dtype=np.float64)
    if len(np.unique(labels)) < 2:
        log.warning("detector training set holds a single class; training anyway")
    if model is None:
        model = Model.create("detector", config, seed=init_seed, scheme=scheme or hyper.init or "he")
    patches = dataset.patches

    def batch_loss(idx):
        probs = model.forward(patches[idx])
        return ad.mean(detector_loss(probs, labels[idx]))

    history = run_sgd(model.parameters(), len(labels), batch_loss, hyper, on_epoch)
    return model, history

