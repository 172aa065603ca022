"""Displacement-based denoising and its nearest/farthest-point training loss."""
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .detector import cloud_patches
from .geometry import PatchBatch, PointCloud, SpatialIndex, bounding_box, sq_dists
from .network import Model
from .training import TrainConfig, run_sgd

DEFAULT_ALPHA = 0.99
MAX_TARGET_POINTS = 100


def _neighborhood(points):
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("ground-truth neighborhood is empty")
    return pts


def loss_s(p, neighborhood):
    """Squared distance from p to the nearest point of the neighborhood."""
    return float(sq_dists(_neighborhood(neighborhood), np.asarray(p, dtype=np.float64)).min())


def loss_r(p, neighborhood):
    """Squared distance from p to the farthest point of the neighborhood."""
    return float(sq_dists(_neighborhood(neighborhood), np.asarray(p, dtype=np.float64)).max())


def loss_alpha(p, neighborhood, alpha=DEFAULT_ALPHA):
    if not 0 <= alpha <= 1:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    return alpha * loss_s(p, neighborhood) + (1 - alpha) * loss_r(p, neighborhood)


def alpha_loss_tensor(predicted, neighborhoods, alpha=DEFAULT_ALPHA):
    """Batch mean of the alpha loss for predicted points (B, 3) as a Tensor.

    The nearest and farthest targets are chosen from the current values
    (first index on ties) and held fixed, so the gradient flows only
    through the predicted points.
    """
    if not 0 <= alpha <= 1:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    pv = predicted.values
    near = np.empty_like(pv)
    far = np.empty_like(pv)
    for b, nbhd in enumerate(neighborhoods):
        d2 = sq_dists(nbhd, pv[b])
        near[b] = nbhd[np.argmin(d2)]
        far[b] = nbhd[np.argmax(d2)]
    dn = predicted - near
    df = predicted - far
    per_point = alpha * ad.sum_(dn * dn, axis=1) + (1 - alpha) * ad.sum_(df * df, axis=1)
    return ad.mean(per_point)


def displacements(cloud, model, seed=0, batch_size=256):
    if model.kind != "denoiser":
        raise ValueError(f"expected a denoiser model, got {model.kind}")
    return model.predict(cloud_patches(cloud, model.config, seed=seed), batch_size)


def apply_denoise(cloud, model, seed=0, batch_size=256, passes=1):
    """Move every point by the displacement predicted from its patch."""
    cloud.require_nonempty()
    out = cloud
    for i in range(passes):
        out = PointCloud(out.points + displacements(out, model, seed + i, batch_size), out.labels)
    return out


@dataclass
class DenoiserDataset:
    patches: PatchBatch
    neighborhoods: list

    def __len__(self):
        return len(self.neighborhoods)


def ground_truth_neighborhood(clean_index, anchor, radius, cap=MAX_TARGET_POINTS):
    """Clean points within ``radius`` of ``anchor``, at most ``cap`` nearest."""
    ids = clean_index.radius(anchor, radius)
    if len(ids) > cap:
        ids, _ = clean_index.knn(anchor, cap)
    if len(ids) == 0:
        ids, _ = clean_index.knn(anchor, 1)
    return clean_index.points[np.sort(ids)]


def denoiser_dataset(pairs, config, patches_per_cloud=None, seed=0):
    """Noisy patches with their clean target neighborhoods.

    Outlier-labelled points are skipped; the correspondence of each noisy
    point gives the clean anchor of its target neighborhood.
    """
    rng = np.random.default_rng(seed)
    patch_parts, nbhds = [], []
    for pair in pairs:
        noisy, clean = pair.contaminated, pair.clean
        if len(pair.correspondence) != len(noisy):
            raise ValueError("unpaired data: correspondence does not cover the noisy cloud")
        inliers = np.flatnonzero(np.asarray(pair.labels) == 0)
        if len(inliers) <= config.k:
            raise ValueError("too few inlier points to build denoiser patches")
        noisy_in = noisy.subset(inliers)
        corr = pair.correspondence[inliers]
        n = len(inliers)
        if patches_per_cloud is None or patches_per_cloud >= n:
            centers = np.arange(n)
        else:
            centers = np.sort(rng.choice(n, patches_per_cloud, replace=False))
        patch_seed = int(rng.integers(2**31))
        patches = cloud_patches(noisy_in, config, centers, seed=patch_seed)
        radius = config.patch_radius * bounding_box(noisy_in).diagonal
        clean_index = SpatialIndex(clean.points)
        for c in centers:
            nbhds.append(ground_truth_neighborhood(clean_index, clean.points[corr[c]], radius))
        patch_parts.append(patches)
    patches = PatchBatch(np.concatenate([p.center_indices for p in patch_parts]),
                         np.concatenate([p.points for p in patch_parts]),
                         np.concatenate([p.scales for p in patch_parts]),
                         np.concatenate([p.offsets for p in patch_parts]))
    return DenoiserDataset(patches, nbhds)


def train_denoiser(dataset, config, hyper=None, alpha=DEFAULT_ALPHA, init_seed=0, scheme=None,
                   model=None, on_epoch=None):
    """SGD on the mean alpha loss of the displaced patch centers (world units)."""
    hyper = hyper or TrainConfig.preset("desk", "denoiser")
    if not 0 <= alpha <= 1:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    if model is None:
        model = Model.create("denoiser", config, seed=init_seed, scheme=scheme or hyper.init or "uniform")
    patches = dataset.patches
    nbhds = dataset.neighborhoods

    def batch_loss(idx):
        batch = patches[idx]
        moved = model.forward(batch) + batch.offsets
        return alpha_loss_tensor(moved, [nbhds[i] for i in idx], alpha)

    history = run_sgd(model.parameters(), len(nbhds), batch_loss, hyper, on_epoch)
    return model, history
