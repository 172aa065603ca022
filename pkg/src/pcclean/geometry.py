"""Point clouds, bounding boxes, spatial queries and patch extraction."""
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

# relative slack when asking the kd-tree for candidates; exact distances
# are recomputed afterwards so the slack only has to cover its rounding
_SLACK = 1e-9


class EmptyCloudError(ValueError):
    pass


def sq_dists(points, q):
    """Squared Euclidean distance from each row of ``points`` to ``q``."""
    d = points - q
    return (d * d).sum(axis=-1)


@dataclass
class PointCloud:
    """Ordered (n, 3) points with optional per-point binary outlier labels."""

    points: np.ndarray
    labels: np.ndarray = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.size == 0:
            pts = pts.reshape(0, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must have shape (n, 3), got {pts.shape}")
        if not np.isfinite(pts).all():
            raise ValueError("point coordinates must be finite")
        self.points = pts
        if self.labels is not None:
            labels = np.asarray(self.labels).astype(np.int8).reshape(-1)
            if len(labels) != len(pts):
                raise ValueError(f"{len(labels)} labels for {len(pts)} points")
            if not np.isin(labels, (0, 1)).all():
                raise ValueError("labels must be 0 or 1")
            self.labels = labels

    def __len__(self):
        return len(self.points)

    def require_nonempty(self, what="point cloud"):
        if len(self.points) == 0:
            raise EmptyCloudError(f"{what} is empty")
        return self

    def subset(self, mask_or_index):
        labels = None if self.labels is None else self.labels[mask_or_index]
        return PointCloud(self.points[mask_or_index], labels)


@dataclass(frozen=True)
class BoundingBox:
    min: np.ndarray
    max: np.ndarray

    @property
    def extent(self):
        return self.max - self.min

    @property
    def diagonal(self):
        return float(np.linalg.norm(self.max - self.min))

    @property
    def center(self):
        return 0.5 * (self.min + self.max)


def bounding_box(cloud):
    cloud.require_nonempty()
    return BoundingBox(cloud.points.min(axis=0), cloud.points.max(axis=0))


class SpatialIndex:
    """Immutable kd-tree over a cloud with exact, index-ordered tie handling.

    Candidates come from :class:`scipy.spatial.cKDTree`; distances are then
    recomputed as ``sum((p - q)**2)`` and ordered by (distance, index), so
    results equal an exhaustive scan using the same arithmetic.
    """

    def __init__(self, points):
        pts = np.array(points, dtype=np.float64)
        if len(pts) == 0:
            raise EmptyCloudError("cannot index an empty cloud")
        pts.setflags(write=False)
        self.points = pts
        self._tree = cKDTree(pts)

    def __len__(self):
        return len(self.points)

    def knn(self, query, k):
        """Indices (k,) and squared distances of the k nearest points to ``query``."""
        idx, d2 = self.knn_many(np.asarray(query, dtype=np.float64)[None, :], k)
        return idx[0], d2[0]

    def knn_many(self, queries, k):
        queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        n = len(self.points)
        if not 1 <= k <= n:
            raise ValueError(f"k must be in [1, {n}], got {k}")
        kk = min(k + 1, n)
        dist, cand = self._tree.query(queries, kk)
        dist = dist.reshape(len(queries), kk)
        cand = cand.reshape(len(queries), kk)
        out_idx = np.empty((len(queries), k), dtype=np.int64)
        out_d2 = np.empty((len(queries), k))
        for row, q in enumerate(queries):
            if kk > k and dist[row, k] > dist[row, k - 1] * (1 + _SLACK) + 1e-300:
                # the k-set is unambiguous; only its order needs exact distances
                ids = cand[row, :k]
            else:
                ids = np.asarray(
                    self._tree.query_ball_point(q, dist[row, k - 1] * (1 + _SLACK) + 1e-300),
                    dtype=np.int64,
                )
            d2 = sq_dists(self.points[ids], q)
            order = np.lexsort((ids, d2))[:k]
            out_idx[row] = ids[order]
            out_d2[row] = d2[order]
        return out_idx, out_d2

    def radius(self, query, r):
        """Sorted indices of points with squared distance <= r**2."""
        q = np.asarray(query, dtype=np.float64)
        ids = np.asarray(self._tree.query_ball_point(q, r * (1 + _SLACK) + 1e-300), dtype=np.int64)
        ids.sort()
        return ids[sq_dists(self.points[ids], q) <= r * r]

    def nearest_sq_dist(self, queries):
        """Squared distance from each query to its nearest indexed point."""
        queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        _, nn = self._tree.query(queries, 1)
        return sq_dists(self.points[nn], queries)


def build_spatial_index(cloud):
    cloud.require_nonempty()
    return SpatialIndex(cloud.points)


@dataclass
class Patch:
    """Neighborhood of one center point in normalized coordinates.

    ``points`` = (source points - centroid_offset) / scale. The center itself
    is always row 0, so it maps to the origin.
    """

    center_index: int
    points: np.ndarray
    scale: float
    centroid_offset: np.ndarray
    source_indices: np.ndarray = None

    def denormalize(self):
        return self.points * self.scale + self.centroid_offset


@dataclass
class PatchBatch:
    """Stacked patches: points (B, m, 3), scales (B,), offsets (B, 3)."""

    center_indices: np.ndarray
    points: np.ndarray
    scales: np.ndarray
    offsets: np.ndarray

    def __len__(self):
        return len(self.center_indices)

    def __getitem__(self, sl):
        return PatchBatch(self.center_indices[sl], self.points[sl], self.scales[sl], self.offsets[sl])

    def patch(self, i):
        return Patch(int(self.center_indices[i]), self.points[i], float(self.scales[i]), self.offsets[i])

    @classmethod
    def stack(cls, patches):
        return cls(
            np.array([p.center_index for p in patches], dtype=np.int64),
            np.stack([p.points for p in patches]),
            np.array([p.scale for p in patches]),
            np.stack([p.centroid_offset for p in patches]),
        )


def default_patch_radius(cloud, fraction=0.05):
    return fraction * bounding_box(cloud).diagonal


def _select_patch_rows(pts, index, center, ball, radius, m, seed, k_min):
    c = pts[center]
    others = ball[ball != center]
    scale = radius
    if k_min is not None and len(others) < k_min:
        # isolated point: fall back to its k_min nearest neighbors cloud-wide
        if len(pts) <= k_min:
            raise ValueError(f"cloud has {len(pts)} points; need more than k={k_min}")
        near, d2 = index.knn(c, k_min + 1)
        keep = near != center
        others = near[keep][:k_min]
        scale = max(radius, float(np.sqrt(d2[keep][:k_min].max())))
    if len(others) > m - 1:
        rng = np.random.default_rng([seed, center])
        others = np.sort(rng.choice(others, m - 1, replace=False))
    rows = np.full(m, center, dtype=np.int64)
    rows[1:1 + len(others)] = others
    return rows, scale


def extract_patch(cloud, center_index, radius, m, rng_seed=0, index=None, k_min=None):
    """Ball-of-``radius`` patch around one point, resized to exactly ``m`` rows.

    Larger balls are subsampled uniformly without replacement (seeded by
    ``rng_seed`` and the center index); smaller ones are padded by repeating
    the center. With ``k_min`` set, a ball holding fewer than ``k_min`` other
    points is replaced by the ``k_min`` nearest points and the scale grows to
    keep every normalized point inside the unit ball.
    """
    cloud.require_nonempty()
    if radius <= 0:
        raise ValueError("radius must be positive")
    if m < 1:
        raise ValueError("patch size m must be >= 1")
    n = len(cloud)
    if not 0 <= center_index < n:
        raise IndexError(f"center index {center_index} out of range for {n} points")
    if index is None:
        index = SpatialIndex(cloud.points)
    pts = cloud.points
    ball = index.radius(pts[center_index], radius)
    rows, scale = _select_patch_rows(pts, index, center_index, ball, radius, m, rng_seed, k_min)
    c = pts[center_index]
    return Patch(int(center_index), (pts[rows] - c) / scale, float(scale), c.copy(), rows)


def extract_patches(cloud, centers, radius, m, rng_seed=0, index=None, k_min=None):
    """Vectorized :func:`extract_patch` over many centers -> :class:`PatchBatch`."""
    cloud.require_nonempty()
    if radius <= 0:
        raise ValueError("radius must be positive")
    centers = np.asarray(centers, dtype=np.int64).reshape(-1)
    n = len(cloud)
    if len(centers) and (centers.min() < 0 or centers.max() >= n):
        raise IndexError("center index out of range")
    if index is None:
        index = SpatialIndex(cloud.points)
    pts = cloud.points
    balls = index._tree.query_ball_point(pts[centers], radius * (1 + _SLACK) + 1e-300)
    out = np.empty((len(centers), m, 3))
    scales = np.empty(len(centers))
    for row, (center, cand) in enumerate(zip(centers, balls)):
        cand = np.asarray(cand, dtype=np.int64)
        cand.sort()
        ball = cand[sq_dists(pts[cand], pts[center]) <= radius * radius]
        rows, scale = _select_patch_rows(pts, index, center, ball, radius, m, rng_seed, k_min)
        out[row] = (pts[rows] - pts[center]) / scale
        scales[row] = scale
    return PatchBatch(centers, out, scales, pts[centers].copy())
