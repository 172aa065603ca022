"""Chamfer distance and precision-recall metrics."""
from dataclasses import dataclass

import numpy as np

from .geometry import EmptyCloudError, PointCloud, SpatialIndex, sq_dists


def _points(cloud):
    return cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)


def nearest_sq_dists(src, dst):
    """For each point of ``src``, squared distance to its nearest point of ``dst``."""
    return SpatialIndex(dst).nearest_sq_dist(src)


def chamfer_distance(a, b):
    """mean_a min_b |a - b|^2 + mean_b min_a |b - a|^2."""
    pa, pb = _points(a), _points(b)
    if len(pa) == 0 or len(pb) == 0:
        raise EmptyCloudError("chamfer distance needs two non-empty clouds")
    return float(nearest_sq_dists(pa, pb).mean() + nearest_sq_dists(pb, pa).mean())


@dataclass
class PRCurve:
    """Operating points from the highest score threshold down.

    Entry i predicts positive every point scoring at least ``thresholds[i]``
    (equivalently: strictly above any value between the next lower score and
    this one). Recall is non-decreasing along the arrays.
    """

    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray

    def average_precision(self):
        steps = np.diff(np.concatenate([[0.0], self.recall]))
        return float((steps * self.precision).sum())

    def to_csv(self):
        rows = ["threshold,recall,precision"]
        rows += [f"{t!r},{r!r},{p!r}" for t, r, p in
                 zip(self.thresholds.tolist(), self.recall.tolist(), self.precision.tolist())]
        return "\n".join(rows) + "\n"


def pr_curve(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1).astype(bool)
    if len(scores) != len(labels):
        raise ValueError(f"{len(scores)} scores for {len(labels)} labels")
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise ValueError("precision-recall needs at least one positive label")
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    tp = np.cumsum(y)
    # last index of each run of equal scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp = tp[ends]
    predicted = ends + 1
    return PRCurve(s[ends], tp / predicted, tp / n_pos)


def aupr(scores, labels):
    """Step-wise average precision: sum over thresholds of (R_i - R_{i-1}) * P_i."""
    return pr_curve(scores, labels).average_precision()


def format_report(values):
    """``key = value`` lines, keys in insertion order."""
    return "".join(f"{k} = {v!r}\n" if isinstance(v, float) else f"{k} = {v}\n" for k, v in values.items())


__all__ = ["chamfer_distance", "nearest_sq_dists", "PRCurve", "pr_curve", "aupr", "format_report",
           "sq_dists"]
