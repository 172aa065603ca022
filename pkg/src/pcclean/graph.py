"""kNN graphs in feature space and DGCNN-style edge features."""
from dataclasses import dataclass

import numpy as np

from . import kernels


@dataclass(frozen=True)
class NeighborGraph:
    """``neighbors[..., i, :]`` holds the k nearest other nodes of node i.

    A leading batch axis is allowed; graphs are never mutated after creation.
    """

    k: int
    neighbors: np.ndarray

    @property
    def n_nodes(self):
        return self.neighbors.shape[-2]


def knn_graph(features, k):
    """Exact kNN graph under Euclidean distance, no self-loops, ties to lower index.

    ``features`` is (n, C) or batched (B, n, C).
    """
    feats = np.asarray(features, dtype=np.float64)
    squeeze = feats.ndim == 2
    if feats.ndim == 1:
        feats, squeeze = feats[:, None], True
    if squeeze:
        feats = feats[None]
    n = feats.shape[1]
    if k < 1 or k >= n:
        raise ValueError(f"knn_graph needs 1 <= k < node count (k={k}, nodes={n})")
    idx = kernels.knn_indices(feats, k)
    idx.setflags(write=False)
    return NeighborGraph(k, idx[0] if squeeze else idx)


def edge_features(x, graph):
    """(n, C) features -> (n, k, 2C) tensor of (x_i, x_j - x_i) per edge."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    nbr = graph.neighbors
    if x.shape[:-1] != nbr.shape[:-1]:
        raise ValueError(f"graph over {nbr.shape[:-1]} nodes, features over {x.shape[:-1]}")
    if x.ndim == 2:
        xj = x[nbr]
    else:
        xj = x[np.arange(x.shape[0])[:, None, None], nbr]
    xi = np.broadcast_to(x[..., :, None, :], xj.shape)
    return np.concatenate([xi, xj - xi], axis=-1)
