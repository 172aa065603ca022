"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``.

Accumulation order matches the compiled loops, so both backends return
bit-identical arrays.
"""
import numpy as np

# cap on the (batch, n, n) distance block held in memory at once
_BLOCK_ELEMS = 1 << 22


def knn_indices(feats, k):
    feats = np.ascontiguousarray(feats, dtype=np.float64)
    nb, n, nc = feats.shape
    if k < 1 or k >= n:
        raise ValueError(f"k must satisfy 1 <= k < n (k={k}, n={n})")
    out = np.empty((nb, n, k), dtype=np.int64)
    step = max(1, _BLOCK_ELEMS // (n * n))
    diag = np.arange(n)
    for start in range(0, nb, step):
        block = feats[start:start + step]
        d = np.zeros((block.shape[0], n, n))
        for c in range(nc):
            col = block[:, :, c]
            t = col[:, :, None] - col[:, None, :]
            d += t * t
        d[:, diag, diag] = np.inf
        order = np.argsort(d, axis=-1, kind="stable")
        out[start:start + step] = order[:, :, :k]
    return out


def neighbor_max(v, idx):
    v = np.ascontiguousarray(v, dtype=np.float64)
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    if idx.shape[2] < 1:
        raise ValueError("neighbor axis is empty")
    batch = np.arange(v.shape[0])[:, None, None]
    gathered = v[batch, idx]  # (B, n, k, C)
    slot = np.argmax(gathered, axis=2)
    out = np.take_along_axis(gathered, slot[:, :, None, :], axis=2)[:, :, 0, :]
    return np.ascontiguousarray(out), np.ascontiguousarray(slot.astype(np.int64))


def neighbor_max_backward(grad, idx, slot, n_src):
    grad = np.ascontiguousarray(grad, dtype=np.float64)
    nb, n, nc = grad.shape
    src = np.take_along_axis(idx, slot, axis=2)  # (B, n, C) source row per entry
    b = np.broadcast_to(np.arange(nb)[:, None, None], src.shape)
    c = np.broadcast_to(np.arange(nc)[None, None, :], src.shape)
    gv = np.zeros((nb, n_src, nc))
    np.add.at(gv, (b.ravel(), src.ravel(), c.ravel()), grad.ravel())
    return gv
