"""Minimal reverse-mode automatic differentiation over numpy arrays.

Every op returns a new :class:`Tensor`; when an input requires gradients the
output records its parents and a backward closure. :func:`backward` walks
that graph in reverse topological order. Leaf tensors accumulate ``.grad``
across calls; intermediate tensors get their gradient overwritten.
"""
import logging
from contextlib import contextmanager

import numpy as np
from scipy.special import expit

from . import kernels

log = logging.getLogger(__name__)

_grad_enabled = True

# below this norm a predicted quaternion is replaced by the identity
QUAT_EPS = 1e-8


@contextmanager
def no_grad():
    """Run forward passes without recording a graph (pure inference)."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("values", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, values, requires_grad=False, name=None):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.values.shape

    @property
    def ndim(self):
        return self.values.ndim

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None):
        return sum_(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(values, parents, backward_fn):
    out = Tensor(values)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss):
    """Populate ``.grad`` with d(loss)/d(tensor) for every tensor reachable from ``loss``."""
    if loss.values.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads = {id(loss): np.ones_like(loss.values)}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        node.grad = g
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


# --- elementwise and shape ops -------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.values + b.values, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def neg(a):
    return _node(-a.values, (a,), lambda g: (-g,))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.values, b.values
    return _node(av * bv, (a, b),
                 lambda g: (_unbroadcast(g * bv, a.shape), _unbroadcast(g * av, b.shape)))


def relu(x):
    x = as_tensor(x)
    mask = x.values > 0
    return _node(np.where(mask, x.values, 0.0), (x,), lambda g: (g * mask,))


def sigmoid(x):
    x = as_tensor(x)
    s = expit(x.values)
    return _node(s, (x,), lambda g: (g * s * (1.0 - s),))


def tanh(x):
    x = as_tensor(x)
    t = np.tanh(x.values)
    return _node(t, (x,), lambda g: (g * (1.0 - t * t),))


def abs_(x):
    x = as_tensor(x)
    sign = np.sign(x.values)
    return _node(np.abs(x.values), (x,), lambda g: (g * sign,))


def sum_(x, axis=None):
    x = as_tensor(x)
    shape = x.shape

    def bw(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _node(np.asarray(x.values.sum(axis=axis)), (x,), bw)


def mean(x, axis=None):
    x = as_tensor(x)
    count = x.values.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum_(x, axis), 1.0 / count)


def reshape(x, shape):
    x = as_tensor(x)
    old = x.shape
    return _node(x.values.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x):
    """Swap the last two axes."""
    x = as_tensor(x)
    return _node(np.swapaxes(x.values, -1, -2), (x,), lambda g: (np.swapaxes(g, -1, -2),))


def getitem(x, key):
    x = as_tensor(x)
    shape = x.shape

    def bw(g):
        gx = np.zeros(shape)
        np.add.at(gx, key, g)
        return (gx,)

    return _node(x.values[key], (x,), bw)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    return _node(np.concatenate([t.values for t in tensors], axis=axis), tuple(tensors),
                 lambda g: tuple(np.split(g, cuts, axis=axis)))


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    return _node(np.stack([t.values for t in tensors], axis=axis), tuple(tensors),
                 lambda g: tuple(np.moveaxis(g, axis, 0)))


# --- linear algebra ------------------------------------------------------

def matmul(a, b):
    """Batched matrix product; both operands need at least 2 dims."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands need at least 2 dims")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    av, bv = a.values, b.values

    def bw(g):
        ga = g @ np.swapaxes(bv, -1, -2)
        gb = np.swapaxes(av, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _node(av @ bv, (a, b), bw)


def linear(x, w, b):
    """y = x . w + b over the last axis of ``x`` (any leading dims)."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ValueError(f"linear: input {x.shape} incompatible with weight {w.shape}")
    if b.shape != (w.shape[1],):
        raise ValueError(f"linear: bias {b.shape} does not match weight {w.shape}")
    xv, wv = x.values, w.values
    cin, cout = wv.shape

    def bw(g):
        g2 = g.reshape(-1, cout)
        gx = g @ wv.T
        gw = xv.reshape(-1, cin).T @ g2
        return gx, gw, g2.sum(axis=0)

    return _node(xv @ wv + b.values, (x, w, b), bw)


# --- pooling -------------------------------------------------------------

def _max_over(x, axis):
    x = as_tensor(x)
    if x.shape[axis] == 0:
        raise ValueError("cannot pool over an empty axis")
    arg = np.expand_dims(np.argmax(x.values, axis=axis), axis)
    shape = x.shape

    def bw(g):
        gx = np.zeros(shape)
        np.put_along_axis(gx, arg, np.expand_dims(g, axis), axis=axis)
        return (gx,)

    return _node(np.take_along_axis(x.values, arg, axis=axis).squeeze(axis), (x,), bw)


def max_over_neighbors(e):
    """(..., n, k, C) -> (..., n, C); gradient goes to the first maximal entry."""
    return _max_over(e, -2)


def max_over_nodes(x):
    """(..., n, C) -> (..., C) global max pool."""
    return _max_over(x, -2)


def neighbor_max(v, neighbors):
    """out[b, i] = max over j in neighbors[b, i] of v[b, j] (elementwise).

    Equivalent to gathering v into an (n, k, C) tensor and applying
    :func:`max_over_neighbors`, without materializing the gather.
    """
    v = as_tensor(v)
    nbr = np.asarray(neighbors, dtype=np.int64)
    squeeze = v.ndim == 2
    vv = v.values[None] if squeeze else v.values
    nb = nbr[None] if nbr.ndim == 2 else nbr
    if nb.shape[:2] != vv.shape[:2]:
        raise ValueError(f"neighbor table {nbr.shape} does not match features {v.shape}")
    out, slot = kernels.neighbor_max(vv, nb)
    n_src = vv.shape[1]

    def bw(g):
        gv = kernels.neighbor_max_backward(g[None] if squeeze else g, nb, slot, n_src)
        return (gv[0] if squeeze else gv,)

    return _node(out[0] if squeeze else out, (v,), bw)


# --- rotations -----------------------------------------------------------

def _rotation_from_unit(u):
    w, x, y, z = u[..., 0], u[..., 1], u[..., 2], u[..., 3]
    r = np.empty(u.shape[:-1] + (3, 3))
    r[..., 0, 0] = 1 - 2 * (y * y + z * z)
    r[..., 0, 1] = 2 * (x * y - w * z)
    r[..., 0, 2] = 2 * (x * z + w * y)
    r[..., 1, 0] = 2 * (x * y + w * z)
    r[..., 1, 1] = 1 - 2 * (x * x + z * z)
    r[..., 1, 2] = 2 * (y * z - w * x)
    r[..., 2, 0] = 2 * (x * z - w * y)
    r[..., 2, 1] = 2 * (y * z + w * x)
    r[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return r


def quat_to_rot(q):
    """(..., 4) quaternions (w, x, y, z) -> (..., 3, 3) rotation matrices.

    Quaternions are normalized first. Any with norm below ``QUAT_EPS`` are
    replaced by the identity quaternion and receive zero gradient.
    """
    q = as_tensor(q)
    if q.shape[-1] != 4:
        raise ValueError(f"quaternions need a trailing axis of 4, got {q.shape}")
    qv = q.values
    norm = np.linalg.norm(qv, axis=-1, keepdims=True)
    degenerate = norm[..., 0] < QUAT_EPS
    if degenerate.any():
        log.warning("replacing %d near-zero quaternion(s) by the identity", int(degenerate.sum()))
        qv = qv.copy()
        qv[degenerate] = (1.0, 0.0, 0.0, 0.0)
        norm = np.where(degenerate[..., None], 1.0, norm)
    u = qv / norm
    w, x, y, z = u[..., 0], u[..., 1], u[..., 2], u[..., 3]

    def bw(g):
        g = g.reshape(u.shape[:-1] + (3, 3))
        g00, g01, g02 = g[..., 0, 0], g[..., 0, 1], g[..., 0, 2]
        g10, g11, g12 = g[..., 1, 0], g[..., 1, 1], g[..., 1, 2]
        g20, g21, g22 = g[..., 2, 0], g[..., 2, 1], g[..., 2, 2]
        gu = np.empty_like(u)
        gu[..., 0] = 2 * (-z * g01 + y * g02 + z * g10 - x * g12 - y * g20 + x * g21)
        gu[..., 1] = 2 * (y * g01 + z * g02 + y * g10 - w * g12 + z * g20 + w * g21) \
            - 4 * x * (g11 + g22)
        gu[..., 2] = 2 * (x * g01 + w * g02 + x * g10 + z * g12 - w * g20 + z * g21) \
            - 4 * y * (g00 + g22)
        gu[..., 3] = 2 * (-w * g01 + x * g02 + w * g10 + y * g12 + x * g20 + y * g21) \
            - 4 * z * (g00 + g11)
        gq = (gu - u * (u * gu).sum(axis=-1, keepdims=True)) / norm
        gq[degenerate] = 0.0
        return (gq,)

    return _node(_rotation_from_unit(u), (q,), bw)


# --- initializers ----------------------------------------------------------

def init_he(shape, rng_seed, name=None):
    """Zero-mean normal with variance 2 / fan_in (fan_in = shape[0])."""
    shape = tuple(shape)
    fan_in = shape[0] if shape else 1
    rng = np.random.default_rng(rng_seed)
    return Tensor(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape), requires_grad=True, name=name)


def init_uniform(shape, lo, hi, rng_seed, name=None):
    if not lo < hi:
        raise ValueError(f"need lo < hi, got ({lo}, {hi})")
    rng = np.random.default_rng(rng_seed)
    vals = rng.uniform(lo, hi, size=tuple(shape))
    # numpy draws from [lo, hi); keep the interval open at both ends
    vals[vals == lo] = 0.5 * (lo + hi)
    return Tensor(vals, requires_grad=True, name=name)
