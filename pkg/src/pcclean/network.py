"""Patch networks: quaternion spatial transform, graph convolution, residual head.

Both models share one trunk::

    patch (B, m, 3)
      -> QSTN: per-point MLP, max pool, MLP -> quaternion -> R; points @ R^T
      -> graph conv layer: four edge-conv "local feature networks"
      -> concat, shared linear + relu, global max pool
      -> linear, residual block, linear, residual block, linear

The detector squashes the scalar output with a sigmoid; the denoiser maps a
3-vector through tanh, rotates it back with R and scales it by the patch
radius.
"""
import enum
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import autodiff as ad
from . import checkpoint
from .geometry import Patch, PatchBatch
from .graph import NeighborGraph, knn_graph

INIT_SCHEMES = ("he", "uniform", "mixed")
UNIFORM_BOUND = 1e-3


class GraphConvVariant(str, enum.Enum):
    DYNAMIC = "dynamic"  # Ours1: graph rebuilt in feature space per stage
    FIXED_LOW_DIM = "fixed"  # Ours2: coordinate graph reused by every stage

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        aliases = {"ours1": cls.DYNAMIC, "dynamic": cls.DYNAMIC,
                   "ours2": cls.FIXED_LOW_DIM, "fixed": cls.FIXED_LOW_DIM,
                   "fixedlowdim": cls.FIXED_LOW_DIM}
        try:
            return aliases[str(value).lower().replace("_", "").replace("-", "")]
        except KeyError:
            raise ValueError(f"unknown graph-conv variant {value!r}") from None

    @property
    def tag(self):
        return "ours1" if self is GraphConvVariant.DYNAMIC else "ours2"


@dataclass(frozen=True)
class ModelConfig:
    k: int = 16
    variant: GraphConvVariant = GraphConvVariant.DYNAMIC
    local_widths: tuple = (64, 64, 128, 256)
    global_width: int = 1024
    head_widths: tuple = (512, 256)
    qstn_widths: tuple = (64, 128, 256)
    out_dim: int = 1
    patch_points: int = 500
    patch_radius: float = 0.05  # fraction of the cloud's bounding-box diagonal

    def __post_init__(self):
        object.__setattr__(self, "variant", GraphConvVariant.parse(self.variant))
        for name in ("local_widths", "head_widths", "qstn_widths"):
            object.__setattr__(self, name, tuple(int(w) for w in getattr(self, name)))
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if len(self.local_widths) != 4:
            raise ValueError("the graph conv layer has exactly four local feature networks")
        if len(self.head_widths) != 2 or len(self.qstn_widths) != 3:
            raise ValueError("head_widths needs 2 entries and qstn_widths 3")
        widths = (*self.local_widths, *self.head_widths, *self.qstn_widths,
                  self.global_width, self.out_dim, self.patch_points)
        if min(widths) < 1:
            raise ValueError("all widths must be >= 1")
        if self.patch_points <= self.k:
            raise ValueError("patch_points must exceed k")
        if self.patch_radius <= 0:
            raise ValueError("patch_radius must be positive")

    @classmethod
    def desk(cls, **overrides):
        """Small widths that train in minutes on one CPU core."""
        base = dict(local_widths=(32, 32, 64, 64), global_width=128, head_widths=(64, 32),
                    qstn_widths=(32, 64, 64), patch_points=64)
        base.update(overrides)
        return cls(**base)

    def with_(self, **changes):
        return replace(self, **changes)

    def to_dict(self):
        d = asdict(self)
        d["variant"] = self.variant.value
        for key in ("local_widths", "head_widths", "qstn_widths"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


# --- parameters ------------------------------------------------------------

def param_shapes(cfg):
    """Ordered (name, shape) list for a config."""
    q0, q1, q2 = cfg.qstn_widths
    shapes = [
        ("qstn.0.w", (3, q0)), ("qstn.0.b", (q0,)),
        ("qstn.1.w", (q0, q1)), ("qstn.1.b", (q1,)),
        ("qstn.2.w", (q1, q2)), ("qstn.2.b", (q2,)),
        ("qstn.out.w", (q2, 4)), ("qstn.out.b", (4,)),
    ]
    cin = 3
    for i, cout in enumerate(cfg.local_widths):
        shapes += [(f"conv.{i}.w", (2 * cin, cout)), (f"conv.{i}.b", (cout,))]
        cin = cout
    shapes += [("global.w", (sum(cfg.local_widths), cfg.global_width)), ("global.b", (cfg.global_width,))]
    cin = cfg.global_width
    for i, h in enumerate(cfg.head_widths):
        shapes += [(f"head.{i}.w", (cin, h)), (f"head.{i}.b", (h,)),
                   (f"res.{i}.w1", (h, h)), (f"res.{i}.b1", (h,)),
                   (f"res.{i}.w2", (h, h)), (f"res.{i}.b2", (h,))]
        cin = h
    shapes += [("out.w", (cin, cfg.out_dim)), ("out.b", (cfg.out_dim,))]
    return shapes


def init_params(cfg, seed=0, scheme="he"):
    """Fresh parameters.

    ``he``: He-normal weights, zero biases. ``uniform``: weights uniform in
    (-1e-3, 1e-3). ``mixed``: He everywhere except a uniform output layer, so
    a new denoiser starts close to the identity. In every scheme the QSTN
    output layer has zero weights and bias (1, 0, 0, 0), so R = I at start.
    """
    if scheme not in INIT_SCHEMES:
        raise ValueError(f"unknown init scheme {scheme!r}")
    seeds = np.random.default_rng(seed).integers(0, 2**63 - 1, size=len(param_shapes(cfg)))
    params = {}
    for (name, shape), s in zip(param_shapes(cfg), seeds):
        if name == "qstn.out.w":
            t = ad.Tensor(np.zeros(shape), requires_grad=True)
        elif name == "qstn.out.b":
            t = ad.Tensor(np.array([1.0, 0.0, 0.0, 0.0]), requires_grad=True)
        elif len(shape) == 1:
            t = ad.Tensor(np.zeros(shape), requires_grad=True)
        elif scheme == "uniform" or (scheme == "mixed" and name == "out.w"):
            t = ad.init_uniform(shape, -UNIFORM_BOUND, UNIFORM_BOUND, s)
        else:
            t = ad.init_he(shape, s)
        t.name = name
        params[name] = t
    return params


# --- building blocks ---------------------------------------------------------

def quaternion_to_rotation(q):
    """Rotation matrix of the (normalized) quaternion q = (w, x, y, z)."""
    q = np.asarray(q, dtype=np.float64)
    if np.linalg.norm(q) == 0:
        raise ValueError("zero quaternion has no rotation")
    with ad.no_grad():
        return ad.quat_to_rot(q).values


def qstn_forward(points, params):
    """Predict a rotation per patch and apply it: returns (points @ R^T, R)."""
    x = ad.as_tensor(points)
    h = ad.relu(ad.linear(x, params["qstn.0.w"], params["qstn.0.b"]))
    h = ad.relu(ad.linear(h, params["qstn.1.w"], params["qstn.1.b"]))
    g = ad.max_over_nodes(h)
    g = ad.relu(ad.linear(g, params["qstn.2.w"], params["qstn.2.b"]))
    rot = ad.quat_to_rot(ad.linear(g, params["qstn.out.w"], params["qstn.out.b"]))
    return ad.matmul(x, ad.transpose(rot)), rot


def local_feature_network(x, graph, w, b):
    """One edge-conv stage: max over j of relu([x_i, x_j - x_i] . w + b).

    Computed as relu(x_i . (w_a - w_b) + b + max_j x_j . w_b), which is the same
    function without building the (n, k, 2C) edge tensor.
    """
    c = x.shape[-1]
    if w.shape[0] != 2 * c:
        raise ValueError(f"edge weight {w.shape} does not fit {c} input channels")
    wa, wb = w[:c], w[c:]
    own = ad.linear(x, wa - wb, b)
    nbr = ad.matmul(x, wb)
    return ad.relu(own + ad.neighbor_max(nbr, graph.neighbors))


def local_feature_network_reference(x, graph, w, b):
    """Unfused edge conv: explicit edge tensor, linear, relu, neighbor max."""
    x = ad.as_tensor(x)
    nbr = graph.neighbors
    if x.ndim == 2:
        xj = x[nbr]
        xi = ad.reshape(x, (x.shape[0], 1, x.shape[1]))
    else:
        xj = x[np.arange(x.shape[0])[:, None, None], nbr]
        xi = ad.reshape(x, (x.shape[0], x.shape[1], 1, x.shape[2]))
    xi_full = xi + np.zeros(xj.shape)
    edges = ad.concat([xi_full, xj - xi_full], axis=-1)
    return ad.max_over_neighbors(ad.relu(ad.linear(edges, w, b)))


def graph_conv_layer(x, cfg, params, coords=None):
    """Run the four local feature networks in sequence.

    Returns (per-stage outputs, graphs used). DYNAMIC rebuilds the kNN graph
    on the current features before every stage; FIXED_LOW_DIM builds it once
    on ``coords`` (default: the input features) and reuses it.
    """
    x = ad.as_tensor(x)
    n = x.shape[-2]
    if n <= cfg.k:
        raise ValueError(f"patch has {n} points; graph conv needs more than k={cfg.k}")
    base = x.values if coords is None else np.asarray(coords, dtype=np.float64)
    outputs, graphs = [], []
    graph = knn_graph(base, cfg.k)
    h = x
    for i in range(4):
        if i > 0 and cfg.variant is GraphConvVariant.DYNAMIC:
            graph = knn_graph(h.values, cfg.k)
        h = local_feature_network(h, graph, params[f"conv.{i}.w"], params[f"conv.{i}.b"])
        outputs.append(h)
        graphs.append(graph)
    return outputs, graphs


def residual_block(x, w1, b1, w2, b2):
    """y = x + W2 relu(W1 x + b1) + b2."""
    x = ad.as_tensor(x)
    if w1.shape[0] != x.shape[-1] or w2.shape[1] != x.shape[-1]:
        raise ValueError(f"residual block {w1.shape}->{w2.shape} does not preserve width {x.shape[-1]}")
    return x + ad.linear(ad.relu(ad.linear(x, w1, b1)), w2, b2)


def _as_batch(patches):
    if isinstance(patches, tuple):
        points, scales = patches
        return np.asarray(points, dtype=np.float64), np.asarray(scales, dtype=np.float64)
    if isinstance(patches, Patch):
        return patches.points[None], np.array([patches.scale])
    if isinstance(patches, PatchBatch):
        return patches.points, patches.scales
    pts = np.asarray(patches, dtype=np.float64)
    if pts.ndim == 2:
        pts = pts[None]
    return pts, np.ones(len(pts))


def trunk_forward(points, cfg, params):
    """Shared trunk -> (head output (B, out_dim), R (B, 3, 3))."""
    rotated, rot = qstn_forward(points, params)
    outputs, _ = graph_conv_layer(rotated, cfg, params)
    f = ad.relu(ad.linear(ad.concat(outputs, axis=-1), params["global.w"], params["global.b"]))
    h = ad.max_over_nodes(f)
    for i in range(len(cfg.head_widths)):
        h = ad.relu(ad.linear(h, params[f"head.{i}.w"], params[f"head.{i}.b"]))
        h = residual_block(h, params[f"res.{i}.w1"], params[f"res.{i}.b1"],
                           params[f"res.{i}.w2"], params[f"res.{i}.b2"])
    return ad.linear(h, params["out.w"], params["out.b"]), rot


def detector_forward(patches, cfg, params):
    """Outlier probability of each patch's center point, shape (B,)."""
    points, _ = _as_batch(patches)
    out, _ = trunk_forward(points, cfg, params)
    return ad.reshape(ad.sigmoid(out), (len(points),))


def denoiser_forward(patches, cfg, params):
    """World-frame displacement of each patch's center point, shape (B, 3).

    The 3-vector head is bounded by tanh / sqrt(3) (norm <= 1 in patch units),
    rotated back by R and multiplied by the patch scale.
    """
    points, scales = _as_batch(patches)
    out, rot = trunk_forward(points, cfg, params)
    local = ad.tanh(out) * (1.0 / np.sqrt(3.0))
    b = len(points)
    world = ad.reshape(ad.matmul(ad.reshape(local, (b, 1, 3)), rot), (b, 3))
    return world * scales[:, None]


# --- model container ---------------------------------------------------------

@dataclass
class Model:
    kind: str
    config: ModelConfig
    params: dict

    def __post_init__(self):
        if self.kind not in checkpoint.KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        expected = 1 if self.kind == "detector" else 3
        if self.config.out_dim != expected:
            raise ValueError(f"{self.kind} needs out_dim={expected}")

    @classmethod
    def create(cls, kind, config, seed=0, scheme=None):
        if scheme is None:
            scheme = "he" if kind == "detector" else "uniform"
        config = config.with_(out_dim=1 if kind == "detector" else 3)
        return cls(kind, config, init_params(config, seed, scheme))

    def parameters(self):
        return list(self.params.values())

    def forward(self, patches):
        fn = detector_forward if self.kind == "detector" else denoiser_forward
        return fn(patches, self.config, self.params)

    def predict(self, patches, batch_size=256):
        """Chunked inference without recording a graph."""
        points, scales = _as_batch(patches)
        chunks = [np.zeros((0,) if self.kind == "detector" else (0, 3))]
        with ad.no_grad():
            for start in range(0, len(points), batch_size):
                sl = slice(start, start + batch_size)
                chunks.append(self.forward((points[sl], scales[sl])).values)
        return np.concatenate(chunks)

    def with_variant(self, variant):
        """Same parameters, different graph-conv variant."""
        return Model(self.kind, self.config.with_(variant=GraphConvVariant.parse(variant)), self.params)

    def copy(self):
        params = {n: ad.Tensor(t.values.copy(), requires_grad=True, name=n) for n, t in self.params.items()}
        return Model(self.kind, self.config, params)

    def to_checkpoint(self, meta=None):
        tensors = {n: t.values for n, t in self.params.items()}
        return checkpoint.Checkpoint(self.kind, tensors, self.config.to_dict(), dict(meta or {}))

    @classmethod
    def from_checkpoint(cls, ckpt):
        cfg = ModelConfig.from_dict(ckpt.config)
        expected = [name for name, _ in param_shapes(cfg)]
        if list(ckpt.tensors) != expected:
            raise checkpoint.CheckpointError("checkpoint tensors do not match its model config")
        params = {n: ad.Tensor(v, requires_grad=True, name=n) for n, v in ckpt.tensors.items()}
        for (name, shape) in param_shapes(cfg):
            if params[name].shape != tuple(shape):
                raise checkpoint.CheckpointError(f"tensor {name} has shape {params[name].shape}, want {shape}")
        return cls(ckpt.kind, cfg, params)

    def save(self, path, meta=None):
        checkpoint.save(path, self.to_checkpoint(meta))

    @classmethod
    def load(cls, path):
        return cls.from_checkpoint(checkpoint.load(path))


__all__ = [
    "GraphConvVariant", "ModelConfig", "Model", "NeighborGraph", "param_shapes", "init_params",
    "quaternion_to_rotation", "qstn_forward", "local_feature_network",
    "local_feature_network_reference", "graph_conv_layer", "residual_block", "trunk_forward",
    "detector_forward", "denoiser_forward",
]
