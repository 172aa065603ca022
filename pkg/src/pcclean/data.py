"""Synthetic shapes, contamination with noise and outliers, dataset manifests."""
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .geometry import PointCloud, SpatialIndex, bounding_box

SHAPES = ("icosahedron", "sphere", "cube", "torus")
TORUS_MAJOR, TORUS_MINOR = 1.0, 0.4
MAX_OUTLIER_TRIES = 1000


class ContaminationError(RuntimeError):
    pass


# --- analytic surfaces -------------------------------------------------------

def closest_point_on_triangles(p, a, b, c):
    """Closest points on triangles (a, b, c) to points p; all (..., 3), broadcast.

    Region tests follow Ericson, Real-Time Collision Detection, 5.1.5.
    """
    ab, ac, ap = b - a, c - a, p - a
    d1 = (ab * ap).sum(-1)
    d2 = (ac * ap).sum(-1)
    bp = p - b
    d3 = (ab * bp).sum(-1)
    d4 = (ac * bp).sum(-1)
    cp = p - c
    d5 = (ab * cp).sum(-1)
    d6 = (ac * cp).sum(-1)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    with np.errstate(divide="ignore", invalid="ignore"):
        denom = 1.0 / (va + vb + vc)
        v_in = vb * denom
        w_in = vc * denom
        out = a + ab * v_in[..., None] + ac * w_in[..., None]

        # edge bc
        w_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        on_bc = (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0)
        out = np.where(on_bc[..., None], b + (c - b) * w_bc[..., None], out)
        # edge ac
        w_ac = d2 / (d2 - d6)
        on_ac = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
        out = np.where(on_ac[..., None], a + ac * w_ac[..., None], out)
        out = np.where(((d6 >= 0) & (d5 <= d6))[..., None], c, out)
        # edge ab
        v_ab = d1 / (d1 - d3)
        on_ab = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
        out = np.where(on_ab[..., None], a + ab * v_ab[..., None], out)
    # applied in reverse of Ericson's early-return order, so a wins, then b
    out = np.where(((d3 >= 0) & (d4 <= d3))[..., None], b, out)
    out = np.where(((d1 <= 0) & (d2 <= 0))[..., None], a, out)
    return out


class Shape:
    name = None

    def sample(self, n, rng):
        raise NotImplementedError

    def distance(self, points):
        """Unsigned distance from each point to the surface."""
        raise NotImplementedError


class Polyhedron(Shape):
    def __init__(self, name, vertices, faces):
        self.name = name
        self.vertices = np.asarray(vertices, dtype=np.float64)
        self.faces = np.asarray(faces, dtype=np.int64)
        tri = self.vertices[self.faces]
        self.areas = 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)

    def sample(self, n, rng):
        face = rng.choice(len(self.faces), size=n, p=self.areas / self.areas.sum())
        r1, r2 = rng.random(n), rng.random(n)
        s = np.sqrt(r1)
        tri = self.vertices[self.faces[face]]
        pts = (1 - s)[:, None] * tri[:, 0] + (s * (1 - r2))[:, None] * tri[:, 1] \
            + (s * r2)[:, None] * tri[:, 2]
        return pts, face

    def distance(self, points, chunk=4096):
        points = np.atleast_2d(points)
        tri = self.vertices[self.faces]
        out = np.empty(len(points))
        for start in range(0, len(points), chunk):
            p = points[start:start + chunk, None, :]
            q = closest_point_on_triangles(p, tri[None, :, 0], tri[None, :, 1], tri[None, :, 2])
            out[start:start + chunk] = np.sqrt(((p - q) ** 2).sum(-1)).min(axis=1)
        return out


def icosahedron():
    """Regular icosahedron with circumradius 1."""
    phi = (1 + np.sqrt(5)) / 2
    v = []
    for a in (-1, 1):
        for b in (-phi, phi):
            v += [(0, a, b), (a, b, 0), (b, 0, a)]
    v = np.array(v, dtype=np.float64) / np.sqrt(1 + phi * phi)
    d = np.linalg.norm(v[:, None] - v[None], axis=-1)
    edge = d[d > 0].min()
    adj = np.isclose(d, edge)
    faces = []
    for i in range(12):
        for j in range(i + 1, 12):
            for k in range(j + 1, 12):
                if adj[i, j] and adj[j, k] and adj[i, k]:
                    tri = [i, j, k]
                    # orient outward
                    if np.dot(np.cross(v[j] - v[i], v[k] - v[i]), v[i]) < 0:
                        tri = [i, k, j]
                    faces.append(tri)
    return Polyhedron("icosahedron", v, faces)


def cube():
    """Axis-aligned cube with side 2 centered at the origin, 12 triangles."""
    v = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], dtype=np.float64)
    quads = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    faces = []
    for a, b, c, d in quads:
        faces += [(a, b, c), (a, c, d)]
    return Polyhedron("cube", v, faces)


class Sphere(Shape):
    name = "sphere"

    def __init__(self, radius=1.0):
        self.radius = radius

    def sample(self, n, rng):
        v = rng.normal(size=(n, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        return self.radius * v, None

    def distance(self, points):
        return np.abs(np.linalg.norm(np.atleast_2d(points), axis=1) - self.radius)


class Torus(Shape):
    """Torus around the z axis; area element is proportional to R + r cos(v)."""

    name = "torus"

    def __init__(self, major=TORUS_MAJOR, minor=TORUS_MINOR):
        self.major, self.minor = major, minor

    def sample(self, n, rng):
        out = np.empty((0, 2))
        while len(out) < n:
            u = rng.uniform(0, 2 * np.pi, size=2 * n)
            v = rng.uniform(0, 2 * np.pi, size=2 * n)
            keep = rng.random(2 * n) * (self.major + self.minor) <= self.major + self.minor * np.cos(v)
            out = np.concatenate([out, np.stack([u[keep], v[keep]], axis=1)])
        u, v = out[:n, 0], out[:n, 1]
        rho = self.major + self.minor * np.cos(v)
        return np.stack([rho * np.cos(u), rho * np.sin(u), self.minor * np.sin(v)], axis=1), None

    def distance(self, points):
        p = np.atleast_2d(points)
        rho = np.hypot(p[:, 0], p[:, 1])
        return np.abs(np.hypot(rho - self.major, p[:, 2]) - self.minor)


def make_shape(kind):
    if kind == "icosahedron":
        return icosahedron()
    if kind == "cube":
        return cube()
    if kind == "sphere":
        return Sphere()
    if kind == "torus":
        return Torus()
    raise ValueError(f"unknown shape {kind!r}; choose from {', '.join(SHAPES)}")


def generate_shape(kind, n_points, seed=0):
    """``n_points`` samples uniform by area on a unit-scale analytic shape."""
    shape = make_shape(kind)
    if n_points < 1:
        raise ValueError("n_points must be >= 1")
    pts, _ = shape.sample(n_points, np.random.default_rng(seed))
    return PointCloud(pts)


# --- contamination -------------------------------------------------------------

@dataclass(frozen=True)
class ContaminationSpec:
    """Noise and outlier recipe; lengths are fractions of the bounding-box diagonal.

    noise_level is the Gaussian standard deviation; 0.20 gives the heavy
    20%-of-diagonal setting, the icosahedron demo uses 0.02. With
    ``min_distance_unit="sigma"`` outlier_min_distance is read as a multiple
    of that standard deviation instead.
    """

    noise_level: float = 0.01
    outlier_fraction: float = 0.0
    outlier_min_distance: float = 0.015
    seed: int = 0
    min_distance_unit: str = "diagonal"

    def __post_init__(self):
        if self.noise_level < 0:
            raise ValueError("noise_level must be >= 0")
        if not 0 <= self.outlier_fraction <= 1:
            raise ValueError("outlier_fraction must be in [0, 1]")
        if not 0 <= self.outlier_min_distance <= 1 and self.min_distance_unit == "diagonal":
            raise ValueError("outlier_min_distance must be in [0, 1]")
        if self.min_distance_unit not in ("diagonal", "sigma"):
            raise ValueError("min_distance_unit must be 'diagonal' or 'sigma'")


@dataclass
class PairedCloud:
    """Clean cloud plus its contaminated copy.

    ``correspondence[i]`` is the clean point that contaminated point i was
    derived from (outliers keep the index of the point they replaced).
    """

    clean: PointCloud
    contaminated: PointCloud
    correspondence: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        n = len(self.contaminated)
        if len(self.correspondence) != n or len(self.labels) != n:
            raise ValueError("correspondence and labels must match the contaminated cloud")
        if len(self.correspondence) and (self.correspondence.min() < 0
                                         or self.correspondence.max() >= len(self.clean)):
            raise ValueError("correspondence index out of range")


def contaminate(clean, spec, surface=None):
    """Add Gaussian noise to every point, then turn a fraction into outliers.

    Outliers are drawn uniformly from the bounding box enlarged 1.5x about its
    center and resampled until farther than the minimum distance from the
    surface. ``surface`` is a :class:`Shape` giving exact distances; without
    one the clean samples stand in for the surface.
    """
    clean.require_nonempty("clean cloud")
    rng = np.random.default_rng(spec.seed)
    pts = clean.points
    n = len(pts)
    box = bounding_box(clean)
    diag = box.diagonal
    sigma = spec.noise_level * diag
    noisy = pts + rng.normal(0.0, sigma, size=pts.shape) if sigma > 0 else pts.copy()

    n_out = int(round(spec.outlier_fraction * n))
    labels = np.zeros(n, dtype=np.int8)
    if n_out:
        chosen = np.sort(rng.choice(n, n_out, replace=False))
        labels[chosen] = 1
        unit = diag if spec.min_distance_unit == "diagonal" else sigma
        min_dist = spec.outlier_min_distance * unit
        if surface is None:
            index = SpatialIndex(pts)

            def dist(q):
                return np.sqrt(index.nearest_sq_dist(q))
        else:
            dist = surface.distance
        lo = box.center - 0.75 * box.extent
        hi = box.center + 0.75 * box.extent
        todo = chosen
        for _ in range(MAX_OUTLIER_TRIES):
            cand = rng.uniform(lo, hi, size=(len(todo), 3))
            ok = dist(cand) > min_dist
            noisy[todo[ok]] = cand[ok]
            todo = todo[~ok]
            if not len(todo):
                break
        else:
            raise ContaminationError(
                f"could not place {len(todo)} outliers farther than {min_dist:.4g} from the surface; "
                "outlier_min_distance is too large for the bounding box")
    contaminated = PointCloud(noisy, labels)
    return PairedCloud(PointCloud(pts.copy()), contaminated, np.arange(n, dtype=np.int64), labels)


# --- manifests -----------------------------------------------------------------

@dataclass
class ManifestEntry:
    clean: str
    contaminated: str
    spec: ContaminationSpec
    shape: str = None


def write_manifest(path, entries):
    payload = {"version": 1, "entries": [
        {"clean": e.clean, "contaminated": e.contaminated, "shape": e.shape, **asdict(e.spec)}
        for e in entries]}
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def read_manifest(path):
    """Entries with paths resolved relative to the manifest's directory."""
    path = Path(path)
    try:
        payload = json.loads(path.read_text())
        raw = payload["entries"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ValueError(f"{path}: malformed manifest ({exc})") from exc
    base = path.parent
    entries = []
    spec_fields = ("noise_level", "outlier_fraction", "outlier_min_distance", "seed", "min_distance_unit")
    for i, e in enumerate(raw):
        try:
            spec = ContaminationSpec(**{k: e[k] for k in spec_fields if k in e})
            entries.append(ManifestEntry(str(base / e["clean"]), str(base / e["contaminated"]),
                                         spec, e.get("shape")))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"{path}: bad manifest entry {i} ({exc})") from exc
    return entries
