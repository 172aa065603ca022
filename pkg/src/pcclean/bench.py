"""Per-point inference timing for comparing graph-conv variants."""
import platform
import statistics
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .detector import cloud_patches


@dataclass
class BenchReport:
    variant: str
    stage: str
    points: int
    wall_time: float  # median seconds per repetition
    seconds_per_point: float
    repetitions: int
    kernel_backend: str
    timings: list = field(default_factory=list)
    context: str = "single process, sequential patch batches"

    def __post_init__(self):
        if self.points <= 0:
            raise ValueError("benchmark needs at least one point")

    def as_dict(self):
        return asdict(self)


def time_call(fn, repetitions, warmup=1):
    """Wall-clock seconds for each of ``repetitions`` calls after ``warmup`` calls."""
    for _ in range(warmup):
        fn()
    out = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        fn()
        out.append(time.perf_counter() - t0)
    return out


def bench_per_point(model, variant, cloud, repetitions=5, max_points=None, batch_size=256, seed=0):
    """Median network inference time per point for one variant.

    Patches are extracted once up front (identical for every variant), so the
    timing covers the forward pass only. A warm-up pass runs first.
    """
    if repetitions < 3:
        raise ValueError("use at least 3 repetitions")
    n = len(cloud) if max_points is None else min(len(cloud), max_points)
    patches = cloud_patches(cloud, model.config, np.arange(n), seed=seed)
    m = model.with_variant(variant)
    timings = time_call(lambda: m.predict(patches, batch_size), repetitions)
    wall = statistics.median(timings)
    return BenchReport(m.config.variant.tag, model.kind, n, wall, wall / n, repetitions,
                       kernels.BACKEND, timings)


def compare_variants(model, cloud, repetitions=5, max_points=None, batch_size=256, seed=0, rounds=1):
    """Interleave both variants ``rounds`` times; returns {tag: BenchReport}.

    Each round times Dynamic then FixedLowDim; the reported median pools all
    rounds so slow drift in machine load hits both variants alike.
    """
    if repetitions < 3:
        raise ValueError("use at least 3 repetitions")
    n = len(cloud) if max_points is None else min(len(cloud), max_points)
    patches = cloud_patches(cloud, model.config, np.arange(n), seed=seed)
    pooled = {}
    for _ in range(rounds):
        for variant in ("dynamic", "fixed"):
            m = model.with_variant(variant)
            pooled.setdefault(m.config.variant.tag, []).extend(
                time_call(lambda: m.predict(patches, batch_size), repetitions))
    return {tag: BenchReport(tag, model.kind, n, statistics.median(t), statistics.median(t) / n,
                             len(t), kernels.BACKEND, t)
            for tag, t in pooled.items()}


def machine_info():
    return {"python": platform.python_version(), "machine": platform.machine(),
            "numpy": np.__version__, "kernel_backend": kernels.BACKEND}
