import math

import numpy as np
import pytest

from pcclean.bench import BenchReport, bench_per_point, compare_variants, machine_info, time_call
from pcclean.geometry import PointCloud
from pcclean.network import Model, ModelConfig

SMALL = ModelConfig.desk(k=8, patch_points=24)


@pytest.fixture(scope="module")
def cloud():
    return PointCloud(np.random.default_rng(0).normal(size=(200, 3)))


def test_report_sane(cloud):
    r = bench_per_point(Model.create("detector", SMALL), "ours2", cloud, repetitions=3, max_points=40)
    assert r.variant == "ours2" and r.stage == "detector" and r.points == 40
    assert len(r.timings) == 3 and all(t > 0 and math.isfinite(t) for t in r.timings)
    assert r.seconds_per_point == pytest.approx(r.wall_time / 40)
    assert "single process" in r.as_dict()["context"]


def test_repetitions_minimum(cloud):
    with pytest.raises(ValueError):
        bench_per_point(Model.create("detector", SMALL), "ours1", cloud, repetitions=2)
    with pytest.raises(ValueError):
        BenchReport("ours1", "detector", 0, 0.0, 0.0, 3, "python")


def test_compare_variants_keys(cloud):
    res = compare_variants(Model.create("denoiser", SMALL), cloud, repetitions=3, max_points=30, rounds=2)
    assert set(res) == {"ours1", "ours2"}
    assert all(r.repetitions == 6 for r in res.values())


def test_per_point_cost_stable(cloud):
    # doubling the work keeps seconds-per-point in the same ballpark
    m = Model.create("detector", SMALL)
    big = PointCloud(np.random.default_rng(1).normal(size=(400, 3)))
    a = bench_per_point(m, "ours1", big, repetitions=3, max_points=64).seconds_per_point
    b = bench_per_point(m, "ours1", big, repetitions=3, max_points=128).seconds_per_point
    assert 0.33 < b / a < 3.0


def test_time_call_and_info():
    calls = []
    ts = time_call(lambda: calls.append(1), 3, warmup=2)
    assert len(ts) == 3 and len(calls) == 5
    assert {"python", "numpy", "kernel_backend"} <= set(machine_info())
