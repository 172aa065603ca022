import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from pcclean.cloud_io import (CloudFormatError, format_ply, format_xyz, parse_ply, parse_xyz, read_cloud,
                              write_cloud)
from pcclean.geometry import EmptyCloudError, PointCloud


@pytest.mark.parametrize("ext", ["xyz", "ply"])
def test_round_trip_exact(tmp_path, rng, ext):
    cloud = PointCloud(rng.normal(size=(100, 3)) * 10 ** rng.uniform(-8, 8, size=(100, 1)))
    path = tmp_path / f"c.{ext}"
    write_cloud(cloud, path)
    assert read_cloud(path).points.tobytes() == cloud.points.tobytes()


def test_labels_round_trip(tmp_path, rng):
    cloud = PointCloud(rng.normal(size=(20, 3)), rng.integers(0, 2, 20))
    write_cloud(cloud, tmp_path / "c.ply")
    back = read_cloud(tmp_path / "c.ply")
    np.testing.assert_array_equal(back.labels, cloud.labels)
    assert "property uchar outlier" in (tmp_path / "c.ply").read_text()


def test_explicit_format(tmp_path, rng):
    cloud = PointCloud(rng.normal(size=(5, 3)))
    write_cloud(cloud, tmp_path / "c.txt", fmt="ply-ascii")
    assert read_cloud(tmp_path / "c.txt", fmt="ply").points.tobytes() == cloud.points.tobytes()
    with pytest.raises(ValueError):
        write_cloud(cloud, tmp_path / "c.obj", fmt="obj")


def test_two_fields_error_line():
    with pytest.raises(CloudFormatError, match=":1:"):
        parse_xyz("1.0 2.0\n")


def test_bad_number_line():
    with pytest.raises(CloudFormatError, match=":2:"):
        parse_xyz("1 2 3\n1 2 x\n")


def test_blank_and_comment_lines():
    c = parse_xyz("# header\n1 2 3\n\n4 5 6\n")
    assert c.points.tolist() == [[1, 2, 3], [4, 5, 6]]


def test_xyz_with_label_column():
    c = parse_xyz("1 2 3 1\n4 5 6 0\n")
    np.testing.assert_array_equal(c.points, [[1, 2, 3], [4, 5, 6]])


def test_ply_zero_vertices():
    text = "ply\nformat ascii 1.0\nelement vertex 0\nproperty double x\nproperty double y\nproperty double z\nend_header\n"
    c = parse_ply(text)
    assert len(c) == 0
    with pytest.raises(EmptyCloudError):
        c.require_nonempty()


@pytest.mark.parametrize("text, match", [
    ("plx\n", "magic"),
    ("ply\nformat binary_little_endian 1.0\n", "ASCII"),
    ("ply\nformat ascii 1.0\nelement vertex 1\nproperty double x\nend_header\n0\n", "properties"),
    ("ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\n"
     "end_header\n0 0 0\n", "declares 2"),
    ("ply\nformat ascii 1.0\nelement vertex 1\n", "end_header"),
])
def test_ply_errors(text, match):
    with pytest.raises(CloudFormatError, match=match):
        parse_ply(text)


def test_format_strings():
    cloud = PointCloud([[0.1, 2.0, -3.5]])
    assert format_xyz(cloud) == "0.1 2.0 -3.5\n"
    assert format_ply(cloud).endswith("end_header\n0.1 2.0 -3.5\n")


@given(arrays(np.float64, st.tuples(st.integers(0, 20), st.just(3)),
              elements=st.floats(allow_nan=False, allow_infinity=False)))
def test_text_round_trip_property(pts):
    cloud = PointCloud(pts)
    for fmt, parse in ((format_xyz, parse_xyz), (format_ply, parse_ply)):
        back = parse(fmt(cloud))
        assert back.points.tobytes() == cloud.points.reshape(-1, 3).tobytes()
