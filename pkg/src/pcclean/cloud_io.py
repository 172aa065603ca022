"""Read and write point clouds as ``xyz`` text or ASCII PLY.

Floats are written with ``repr`` (shortest round-trip form, at most 17
significant digits), so write-then-read is exact.
"""
from pathlib import Path

import numpy as np

from .geometry import PointCloud

FORMATS = ("xyz", "ply")


class CloudFormatError(ValueError):
    pass


def guess_format(path):
    suffix = Path(path).suffix.lower().lstrip(".")
    return "ply" if suffix == "ply" else "xyz"


def _fmt(v):
    return repr(float(v))


def format_xyz(cloud):
    lines = []
    labels = cloud.labels
    for i, p in enumerate(cloud.points):
        fields = [_fmt(p[0]), _fmt(p[1]), _fmt(p[2])]
        if labels is not None:
            fields.append(str(int(labels[i])))
        lines.append(" ".join(fields))
    return "\n".join(lines) + ("\n" if lines else "")


def format_ply(cloud):
    head = ["ply", "format ascii 1.0", f"element vertex {len(cloud)}",
            "property double x", "property double y", "property double z"]
    if cloud.labels is not None:
        head.append("property uchar outlier")
    head.append("end_header")
    return "\n".join(head) + "\n" + format_xyz(cloud)


def _parse_rows(lines, first_lineno, n_props, path):
    rows = []
    for offset, line in enumerate(lines):
        lineno = first_lineno + offset
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split()
        if len(parts) not in n_props:
            raise CloudFormatError(
                f"{path}:{lineno}: expected {' or '.join(map(str, n_props))} fields, got {len(parts)}")
        try:
            rows.append([float(v) for v in parts])
        except ValueError:
            raise CloudFormatError(f"{path}:{lineno}: non-numeric field in {line.strip()!r}") from None
    return rows


def _to_cloud(rows, path, with_labels):
    if not rows:
        return PointCloud(np.zeros((0, 3)))
    widths = {len(r) for r in rows}
    if len(widths) > 1:
        raise CloudFormatError(f"{path}: rows mix labelled and unlabelled points")
    arr = np.array(rows, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise CloudFormatError(f"{path}: non-finite coordinate")
    labels = None
    if arr.shape[1] == 4 or with_labels:
        labels = arr[:, 3]
        if not np.isin(labels, (0, 1)).all():
            raise CloudFormatError(f"{path}: outlier labels must be 0 or 1")
    return PointCloud(arr[:, :3], labels)


def parse_xyz(text, path="<xyz>"):
    rows = _parse_rows(text.splitlines(), 1, (3, 4), path)
    return _to_cloud(rows, path, with_labels=False)


def parse_ply(text, path="<ply>"):
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise CloudFormatError(f"{path}:1: missing 'ply' magic line")
    n_vertex, props, in_vertex = None, [], False
    for lineno, line in enumerate(lines[1:], start=2):
        words = line.split()
        if not words or words[0] == "comment":
            continue
        if words[0] == "format":
            if words[1:2] != ["ascii"]:
                raise CloudFormatError(f"{path}:{lineno}: only ASCII PLY is supported")
        elif words[0] == "element":
            if len(words) != 3:
                raise CloudFormatError(f"{path}:{lineno}: malformed element line")
            in_vertex = words[1] == "vertex"
            if in_vertex:
                try:
                    n_vertex = int(words[2])
                except ValueError:
                    raise CloudFormatError(f"{path}:{lineno}: bad vertex count {words[2]!r}") from None
            elif n_vertex is not None:
                raise CloudFormatError(f"{path}:{lineno}: elements after vertex are not supported")
        elif words[0] == "property":
            if len(words) != 3:
                raise CloudFormatError(f"{path}:{lineno}: malformed property line")
            if in_vertex:
                props.append(words[2])
        elif words[0] == "end_header":
            body_start = lineno + 1
            break
        else:
            raise CloudFormatError(f"{path}:{lineno}: unexpected header line {line.strip()!r}")
    else:
        raise CloudFormatError(f"{path}: missing end_header")
    if n_vertex is None:
        raise CloudFormatError(f"{path}: no vertex element")
    if props[:3] != ["x", "y", "z"] or props[3:] not in ([], ["outlier"]):
        raise CloudFormatError(f"{path}: vertex properties must be x y z [outlier], got {props}")
    body = lines[body_start - 1:]
    rows = _parse_rows(body, body_start, (len(props),), path)
    if len(rows) != n_vertex:
        raise CloudFormatError(f"{path}: header declares {n_vertex} vertices, found {len(rows)}")
    return _to_cloud(rows, path, with_labels=len(props) == 4)


def _norm_format(fmt, path):
    fmt = (fmt or guess_format(path)).lower()
    return "ply" if fmt == "ply-ascii" else fmt


def read_cloud(path, fmt=None):
    fmt = _norm_format(fmt, path)
    if fmt not in FORMATS:
        raise ValueError(f"unknown cloud format {fmt!r}")
    text = Path(path).read_text()
    return parse_ply(text, str(path)) if fmt == "ply" else parse_xyz(text, str(path))


def write_cloud(cloud, path, fmt=None):
    fmt = _norm_format(fmt, path)
    if fmt not in FORMATS:
        raise ValueError(f"unknown cloud format {fmt!r}")
    Path(path).write_text(format_ply(cloud) if fmt == "ply" else format_xyz(cloud))
