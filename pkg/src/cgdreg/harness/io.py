"""Readers and writers for ASCII XYZ and ASCII PLY point clouds."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from ..errors import InvalidArgument
from ..geometry import PointCloud


def read_xyz(path) -> PointCloud:
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        if len(parts) < 3:
            raise InvalidArgument(f"{path}:{lineno}: expected 'x y z'")
        rows.append([float(v) for v in parts[:3]])
    if not rows:
        raise InvalidArgument(f"{path}: no points")
    return PointCloud(np.array(rows))


def write_xyz(cloud: PointCloud, path, comment: str | None = None) -> None:
    with open(path, "w") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        np.savetxt(fh, cloud.points, fmt="%.17g")


def read_ply(path) -> PointCloud:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise InvalidArgument(f"{path}: missing 'ply' header")
    fmt = None
    elements = []  # (name, count, [props])
    body_start = None
    for i, line in enumerate(lines[1:], 1):
        tok = line.split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            elements.append((tok[1], int(tok[2]), []))
        elif tok[0] == "property":
            if not elements:
                raise InvalidArgument(f"{path}: property before element")
            if tok[1] == "list":
                elements[-1][2].append(("list", tok[-1]))
            else:
                elements[-1][2].append((tok[1], tok[-1]))
        elif tok[0] == "end_header":
            body_start = i + 1
            break
    if fmt != "ascii":
        raise InvalidArgument(f"{path}: only ASCII PLY is supported (got {fmt})")
    if body_start is None:
        raise InvalidArgument(f"{path}: missing end_header")
    pos = body_start
    for name, count, props in elements:
        if name != "vertex":
            pos += count
            continue
        names = [p[1] for p in props]
        if any(p[0] == "list" for p in props) or not {"x", "y", "z"} <= set(names):
            raise InvalidArgument(f"{path}: vertex element needs scalar x, y, z properties")
        cols = [names.index(c) for c in ("x", "y", "z")]
        body = [lines[j].split() for j in range(pos, pos + count)]
        if len(body) != count:
            raise InvalidArgument(f"{path}: truncated vertex list")
        pts = np.array([[float(r[c]) for c in cols] for r in body])
        return PointCloud(pts)
    raise InvalidArgument(f"{path}: no vertex element")


def write_ply(cloud: PointCloud, path) -> None:
    with open(path, "w") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {len(cloud)}\n")
        fh.write("property float x\nproperty float y\nproperty float z\nend_header\n")
        np.savetxt(fh, cloud.points, fmt="%.17g")


def read_cloud(path) -> PointCloud:
    suffix = Path(path).suffix.lower()
    if suffix == ".ply":
        return read_ply(path)
    return read_xyz(path)


def write_cloud(cloud: PointCloud, path) -> None:
    if Path(path).suffix.lower() == ".ply":
        write_ply(cloud, path)
    else:
        write_xyz(cloud, path)
