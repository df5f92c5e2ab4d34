"""Minimal ASCII PLY reader/writer for pre-segmented point-cloud frames.

Only ``element vertex`` with float ``x y z`` and an optional ``uchar label``
property is understood. Coordinates are written with ``repr`` so a write
followed by a read gives back the same doubles.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ParseError
from .geometry import PointCloud

_FLOAT_TYPES = {"float", "float32", "double", "float64"}
_LABEL_TYPES = {"uchar", "uint8"}


def write_ply(path, cloud: PointCloud) -> None:
    path = Path(path)
    has_labels = cloud.labels is not None
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(cloud)}",
        "property double x",
        "property double y",
        "property double z",
    ]
    if has_labels:
        lines.append("property uchar label")
    lines.append("end_header")
    for i, p in enumerate(cloud.points.tolist()):
        row = " ".join(repr(v) for v in p)
        if has_labels:
            row += f" {int(cloud.labels[i])}"
        lines.append(row)
    path.write_text("\n".join(lines) + "\n")


def _parse_header(lines, path):
    if not lines or lines[0].strip() != "ply":
        raise ParseError("missing 'ply' magic", 1, path)
    n_vertex = None
    props: list[tuple[str, str]] = []
    element = None
    for i, raw in enumerate(lines[1:], start=2):
        tok = raw.split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            if len(tok) < 2 or tok[1] != "ascii":
                raise ParseError("only ascii PLY is supported", i, path)
        elif tok[0] == "element":
            if len(tok) != 3:
                raise ParseError("bad element line", i, path)
            element = tok[1]
            try:
                count = int(tok[2])
            except ValueError:
                raise ParseError(f"bad element count {tok[2]!r}", i, path) from None
            if element == "vertex":
                if count < 0:
                    raise ParseError("negative vertex count", i, path)
                n_vertex = count
            elif count != 0:
                raise ParseError(f"unsupported element {element!r}", i, path)
        elif tok[0] == "property":
            if len(tok) != 3 or tok[1] == "list":
                raise ParseError("unsupported property line", i, path)
            if element == "vertex":
                props.append((tok[1], tok[2]))
        elif tok[0] == "end_header":
            if n_vertex is None:
                raise ParseError("no vertex element declared", i, path)
            return n_vertex, props, i
        else:
            raise ParseError(f"unknown header keyword {tok[0]!r}", i, path)
    raise ParseError("missing end_header", len(lines), path)


def read_ply(path) -> PointCloud:
    """Read an ASCII PLY written by :func:`write_ply` or a compatible tool.

    Raises:
        ParseError: malformed header or body; carries the 1-based line number.
    """
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except UnicodeDecodeError:
        raise ParseError("file is not ascii text", None, path) from None
    n, props, header_end = _parse_header(lines, path)
    names = [name for _, name in props]
    for axis in "xyz":
        if axis not in names:
            raise ParseError(f"vertex property {axis!r} missing", header_end, path)
    for ptype, name in props:
        if name in "xyz" and ptype not in _FLOAT_TYPES:
            raise ParseError(f"property {name} must be float, got {ptype}", header_end, path)
        if name == "label" and ptype not in _LABEL_TYPES:
            raise ParseError(f"label must be uchar, got {ptype}", header_end, path)
    cols = [names.index(a) for a in "xyz"]
    label_col = names.index("label") if "label" in names else None
    body = lines[header_end : header_end + n]
    if len(body) < n:
        raise ParseError(f"expected {n} vertices, found {len(body)}", len(lines), path)
    points = np.empty((n, 3))
    labels = np.empty(n, dtype=np.uint8) if label_col is not None else None
    for j, raw in enumerate(body):
        lineno = header_end + j + 1
        tok = raw.split()
        if len(tok) != len(names):
            raise ParseError(f"expected {len(names)} values, got {len(tok)}", lineno, path)
        try:
            points[j] = [float(tok[c]) for c in cols]
        except ValueError:
            raise ParseError("non-numeric coordinate", lineno, path) from None
        if not np.isfinite(points[j]).all():
            raise ParseError("non-finite coordinate", lineno, path)
        if labels is not None:
            try:
                value = int(tok[label_col])
            except ValueError:
                raise ParseError("non-integer label", lineno, path) from None
            if not 0 <= value <= 255:
                raise ParseError("label out of uchar range", lineno, path)
            labels[j] = value
    for j, raw in enumerate(lines[header_end + n :], start=header_end + n + 1):
        if raw.strip():
            raise ParseError("trailing data after vertices", j, path)
    return PointCloud(points, labels)
