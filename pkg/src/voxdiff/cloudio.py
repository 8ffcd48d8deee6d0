"""PLY (ASCII / binary little-endian) and whitespace XYZ point-cloud files."""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .geometry import PointCloud

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


class CloudParseError(ValueError):
    pass


def load_cloud(path: str | os.PathLike) -> PointCloud:
    path = Path(path)
    raw = path.read_bytes()
    if raw.startswith(b"ply"):
        return _read_ply(raw, path)
    return _read_xyz(raw.decode("utf-8", errors="replace"), path)


def save_cloud(cloud: PointCloud, path: str | os.PathLike, binary: bool = True) -> None:
    """Write ``.ply`` (float32 x/y/z plus float32 attrs) or, for any other suffix, XYZ text."""
    path = Path(path)
    if path.suffix.lower() != ".ply":
        np.savetxt(path, cloud.points.astype(np.float32), fmt="%.9g")
        return
    names = ["x", "y", "z"] + list(cloud.attrs)
    rec = np.empty(len(cloud), dtype=[(n, "<f4") for n in names])
    for i, n in enumerate("xyz"):
        rec[n] = cloud.points[:, i]
    for n, v in cloud.attrs.items():
        rec[n] = v
    fmt = "binary_little_endian" if binary else "ascii"
    header = [ "ply", f"format {fmt} 1.0", f"element vertex {len(cloud)}"]
    header += [f"property float {n}" for n in names]
    header.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            fh.write(rec.tobytes())
        else:
            for row in rec:
                fh.write((" ".join(f"{float(v):.9g}" for v in row) + "\n").encode("ascii"))


def _read_xyz(text: str, path: Path) -> PointCloud:
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        toks = line.split()
        if len(toks) < 3:
            raise CloudParseError(f"{path}: line {lineno}: expected at least 3 columns, got {len(toks)}")
        try:
            rows.append([float(t) for t in toks[:3]])
        except ValueError:
            raise CloudParseError(f"{path}: line {lineno}: non-numeric token in {line!r}") from None
    return PointCloud(np.asarray(rows, dtype=np.float64).reshape(-1, 3))


def _read_ply(raw: bytes, path: Path) -> PointCloud:
    end = raw.find(b"end_header")
    if end < 0:
        raise CloudParseError(f"{path}: byte 0: header has no end_header")
    body_start = raw.find(b"\n", end) + 1
    if body_start == 0:
        raise CloudParseError(f"{path}: byte {end}: missing newline after end_header")
    fmt = None
    elements: list[tuple[str, int, list[tuple[str, str]]]] = []
    offset = 0
    for line in raw[:body_start].split(b"\n"):
        here = offset
        offset += len(line) + 1
        toks = line.decode("ascii", errors="replace").split()
        if not toks or toks[0] in ("ply", "comment", "obj_info", "end_header"):
            continue
        if toks[0] == "format":
            if len(toks) < 2 or toks[1] not in ("ascii", "binary_little_endian"):
                raise CloudParseError(f"{path}: byte {here}: unsupported format line {line!r}")
            fmt = toks[1]
        elif toks[0] == "element":
            try:
                elements.append((toks[1], int(toks[2]), []))
            except (IndexError, ValueError):
                raise CloudParseError(f"{path}: byte {here}: malformed element line {line!r}") from None
        elif toks[0] == "property":
            if not elements:
                raise CloudParseError(f"{path}: byte {here}: property before any element")
            if toks[1] == "list":
                elements[-1][2].append((toks[-1], "list"))
            elif len(toks) == 3 and toks[1] in _PLY_TYPES:
                elements[-1][2].append((toks[2], _PLY_TYPES[toks[1]]))
            else:
                raise CloudParseError(f"{path}: byte {here}: malformed property line {line!r}")
        else:
            raise CloudParseError(f"{path}: byte {here}: unexpected header keyword {toks[0]!r}")
    if fmt is None:
        raise CloudParseError(f"{path}: byte 0: header has no format line")
    if not elements or elements[0][0] != "vertex":
        raise CloudParseError(f"{path}: byte 0: first element must be 'vertex'")
    _, count, props = elements[0]
    names = [n for n, _ in props]
    if any(t == "list" for _, t in props):
        raise CloudParseError(f"{path}: byte 0: list properties on vertex are unsupported")
    for req in "xyz":
        if req not in names:
            raise CloudParseError(f"{path}: byte 0: vertex element lacks property {req!r}")

    if fmt == "binary_little_endian":
        dtype = np.dtype([(n, "<" + t) for n, t in props])
        need = count * dtype.itemsize
        have = len(raw) - body_start
        if have < need:
            raise CloudParseError(f"{path}: byte {len(raw)}: truncated payload, "
                                  f"expected {need} bytes of vertex data from byte {body_start}")
        rec = np.frombuffer(raw, dtype=dtype, count=count, offset=body_start)
        cols = {n: rec[n].astype(np.float64) for n in names}
    else:
        cols = _read_ascii_body(raw, body_start, count, names, path)
        # values are stored at the declared precision, as the binary path does
        cols = {n: cols[n].astype("<" + t).astype(np.float64) for n, t in props}
    pts = np.stack([cols["x"], cols["y"], cols["z"]], axis=1)
    attrs = {n: cols[n] for n in names if n not in ("x", "y", "z")}
    return PointCloud(pts, attrs)


def _read_ascii_body(raw: bytes, start: int, count: int, names: list[str], path: Path):
    data = np.empty((count, len(names)))
    pos = start
    for i in range(count):
        nl = raw.find(b"\n", pos)
        if nl < 0:
            nl = len(raw)
        line = raw[pos:nl]
        toks = line.split()
        if len(toks) < len(names):
            raise CloudParseError(f"{path}: byte {pos}: vertex {i} has {len(toks)} values, "
                                  f"expected {len(names)}")
        try:
            data[i] = [float(t) for t in toks[:len(names)]]
        except ValueError:
            raise CloudParseError(f"{path}: byte {pos}: non-numeric value in vertex {i}") from None
        pos = nl + 1
        if pos > len(raw) and i < count - 1:
            raise CloudParseError(f"{path}: byte {len(raw)}: truncated payload after {i + 1} vertices")
    return {n: data[:, j] for j, n in enumerate(names)}
