"""PLY serialization for point clouds and Gaussian scene checkpoints.

Point clouds need x,y,z (float or double) plus optional 8-bit
red/green/blue. Checkpoints additionally carry the Gaussian parameters
as double properties (rot_{wxyz}, log_scale_{xyz}, opacity_logit,
color_{rgb}), so a binary save/load round trip is bit-exact. Both ASCII
and binary_little_endian files are read; writing defaults to binary.

Parse errors carry the byte offset where reading failed.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError, ParseError
from .gaussians import GaussianSet, PointCloud

_PLY_TYPES = {
    "char": "<i1", "int8": "<i1",
    "uchar": "<u1", "uint8": "<u1",
    "short": "<i2", "int16": "<i2",
    "ushort": "<u2", "uint16": "<u2",
    "int": "<i4", "int32": "<i4",
    "uint": "<u4", "uint32": "<u4",
    "float": "<f4", "float32": "<f4",
    "double": "<f8", "float64": "<f8",
}

GAUSSIAN_PROPS = (
    "x", "y", "z",
    "rot_w", "rot_x", "rot_y", "rot_z",
    "log_scale_x", "log_scale_y", "log_scale_z",
    "opacity_logit",
    "color_r", "color_g", "color_b",
)


def _parse_header(data: bytes, path):
    if not data.startswith(b"ply"):
        raise ParseError(f"{path}: missing 'ply' magic at byte offset 0")
    offset = 0
    fmt = None
    vertex_count = None
    props: list[tuple[str, str]] = []
    in_vertex = False
    while True:
        end = data.find(b"\n", offset)
        if end < 0:
            raise ParseError(f"{path}: header not terminated (byte offset {offset})")
        line = data[offset:end].decode("ascii", errors="replace").strip()
        offset = end + 1
        if line == "ply" or line.startswith("comment") or not line:
            continue
        if line.startswith("format"):
            parts = line.split()
            if len(parts) < 2 or parts[1] not in ("ascii", "binary_little_endian"):
                raise ParseError(f"{path}: unsupported format '{line}' (byte offset {offset})")
            fmt = parts[1]
        elif line.startswith("element"):
            parts = line.split()
            if len(parts) != 3:
                raise ParseError(f"{path}: malformed element line (byte offset {offset})")
            try:
                cnt = int(parts[2])
            except ValueError as exc:
                raise ParseError(f"{path}: bad element count (byte offset {offset})") from exc
            if parts[1] == "vertex":
                if vertex_count is not None:
                    raise ParseError(f"{path}: duplicate vertex element (byte offset {offset})")
                vertex_count = cnt
                in_vertex = True
            else:
                # Non-vertex elements are tolerated only where they cannot
                # shift the vertex payload (empty, or trailing it).
                if vertex_count is None and cnt != 0:
                    raise ParseError(
                        f"{path}: element '{parts[1]}' precedes vertex data (byte offset {offset})"
                    )
                in_vertex = False
        elif line.startswith("property"):
            parts = line.split()
            if not in_vertex:
                continue
            if len(parts) == 3 and parts[1] in _PLY_TYPES:
                props.append((parts[2], parts[1]))
            elif len(parts) >= 2 and parts[1] == "list":
                raise ParseError(f"{path}: list properties not supported (byte offset {offset})")
            else:
                raise ParseError(f"{path}: bad property line '{line}' (byte offset {offset})")
        elif line == "end_header":
            break
        else:
            raise ParseError(f"{path}: unrecognized header line '{line}' (byte offset {offset})")
    if fmt is None or vertex_count is None:
        raise ParseError(f"{path}: header missing format or vertex element")
    return fmt, vertex_count, props, offset


def _read_vertices(data, path, fmt, count, props, offset) -> dict[str, np.ndarray]:
    names = [n for n, _ in props]
    if fmt == "binary_little_endian":
        dtype = np.dtype([(n, _PLY_TYPES[t]) for n, t in props])
        need = count * dtype.itemsize
        if len(data) - offset < need:
            raise ParseError(
                f"{path}: vertex data truncated at byte offset {len(data)}"
                f" (expected {offset + need} bytes total)"
            )
        table = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
        return {n: np.asarray(table[n], dtype=np.float64) for n in names}
    # ASCII
    text = data[offset:].decode("ascii", errors="replace").split()
    need = count * len(props)
    if len(text) < need:
        raise ParseError(
            f"{path}: ASCII vertex data truncated at byte offset {len(data)}"
            f" (expected {need} values, found {len(text)})"
        )
    try:
        flat = np.array([float(tok) for tok in text[:need]], dtype=np.float64)
    except ValueError as exc:
        raise ParseError(f"{path}: non-numeric vertex token ({exc})") from exc
    table = flat.reshape(count, len(props))
    return {n: table[:, i] for i, n in enumerate(names)}


def load_ply(path):
    """Read a point cloud or a Gaussian checkpoint, detected by properties."""
    path = Path(path)
    data = path.read_bytes()
    fmt, count, props, offset = _parse_header(data, path)
    names = [n for n, _ in props]
    for req in ("x", "y", "z"):
        if req not in names:
            raise ParseError(f"{path}: required property '{req}' missing from header")
    cols = _read_vertices(data, path, fmt, count, props, offset)
    xyz = np.stack([cols["x"], cols["y"], cols["z"]], axis=1)
    if all(p in names for p in GAUSSIAN_PROPS):
        return GaussianSet(
            mus=xyz,
            rots=np.stack([cols["rot_w"], cols["rot_x"], cols["rot_y"], cols["rot_z"]], 1),
            log_scales=np.stack(
                [cols["log_scale_x"], cols["log_scale_y"], cols["log_scale_z"]], 1
            ),
            opacity_logits=cols["opacity_logit"],
            colors=np.stack([cols["color_r"], cols["color_g"], cols["color_b"]], 1),
        )
    if all(c in names for c in ("red", "green", "blue")):
        colors = np.stack([cols["red"], cols["green"], cols["blue"]], 1)
        types = dict(props)
        if types["red"] in ("uchar", "uint8"):
            colors = colors / 255.0
    else:
        colors = np.full((count, 3), 0.5)
    return PointCloud(xyz, colors)


def _format_ascii_rows(columns: list[np.ndarray]) -> str:
    rows = []
    for vals in zip(*columns):
        rows.append(" ".join(repr(float(v)) for v in vals))
    return "\n".join(rows) + ("\n" if rows else "")


def save_pointcloud_ply(path, pc: PointCloud, binary: bool = True):
    n = len(pc)
    rgb = np.clip(np.rint(pc.colors * 255.0), 0, 255).astype(np.uint8)
    header = [
        "ply",
        "format binary_little_endian 1.0" if binary else "format ascii 1.0",
        f"element vertex {n}",
        "property double x", "property double y", "property double z",
        "property uchar red", "property uchar green", "property uchar blue",
        "end_header",
    ]
    head = ("\n".join(header) + "\n").encode("ascii")
    if binary:
        dtype = np.dtype([("x", "<f8"), ("y", "<f8"), ("z", "<f8"),
                          ("red", "<u1"), ("green", "<u1"), ("blue", "<u1")])
        table = np.empty(n, dtype=dtype)
        for i, name in enumerate(("x", "y", "z")):
            table[name] = pc.points[:, i]
        for i, name in enumerate(("red", "green", "blue")):
            table[name] = rgb[:, i]
        Path(path).write_bytes(head + table.tobytes())
    else:
        rows = []
        for p, c in zip(pc.points, rgb):
            rows.append(f"{p[0]!r} {p[1]!r} {p[2]!r} {c[0]} {c[1]} {c[2]}")
        Path(path).write_bytes(head + ("\n".join(rows) + ("\n" if rows else "")).encode("ascii"))


def save_gaussians_ply(path, scene: GaussianSet, binary: bool = True):
    header = [
        "ply",
        "format binary_little_endian 1.0" if binary else "format ascii 1.0",
        f"element vertex {scene.n}",
    ]
    header += [f"property double {name}" for name in GAUSSIAN_PROPS]
    header.append("end_header")
    head = ("\n".join(header) + "\n").encode("ascii")
    columns = [
        scene.mus[:, 0], scene.mus[:, 1], scene.mus[:, 2],
        scene.rots[:, 0], scene.rots[:, 1], scene.rots[:, 2], scene.rots[:, 3],
        scene.log_scales[:, 0], scene.log_scales[:, 1], scene.log_scales[:, 2],
        scene.opacity_logits,
        scene.colors[:, 0], scene.colors[:, 1], scene.colors[:, 2],
    ]
    if binary:
        table = np.stack(columns, axis=1).astype("<f8")
        Path(path).write_bytes(head + table.tobytes())
    else:
        Path(path).write_bytes(head + _format_ascii_rows(columns).encode("ascii"))


def save_ply(path, obj, binary: bool = True):
    """Serialize a PointCloud or GaussianSet (dispatch by type)."""
    if isinstance(obj, GaussianSet):
        save_gaussians_ply(path, obj, binary)
    elif isinstance(obj, PointCloud):
        save_pointcloud_ply(path, obj, binary)
    else:
        raise InvalidArgumentError(f"cannot serialize {type(obj).__name__} as PLY")
