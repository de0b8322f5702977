"""Pose files, view directories, and the pseudo-view bundle format.

This is the seam where externally produced content (interpolated poses,
synthesized images, estimated depths, rendered pointmaps) enters the
engine, and what the synthetic oracle writes.

Pose file: one view per line,
    id qw qx qy qz tx ty tz fx fy cx cy w h
whitespace-separated decimal, '#' comments allowed. Poses are
world-to-camera; quaternions must be unit within 1e-3 and are
re-normalized on load.

View directory: poses.txt plus <id>.png per view.

Bundle directory: manifest.txt (flat key = value; requires
`provenance`, optional `pose_file`, default poses.txt) plus, per view,
<id>.png (synthesized image), <id>_depth.pfm (reference depth), and
optional <id>_pointmap.png / <id>_confidence.pfm. Validation collects
every violation before failing.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError
from .geometry import CameraView, Intrinsics, Pose
from .images import load_pfm, load_png, save_pfm, save_png

QUAT_NORM_TOL = 1e-3
MANIFEST_NAME = "manifest.txt"
DEFAULT_POSE_FILE = "poses.txt"
PROVENANCES = ("synthetic-oracle", "external-dsm-cvi")


@dataclass
class PseudoView:
    """One interpolated view with its synthesized supervision content."""

    id: str
    view: CameraView
    image: np.ndarray  # (H, W, 3) in [0, 1]
    depth: np.ndarray  # (H, W), NaN/inf = unusable
    pointmap: np.ndarray | None = None
    confidence: np.ndarray | None = None


@dataclass
class PseudoViewBundle:
    views: list[PseudoView]
    provenance: str = "external-dsm-cvi"

    def __len__(self) -> int:
        return len(self.views)

    @classmethod
    def empty(cls, provenance: str = "external-dsm-cvi") -> "PseudoViewBundle":
        return cls(views=[], provenance=provenance)


def format_pose_line(view: CameraView) -> str:
    q = view.pose.rotation
    t = view.pose.translation
    k = view.intrinsics
    fields = [view.id] + [repr(float(x)) for x in (*q, *t, k.fx, k.fy, k.cx, k.cy)]
    fields += [str(k.width), str(k.height)]
    return " ".join(fields)


def parse_pose_line(line: str, where: str = "pose line") -> CameraView:
    tok = line.split()
    if len(tok) != 14:
        raise ParseError(f"{where}: expected 14 fields, got {len(tok)}: '{line.strip()}'")
    vid = tok[0]
    try:
        vals = [float(x) for x in tok[1:12]]
        width, height = int(tok[12]), int(tok[13])
    except ValueError as exc:
        raise ParseError(f"{where}: non-numeric field ({exc})") from exc
    q = np.array(vals[0:4])
    t = np.array(vals[4:7])
    if not np.all(np.isfinite(q)) or not np.all(np.isfinite(t)):
        raise ParseError(f"{where}: non-finite pose for view '{vid}'")
    norm = float(np.linalg.norm(q))
    if abs(norm - 1.0) > QUAT_NORM_TOL:
        raise ParseError(f"{where}: quaternion norm {norm:.6f} for view '{vid}' departs from 1")
    return CameraView(
        intrinsics=Intrinsics(vals[7], vals[8], vals[9], vals[10], width, height),
        pose=Pose(q, t),
        id=vid,
    )


def read_pose_file(path) -> list[CameraView]:
    path = Path(path)
    views = []
    for ln, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        views.append(parse_pose_line(line, where=f"{path}:{ln}"))
    return views


def write_pose_file(path, views):
    text = "".join(format_pose_line(v) + "\n" for v in views)
    Path(path).write_text(text, encoding="utf-8")


def save_view_dir(dirpath, views_images):
    """Write poses.txt + <id>.png for (CameraView, image) pairs."""
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    write_pose_file(dirpath / DEFAULT_POSE_FILE, [v for v, _ in views_images])
    for view, img in views_images:
        save_png(dirpath / f"{view.id}.png", img)


def load_view_dir(dirpath) -> list[tuple[CameraView, np.ndarray]]:
    """Read a poses.txt + images directory; validates dimensions."""
    dirpath = Path(dirpath)
    pose_path = dirpath / DEFAULT_POSE_FILE
    if not pose_path.exists():
        raise ValidationError(f"{dirpath}: missing {DEFAULT_POSE_FILE}")
    views = read_pose_file(pose_path)
    problems = []
    out = []
    for view in views:
        img_path = dirpath / f"{view.id}.png"
        if not img_path.exists():
            problems.append(f"view '{view.id}': missing image {img_path.name}")
            continue
        img = load_png(img_path)
        if img.shape[:2] != (view.intrinsics.height, view.intrinsics.width):
            problems.append(
                f"view '{view.id}': image {img.shape[1]}x{img.shape[0]} does not match"
                f" intrinsics {view.intrinsics.width}x{view.intrinsics.height}"
            )
            continue
        out.append((view, img))
    if problems:
        raise ValidationError(f"{dirpath}: " + "; ".join(problems))
    return out


def _read_manifest(path) -> dict[str, str]:
    entries = {}
    for ln, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"{path}:{ln}: expected 'key = value', got '{line}'")
        key, value = (part.strip() for part in line.split("=", 1))
        entries[key] = value
    return entries


def save_bundle(dirpath, bundle: PseudoViewBundle):
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    (dirpath / MANIFEST_NAME).write_text(
        f"provenance = {bundle.provenance}\npose_file = {DEFAULT_POSE_FILE}\n", encoding="utf-8"
    )
    write_pose_file(dirpath / DEFAULT_POSE_FILE, [pv.view for pv in bundle.views])
    for pv in bundle.views:
        save_png(dirpath / f"{pv.id}.png", pv.image)
        save_pfm(dirpath / f"{pv.id}_depth.pfm", pv.depth)
        if pv.pointmap is not None:
            save_png(dirpath / f"{pv.id}_pointmap.png", pv.pointmap)
        if pv.confidence is not None:
            save_pfm(dirpath / f"{pv.id}_confidence.pfm", pv.confidence)


def load_bundle(dirpath) -> PseudoViewBundle:
    """Load and fully validate a pseudo-view bundle directory.

    A bundle that loads successfully satisfies every invariant: files
    exist and parse, dimensions match the per-view intrinsics, poses are
    finite with unit quaternions. All violations are reported at once.
    """
    dirpath = Path(dirpath)
    manifest_path = dirpath / MANIFEST_NAME
    if not manifest_path.exists():
        raise ValidationError(f"{dirpath}: missing {MANIFEST_NAME}")
    manifest = _read_manifest(manifest_path)
    provenance = manifest.get("provenance")
    if provenance is None:
        raise ValidationError(f"{dirpath}: manifest missing 'provenance'")
    if provenance not in PROVENANCES:
        raise ValidationError(
            f"{dirpath}: provenance '{provenance}' not one of {', '.join(PROVENANCES)}"
        )
    pose_path = dirpath / manifest.get("pose_file", DEFAULT_POSE_FILE)
    if not pose_path.exists():
        raise ValidationError(f"{dirpath}: missing pose file {pose_path.name}")
    views = read_pose_file(pose_path)

    problems: list[str] = []
    loaded: list[PseudoView] = []
    for view in views:
        vid = view.id
        shape = (view.intrinsics.height, view.intrinsics.width)

        def read(file_name, loader, what, required):
            p = dirpath / file_name
            if not p.exists():
                if required:
                    problems.append(f"view '{vid}': missing {what} {file_name}")
                return None
            try:
                arr = loader(p)
            except ParseError as exc:
                problems.append(f"view '{vid}': {exc}")
                return None
            if arr.shape[:2] != shape:
                problems.append(
                    f"view '{vid}': {what} is {arr.shape[1]}x{arr.shape[0]},"
                    f" intrinsics say {shape[1]}x{shape[0]}"
                )
                return None
            return arr

        image = read(f"{vid}.png", load_png, "image", required=True)
        depth = read(f"{vid}_depth.pfm", load_pfm, "depth", required=True)
        pointmap = read(f"{vid}_pointmap.png", load_png, "pointmap", required=False)
        confidence = read(f"{vid}_confidence.pfm", load_pfm, "confidence", required=False)
        if image is not None and depth is not None:
            loaded.append(PseudoView(vid, view, image, depth, pointmap, confidence))
    if problems:
        raise ValidationError(f"{dirpath}: " + "; ".join(problems))
    return PseudoViewBundle(views=loaded, provenance=provenance)
