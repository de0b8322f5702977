"""PNG (8-bit RGB) and PFM (float32 little-endian) image files.

PNG values map to linear [0,1] by dividing by 255 with no gamma
transform; saving rounds back to 8 bits, so a save/load round trip of
8-bit content is exact. PFM is the standard portable float map: a
negative scale field marks little-endian data and rows are stored
bottom-to-top. Depth maps are single-channel PFMs and may contain
NaN/inf to mark unusable pixels.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import InvalidArgumentError, ParseError


def load_png(path) -> np.ndarray:
    path = Path(path)
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    except FileNotFoundError:
        raise
    except Exception as exc:  # Pillow raises various decoder errors
        raise ParseError(f"{path}: not a decodable PNG ({exc})") from exc
    return arr / 255.0


def save_png(path, img: np.ndarray):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = np.repeat(img[:, :, None], 3, axis=2)
    if img.ndim != 3 or img.shape[2] != 3:
        raise InvalidArgumentError(f"expected HxWx3 image, got shape {img.shape}")
    data = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data, mode="RGB").save(Path(path), format="PNG")


def load_pfm(path) -> np.ndarray:
    """Read a PFM file into float64 (H, W) or (H, W, 3)."""
    path = Path(path)
    data = path.read_bytes()
    try:
        head, rest = data.split(b"\n", 1)
    except ValueError:
        raise ParseError(f"{path}: truncated PFM header")
    if head.strip() == b"PF":
        channels = 3
    elif head.strip() == b"Pf":
        channels = 1
    else:
        raise ParseError(f"{path}: bad PFM magic {head[:4]!r}")
    try:
        dims, rest = rest.split(b"\n", 1)
        w, h = (int(tok) for tok in dims.split())
        scale_line, payload = rest.split(b"\n", 1)
        scale = float(scale_line)
    except ValueError as exc:
        raise ParseError(f"{path}: malformed PFM header ({exc})") from exc
    if w <= 0 or h <= 0:
        raise ParseError(f"{path}: bad PFM dimensions {w}x{h}")
    dtype = "<f4" if scale < 0 else ">f4"
    count = w * h * channels
    if len(payload) < count * 4:
        header_len = len(data) - len(payload)
        raise ParseError(
            f"{path}: PFM payload truncated at byte offset {len(data)}"
            f" (expected {header_len + count * 4} bytes total)"
        )
    flat = np.frombuffer(payload[: count * 4], dtype=dtype).astype(np.float64)
    img = flat.reshape(h, w, channels)[::-1]  # rows are stored bottom-up
    return img[:, :, 0] if channels == 1 else img


def save_pfm(path, img: np.ndarray):
    img = np.asarray(img, dtype=np.float32)
    if img.ndim == 2:
        channels = 1
        payload = img[::-1]
    elif img.ndim == 3 and img.shape[2] == 3:
        channels = 3
        payload = img[::-1]
    else:
        raise InvalidArgumentError(f"expected HxW or HxWx3 image, got shape {img.shape}")
    header = (b"PF\n" if channels == 3 else b"Pf\n") + f"{img.shape[1]} {img.shape[0]}\n-1.0\n".encode()
    Path(path).write_bytes(header + payload.astype("<f4").tobytes())
