"""Binary and image encodings for dataset files.

``.f32``   depth map: magic ``KSDEPTH1`` (8 bytes), uint32 H, uint32 W, then
           H*W little-endian float32 in row-major order.
``.f32g``  5-D tensor: magic ``KSF32G01`` (8 bytes), 5 uint32 axis sizes,
           then the little-endian float32 entries in C order.
``.png``   RGB (8-bit), depth preview (16-bit grey, millimetres, saturating
           at 65535), instance mask (8-bit palette image, value = object id).

All integers are little-endian.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .exceptions import ValidationError

DEPTH_MAGIC = b"KSDEPTH1"
TENSOR_MAGIC = b"KSF32G01"
DEPTH_PREVIEW_SCALE = 1000.0  # uint16 units per metre

# distinct, saturated colors for ids 1..255; id 0 is black
_PALETTE = np.zeros((256, 3), dtype=np.uint8)
_golden = 0.618033988749895
for _k in range(1, 256):
    _h = (_k * _golden) % 1.0
    _PALETTE[_k] = [int(255 * (0.5 + 0.5 * np.cos(2 * np.pi * (_h + o)))) for o in (0.0, 1 / 3, 2 / 3)]


def encode_depth(depth):
    depth = np.ascontiguousarray(depth, dtype="<f4")
    if depth.ndim != 2:
        raise ValueError(f"depth must be 2-D, got shape {depth.shape}")
    h, w = depth.shape
    return DEPTH_MAGIC + struct.pack("<II", h, w) + depth.tobytes()


def decode_depth(data, path="<bytes>"):
    if len(data) < 16 or data[:8] != DEPTH_MAGIC:
        raise ValidationError(path, "depth", "bad magic or truncated header")
    h, w = struct.unpack("<II", data[8:16])
    if len(data) != 16 + 4 * h * w:
        raise ValidationError(path, "depth", f"payload is {len(data) - 16} bytes, expected {4 * h * w}")
    arr = np.frombuffer(data, dtype="<f4", offset=16).reshape(h, w).astype(np.float32)
    if not np.all(np.isfinite(arr)):
        raise ValidationError(path, "depth", "non-finite depth values")
    return arr


def write_depth(path, depth):
    Path(path).write_bytes(encode_depth(depth))


def read_depth(path):
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ValidationError(path, "depth", str(exc)) from None
    return decode_depth(data, path)


def encode_tensor(x):
    x = np.ascontiguousarray(x, dtype="<f4")
    if x.ndim != 5:
        raise ValueError(f".f32g tensors are 5-D, got shape {x.shape}")
    if min(x.shape) < 1:
        raise ValueError("all axis sizes must be >= 1")
    return TENSOR_MAGIC + struct.pack("<5I", *x.shape) + x.tobytes()


def decode_tensor(data, path="<bytes>"):
    if len(data) < 28 or data[:8] != TENSOR_MAGIC:
        raise ValidationError(path, "tensor", "bad magic or truncated header")
    shape = struct.unpack("<5I", data[8:28])
    count = int(np.prod(shape))
    if min(shape) < 1 or len(data) != 28 + 4 * count:
        raise ValidationError(path, "tensor", f"header shape {shape} does not match payload size")
    return np.frombuffer(data, dtype="<f4", offset=28).reshape(shape).astype(np.float32)


def write_tensor(path, x):
    Path(path).write_bytes(encode_tensor(x))


def read_tensor(path):
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ValidationError(path, "tensor", str(exc)) from None
    return decode_tensor(data, path)


def _png_bytes(img):
    buf = io.BytesIO()
    img.save(buf, format="PNG", optimize=False)
    return buf.getvalue()


def encode_rgb_png(rgb):
    return _png_bytes(Image.fromarray(np.ascontiguousarray(rgb, dtype=np.uint8)))


def depth_preview(depth):
    """Depth in millimetres as uint16 (values beyond 65.535 m saturate)."""
    mm = np.rint(np.asarray(depth, dtype=np.float64) * DEPTH_PREVIEW_SCALE)
    return np.clip(mm, 0, 65535).astype(np.uint16)


def encode_depth_png(depth):
    return _png_bytes(Image.fromarray(depth_preview(depth)))


def encode_mask_png(mask):
    mask = np.ascontiguousarray(mask, dtype=np.uint8)
    img = Image.frombytes("P", (mask.shape[1], mask.shape[0]), mask.tobytes())
    img.putpalette(_PALETTE.ravel().tolist())
    return _png_bytes(img)


def _open_png(path, modality):
    try:
        with Image.open(path) as img:
            img.load()
            return img.copy()
    except (OSError, SyntaxError, ValueError) as exc:
        raise ValidationError(path, modality, f"unreadable PNG: {exc}") from None


def read_rgb_png(path, shape=None):
    img = _open_png(path, "rgb")
    if img.mode != "RGB":
        raise ValidationError(path, "rgb", f"expected RGB image, got mode {img.mode}")
    arr = np.asarray(img)
    if shape is not None and arr.shape[:2] != tuple(shape):
        raise ValidationError(path, "rgb", f"size {arr.shape[:2]} != expected {tuple(shape)}")
    return arr


def read_mask_png(path, shape=None):
    img = _open_png(path, "mask")
    if img.mode not in ("P", "L"):
        raise ValidationError(path, "mask", f"expected palette or grey image, got mode {img.mode}")
    arr = np.asarray(img, dtype=np.uint8)
    if shape is not None and arr.shape != tuple(shape):
        raise ValidationError(path, "mask", f"size {arr.shape} != expected {tuple(shape)}")
    return arr


def read_depth_png(path, shape=None):
    img = _open_png(path, "depth_preview")
    arr = np.asarray(img)
    if shape is not None and arr.shape != tuple(shape):
        raise ValidationError(path, "depth_preview", f"size {arr.shape} != expected {tuple(shape)}")
    return arr.astype(np.float64) / DEPTH_PREVIEW_SCALE
