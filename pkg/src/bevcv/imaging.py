"""Raster I/O and the POV preprocessing front end.

Panorama columns span 360 degrees of azimuth.  Yaw 0 points at the centre
column of the panorama and positive yaw turns clockwise (towards larger
column indices).  Crops are column-exact; resizing is a separate step.
"""
from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import MalformedImage, UnsupportedFormat, ValidationError

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


@dataclass(frozen=True, eq=False)
class ImageRaster:
    """Row-major interleaved 8-bit raster, ``data`` shaped (height, width, channels)."""

    data: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, ImageRaster):
            return NotImplemented
        return self.data.shape == other.data.shape and self.tobytes() == other.tobytes()

    __hash__ = None

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[0] < 1 or arr.shape[1] < 1 or arr.shape[2] < 1:
            raise ValidationError("data", f"raster must be (H, W, C) with positive extents, got {arr.shape}")
        if arr.dtype != np.uint8:
            raise ValidationError("data", f"raster samples must be uint8, got {arr.dtype}")
        object.__setattr__(self, "data", np.ascontiguousarray(arr))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def tobytes(self) -> bytes:
        return self.data.tobytes()

    @classmethod
    def from_bytes(cls, width: int, height: int, channels: int, buf: bytes) -> "ImageRaster":
        if len(buf) != width * height * channels:
            raise ValidationError("data", "byte length does not match width*height*channels")
        return cls(np.frombuffer(buf, dtype=np.uint8).reshape(height, width, channels).copy())

    def to_tensor(self) -> np.ndarray:
        """Channels-first float32 in [0, 1]."""
        return (self.data.transpose(2, 0, 1).astype(np.float32) / np.float32(255.0))


@dataclass(frozen=True)
class CropSpec:
    fov_deg: float = 70.0
    yaw_deg: float = 0.0

    def __post_init__(self):
        if not (0.0 < self.fov_deg <= 360.0):
            raise ValidationError("fov_deg", f"fov_deg must be in (0, 360], got {self.fov_deg}")
        object.__setattr__(self, "yaw_deg", float(self.yaw_deg) % 360.0)


# --------------------------------------------------------------------------- I/O


def load_image(path) -> ImageRaster:
    raw = Path(path).read_bytes()
    if raw.startswith(PNG_SIGNATURE):
        return _decode_png(raw)
    if raw[:2] == b"P6":
        return decode_ppm(raw)
    if raw[:1] == b"P" and raw[1:2].isdigit():
        raise UnsupportedFormat(f"{path}: only binary PPM (P6) is supported")
    if len(raw) < 8:
        raise MalformedImage(f"{path}: file too short to be an image")
    raise UnsupportedFormat(f"{path}: not a PNG or P6 PPM file")


def _ppm_tokens(raw: bytes, count: int):
    """Read ``count`` whitespace-separated header tokens, skipping comments."""
    tokens, pos, n = [], 0, len(raw)
    while len(tokens) < count:
        while pos < n and raw[pos:pos + 1].isspace():
            pos += 1
        if pos < n and raw[pos:pos + 1] == b"#":
            while pos < n and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not raw[pos:pos + 1].isspace() and raw[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise MalformedImage("truncated PPM header")
        tokens.append(raw[start:pos])
    # exactly one whitespace byte separates header from pixel data
    if pos >= n or not raw[pos:pos + 1].isspace():
        raise MalformedImage("truncated PPM header")
    return tokens, pos + 1


def decode_ppm(raw: bytes) -> ImageRaster:
    tokens, offset = _ppm_tokens(raw, 4)
    if tokens[0] != b"P6":
        raise UnsupportedFormat("only binary PPM (P6) is supported")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise MalformedImage("non-numeric PPM header field") from None
    if width < 1 or height < 1:
        raise MalformedImage(f"invalid PPM dimensions {width}x{height}")
    if not 0 < maxval < 65536:
        raise MalformedImage(f"invalid PPM maxval {maxval}")
    if maxval > 255:
        raise UnsupportedFormat("16-bit PPM is not supported")
    need = width * height * 3
    body = raw[offset:offset + need]
    if len(body) < need:
        raise MalformedImage(f"PPM pixel data truncated: expected {need} bytes, got {len(body)}")
    return ImageRaster.from_bytes(width, height, 3, body)


def _decode_png(raw: bytes) -> ImageRaster:
    # IHDR must be the first chunk: length(4) type(4) width(4) height(4) depth(1) color(1)
    if len(raw) < 33 or raw[12:16] != b"IHDR":
        raise MalformedImage("PNG missing IHDR")
    width, height, depth, color = struct.unpack(">IIBB", raw[16:26])
    if depth != 8:
        raise UnsupportedFormat(f"PNG bit depth {depth} is not supported (8-bit only)")
    from PIL import Image

    try:
        with Image.open(io.BytesIO(raw)) as im:
            im.load()
            if im.mode == "RGBA" or im.mode == "LA" or im.mode == "P":
                im = im.convert("RGBA").convert("RGB")
            elif im.mode != "RGB":
                im = im.convert("RGB")
            arr = np.asarray(im, dtype=np.uint8)
    except (OSError, SyntaxError, ValueError) as exc:
        raise MalformedImage(f"PNG decode failed: {exc}") from exc
    if arr.shape[:2] != (height, width):
        raise MalformedImage("PNG dimensions disagree with IHDR")
    return ImageRaster(arr.copy())


def encode_ppm(img: ImageRaster) -> bytes:
    if img.channels != 3:
        raise ValidationError("channels", "PPM output requires 3 channels")
    return b"P6\n%d %d\n255\n" % (img.width, img.height) + img.tobytes()


def save_ppm(img: ImageRaster, path) -> None:
    Path(path).write_bytes(encode_ppm(img))


def save_png(img: ImageRaster, path) -> None:
    from PIL import Image

    Image.fromarray(img.data if img.channels != 1 else img.data[:, :, 0]).save(path, format="PNG")


# --------------------------------------------------------------------------- geometry ops


def crop_width(pano_width: int, fov_deg: float) -> int:
    """Output width of a FOV crop: nearest integer to ``W * fov / 360``, at least 1."""
    return max(1, math.floor(pano_width * fov_deg / 360.0 + 0.5))


def _yaw_shift(pano_width: int, yaw_deg: float) -> int:
    # signed yaw in (-180, 180], rounded half away from zero so that the
    # shift for -yaw is exactly the negation of the shift for +yaw
    signed = yaw_deg % 360.0
    if signed > 180.0:
        signed -= 360.0
    x = signed * pano_width / 360.0
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


def crop_columns(pano_width: int, crop: CropSpec) -> np.ndarray:
    """Source column indices (left to right) taken by :func:`fov_crop`."""
    w = crop_width(pano_width, crop.fov_deg)
    start = (pano_width - w) // 2 + _yaw_shift(pano_width, crop.yaw_deg)
    return (start + np.arange(w)) % pano_width


def fov_crop(pano: ImageRaster, crop: CropSpec) -> ImageRaster:
    cols = crop_columns(pano.width, crop)
    return ImageRaster(pano.data[:, cols, :])


def _bilinear_taps(n_in: int, n_out: int):
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def resize_bilinear(img: ImageRaster, out_w: int, out_h: int) -> ImageRaster:
    """Bilinear resize with half-pixel-centred sampling and edge clamping."""
    if out_w < 1 or out_h < 1:
        raise ValidationError("size", f"output size must be positive, got {out_w}x{out_h}")
    if (out_w, out_h) == (img.width, img.height):
        return ImageRaster(img.data.copy())
    y0, y1, fy = _bilinear_taps(img.height, out_h)
    x0, x1, fx = _bilinear_taps(img.width, out_w)
    src = img.data.astype(np.float64)
    fx = fx[None, :, None]
    top = src[y0][:, x0] * (1.0 - fx) + src[y0][:, x1] * fx
    bot = src[y1][:, x0] * (1.0 - fx) + src[y1][:, x1] * fx
    fy = fy[:, None, None]
    out = top * (1.0 - fy) + bot * fy
    return ImageRaster(np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8))
