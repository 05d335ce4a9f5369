"""
Image I/O
8-bit RGB images from PNG (Pillow) and binary PPM (P6)
"""
import io
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List, Union

import numpy as np
from PIL import Image as PILImage

from utils.errors import ParseError, UsageError

logger = logging.getLogger(__name__)

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
ACCEPTED_EXTENSIONS = (".png", ".ppm")
_PPM_WHITESPACE = b" \t\n\r\x0b\x0c"

PathLike = Union[str, Path]


@dataclass
class Image:
    """8-bit RGB image, pixels stored row-major as [height, width, 3]"""

    width: int
    height: int
    pixels: np.ndarray

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise UsageError(f"Image dimensions must be positive, got {self.width}x{self.height}")
        self.pixels = np.ascontiguousarray(self.pixels, dtype=np.uint8)
        if self.pixels.shape != (self.height, self.width, 3):
            raise UsageError(
                f"Pixel buffer of shape {self.pixels.shape} does not match {self.width}x{self.height} RGB"
            )

    @classmethod
    def from_array(cls, pixels: np.ndarray) -> "Image":
        h, w = pixels.shape[:2]
        return cls(w, h, pixels)

    @classmethod
    def from_float(cls, chw: np.ndarray) -> "Image":
        """[3, H, W] floats in [0, 1] -> rounded, clamped 8-bit image"""
        hwc = np.clip(np.rint(np.asarray(chw, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
        return cls.from_array(hwc.transpose(1, 2, 0))

    def to_float(self, dtype=np.float32) -> np.ndarray:
        """[3, H, W] floats in [0, 1]"""
        return (self.pixels.transpose(2, 0, 1).astype(np.float64) / 255.0).astype(dtype)

    def crop(self, top: int, left: int, height: int, width: int) -> "Image":
        return Image(width, height, self.pixels[top:top + height, left:left + width])

    def mod_crop(self, scale: int) -> "Image":
        """Trim the bottom/right edges to a multiple of ``scale``"""
        h, w = self.height - self.height % scale, self.width - self.width % scale
        if h == 0 or w == 0:
            raise UsageError(f"Image {self.width}x{self.height} is smaller than scale {scale}")
        return self.crop(0, 0, h, w)


def _skip_ppm_space(data: bytes, pos: int) -> int:
    while pos < len(data):
        if data[pos:pos + 1] == b"#":
            end = data.find(b"\n", pos)
            pos = len(data) if end < 0 else end + 1
        elif data[pos] in _PPM_WHITESPACE:
            pos += 1
        else:
            break
    return pos


def _read_ppm_int(data: bytes, pos: int, field: str, path: str):
    pos = _skip_ppm_space(data, pos)
    start = pos
    while pos < len(data) and data[pos:pos + 1].isdigit():
        pos += 1
    if pos == start:
        if pos >= len(data):
            raise ParseError(f"PPM header truncated before {field}", pos, path)
        raise ParseError(f"PPM header expected {field}, found {data[pos:pos + 1]!r}", pos, path)
    return int(data[start:pos]), pos


def decode_ppm(data: bytes, path: str = "") -> Image:
    if data[:2] != b"P6":
        raise ParseError("Not a binary PPM (missing P6 magic)", 0, path)
    pos = 2
    width, pos = _read_ppm_int(data, pos, "width", path)
    height, pos = _read_ppm_int(data, pos, "height", path)
    maxval, pos = _read_ppm_int(data, pos, "maxval", path)
    if width < 1 or height < 1:
        raise ParseError(f"PPM dimensions must be positive, got {width}x{height}", pos, path)
    if not 0 < maxval < 256:
        raise ParseError(f"Only 8-bit PPM is supported, maxval {maxval}", pos, path)
    if pos >= len(data) or data[pos] not in _PPM_WHITESPACE:
        raise ParseError("PPM header must end with a single whitespace byte", pos, path)
    pos += 1
    expected = 3 * width * height
    payload = data[pos:pos + expected]
    if len(payload) < expected:
        raise ParseError(
            f"PPM pixel data truncated: {len(payload)} of {expected} bytes", pos + len(payload), path
        )
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    if maxval != 255:
        pixels = np.rint(pixels.astype(np.float64) * 255.0 / maxval).astype(np.uint8)
    return Image(width, height, pixels)


def _check_png_chunks(data: bytes, path: str):
    """Walk the chunk table so truncation is reported at its byte offset"""
    for i, (got, want) in enumerate(zip(data[:8], PNG_SIGNATURE)):
        if got != want:
            raise ParseError("Bad PNG signature", i, path)
    if len(data) < 8:
        raise ParseError("PNG signature truncated", len(data), path)
    pos = 8
    while True:
        if pos + 8 > len(data):
            raise ParseError("PNG chunk header truncated", pos, path)
        length, kind = struct.unpack(">I4s", data[pos:pos + 8])
        end = pos + 12 + length
        if end > len(data):
            raise ParseError(f"PNG {kind.decode('latin-1')} chunk truncated", len(data), path)
        if kind == b"IEND":
            return
        pos = end


def decode_png(data: bytes, path: str = "") -> Image:
    _check_png_chunks(data, path)
    try:
        with PILImage.open(io.BytesIO(data)) as im:
            rgb = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except (OSError, ValueError, SyntaxError) as exc:
        raise ParseError(f"PNG decode failed: {exc}", 8, path) from exc
    return Image.from_array(rgb)


def load_image(path: PathLike) -> Image:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise UsageError(f"Cannot read image {path}: {exc}") from exc
    if data.startswith(b"P6"):
        return decode_ppm(data, str(path))
    if data[:1] == PNG_SIGNATURE[:1]:
        return decode_png(data, str(path))
    raise ParseError("Unrecognized image format (expected PNG or P6 PPM)", 0, str(path))


def save_image(path: PathLike, img: Image):
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix not in ACCEPTED_EXTENSIONS:
        raise UsageError(f"Unsupported output extension {suffix!r}; use one of {ACCEPTED_EXTENSIONS}")
    path.parent.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray(img.pixels).save(path, format="PNG" if suffix == ".png" else "PPM")


def list_images(folder: PathLike) -> List[Path]:
    """Accepted image files directly inside ``folder``, sorted by name"""
    folder = Path(folder)
    return sorted(p for p in folder.iterdir() if p.is_file() and p.suffix.lower() in ACCEPTED_EXTENSIONS)
