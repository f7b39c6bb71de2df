"""Reading and writing the 8-bit image formats used by the pipeline.

PGM (P5) and PPM (P6) are parsed and written directly; PNG goes through
Pillow since it is pure plumbing. Everything is limited to 8 bits per
sample, grayscale or RGB.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


class ImageFormatError(ValueError):
    """Unsupported or malformed image format."""


@dataclass
class ImageBuffer:
    """8-bit image: uint8 samples, row-major, interleaved channels."""

    pixels: np.ndarray  # (height, width, channels)

    def __post_init__(self):
        self.pixels = np.ascontiguousarray(self.pixels, dtype=np.uint8)
        if self.pixels.ndim == 2:
            self.pixels = self.pixels[:, :, None]
        if self.pixels.ndim != 3 or self.pixels.shape[2] not in (1, 3):
            raise ValueError(
                f"pixels must have shape (height, width, 1 or 3), got {self.pixels.shape}"
            )

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]


def _read_pnm_token(f) -> bytes:
    """Next whitespace-delimited token, skipping '#' comment lines."""
    token = b""
    while True:
        c = f.read(1)
        if c == b"":
            raise IOError("truncated PNM header")
        if c == b"#":
            while c not in (b"\n", b""):
                c = f.read(1)
            continue
        if c.isspace():
            if token:
                return token
            continue
        token += c


def _read_pnm(f, magic: bytes) -> ImageBuffer:
    channels = 1 if magic == b"P5" else 3
    try:
        width = int(_read_pnm_token(f))
        height = int(_read_pnm_token(f))
        maxval = int(_read_pnm_token(f))
    except ValueError as e:
        raise ImageFormatError(f"malformed PNM header: {e}") from e
    if width < 1 or height < 1:
        raise ImageFormatError(f"bad PNM dimensions {width}x{height}")
    if maxval != 255:
        raise ImageFormatError(f"only maxval 255 PNM is supported, got {maxval}")
    n = width * height * channels
    data = f.read(n)
    if len(data) != n:
        raise IOError(f"truncated PNM pixel data: wanted {n} bytes, got {len(data)}")
    pixels = np.frombuffer(data, dtype=np.uint8).reshape(height, width, channels)
    return ImageBuffer(pixels.copy())


def _read_png(path: Path) -> ImageBuffer:
    with Image.open(path) as im:
        if im.mode == "L":
            arr = np.asarray(im)[:, :, None]
        elif im.mode == "RGB":
            arr = np.asarray(im)
        else:
            raise ImageFormatError(
                f"only 8-bit grayscale/RGB PNG is supported, got mode {im.mode!r}"
            )
    return ImageBuffer(arr)


def read_image(path) -> ImageBuffer:
    """Decode a PGM, PPM, or PNG file, dispatching on its magic bytes."""
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.read(2)
        if magic in (b"P5", b"P6"):
            return _read_pnm(f, magic)
        rest = magic + f.read(len(PNG_SIGNATURE) - 2)
    if rest == PNG_SIGNATURE:
        return _read_png(path)
    raise ImageFormatError(f"unrecognized image format in {path}")


def write_image(img: ImageBuffer, path, format: str | None = None) -> None:
    """Encode to PGM/PPM/PNG; the format defaults to the file extension."""
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    if fmt == "pgm":
        if img.channels != 1:
            raise ValueError("PGM holds grayscale only; use PPM or PNG for color")
        with open(path, "wb") as f:
            f.write(b"P5\n%d %d\n255\n" % (img.width, img.height))
            f.write(img.pixels.tobytes())
    elif fmt == "ppm":
        if img.channels != 3:
            raise ValueError("PPM holds RGB only; use PGM or PNG for grayscale")
        with open(path, "wb") as f:
            f.write(b"P6\n%d %d\n255\n" % (img.width, img.height))
            f.write(img.pixels.tobytes())
    elif fmt == "png":
        arr = img.pixels[:, :, 0] if img.channels == 1 else img.pixels
        Image.fromarray(arr).save(path, format="PNG")
    else:
        raise ImageFormatError(f"unsupported output format {fmt!r}")
