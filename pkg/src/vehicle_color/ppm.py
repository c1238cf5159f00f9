"""Binary PPM (P6, maxval 255) reading and writing.

Arrays are channel-first ``(3, H, W)`` uint8 to match the tensor layout.
Non-PPM files are decoded through Pillow when it is installed.
"""

import os

import numpy as np

from .errors import ImageDecodeError


def _tokens(data):
    """Yield (token, end_offset) for the first four header fields."""
    pos = 0
    found = 0
    while found < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageDecodeError("truncated PPM header")
        found += 1
        yield data[start:pos], pos


def decode_ppm(data):
    fields = []
    end = 0
    for tok, end in _tokens(data):
        fields.append(tok)
    magic, width, height, maxval = fields
    if magic != b"P6":
        raise ImageDecodeError(f"not a binary PPM (magic {magic!r})")
    width, height, maxval = int(width), int(height), int(maxval)
    if maxval != 255 or width < 1 or height < 1:
        raise ImageDecodeError(f"unsupported PPM {width}x{height} maxval {maxval}")
    # Exactly one whitespace byte separates the header from the raster.
    raster = data[end + 1 : end + 1 + width * height * 3]
    if len(raster) != width * height * 3:
        raise ImageDecodeError("truncated PPM raster")
    hwc = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, 3)
    return np.ascontiguousarray(hwc.transpose(2, 0, 1))


def encode_ppm(pixels):
    pixels = np.asarray(pixels)
    if pixels.ndim != 3 or pixels.shape[0] != 3:
        raise ValueError(f"expected (3, H, W) pixels, got {pixels.shape}")
    hwc = np.clip(np.rint(pixels), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    header = f"P6\n{hwc.shape[1]} {hwc.shape[0]}\n255\n".encode("ascii")
    return header + np.ascontiguousarray(hwc).tobytes()


def write_ppm(path, pixels):
    with open(path, "wb") as fh:
        fh.write(encode_ppm(pixels))


def read_image(path):
    """Decode ``path`` into (3, H, W) uint8 RGB."""
    path = os.fspath(path)
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise ImageDecodeError(f"{path}: {exc.strerror}") from exc
    if data[:2] == b"P6":
        try:
            return decode_ppm(data)
        except (ValueError, ImageDecodeError) as exc:
            raise ImageDecodeError(f"{path}: {exc}") from exc
    try:
        from PIL import Image as PILImage
    except ImportError:
        raise ImageDecodeError(
            f"{path}: not a PPM file and Pillow is not installed"
        ) from None
    try:
        with PILImage.open(path) as im:
            hwc = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except Exception as exc:
        raise ImageDecodeError(f"{path}: {exc}") from exc
    return np.ascontiguousarray(hwc.transpose(2, 0, 1))
