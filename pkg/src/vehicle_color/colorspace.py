"""RGB to HSV / CIE XYZ / CIE Lab conversion with every channel scaled to [0, 255].

Scaling maps (applied after the textbook conversion):

* HSV -- H in degrees times 255/360, S and V in [0, 1] times 255.
* XYZ -- each of X, Y, Z times 255 over the D65 white reference
  (95.047, 100.0, 108.883).
* Lab -- L* times 255/100, a* and b* shifted by +128.

RGB input is sRGB with D65 white. Achromatic pixels get hue 0.
"""

import enum
from dataclasses import dataclass

import numpy as np

from .errors import EmptyInputError, ShapeError, UnsupportedConversionError

WHITE_D65 = np.array([95.047, 100.0, 108.883])

SRGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)

# Values needing more than this much clamping indicate a conversion bug.
CLAMP_SLACK = 0.5


class ColorSpace(enum.Enum):
    RGB = "rgb"
    HSV = "hsv"
    CIELab = "lab"
    CIEXYZ = "xyz"

    @property
    def header(self):
        """Display name used in report tables."""
        return {"rgb": "RGB", "hsv": "HSV", "lab": "CIE Lab", "xyz": "CIE XYZ"}[
            self.value
        ]

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower().replace(" ", "").replace("cie", "")
        for space in cls:
            if key in (space.value, space.name.lower().replace("cie", "")):
                return space
        raise UnsupportedConversionError(f"unknown color space {name!r}")


@dataclass
class Image:
    """A (3, H, W) pixel array in ``space`` with channels in [0, 255]."""

    pixels: np.ndarray
    space: ColorSpace = ColorSpace.RGB

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels)
        if self.pixels.ndim != 3 or self.pixels.shape[0] != 3:
            raise ShapeError(f"image pixels must be (3, H, W), got {self.pixels.shape}")

    @property
    def shape(self):
        return self.pixels.shape


def _srgb_to_linear(c):
    c = c / 255.0
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def rgb_to_xyz(rgb):
    """sRGB in [0, 255] (channel axis -3) to unscaled XYZ with Y in [0, 100]."""
    lin = _srgb_to_linear(np.asarray(rgb, dtype=np.float64))
    return np.einsum("ij,...jhw->...ihw", SRGB_TO_XYZ * 100.0, lin)


def _lab_f(t):
    delta = 6.0 / 29.0
    return np.where(t > delta**3, np.cbrt(t), t / (3 * delta**2) + 4.0 / 29.0)


def xyz_to_lab(xyz):
    """Unscaled XYZ (channel axis -3) to unscaled L*, a*, b*."""
    xyz = np.asarray(xyz, dtype=np.float64)
    f = _lab_f(xyz / WHITE_D65[:, None, None])
    fx, fy, fz = f[..., 0, :, :], f[..., 1, :, :], f[..., 2, :, :]
    return np.stack([116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)], axis=-3)


def rgb_to_hsv(rgb):
    """RGB in [0, 255] to H in degrees, S and V in [0, 1]."""
    rgb = np.asarray(rgb, dtype=np.float64) / 255.0
    r, g, b = rgb[..., 0, :, :], rgb[..., 1, :, :], rgb[..., 2, :, :]
    cmax = rgb.max(axis=-3)
    cmin = rgb.min(axis=-3)
    chroma = cmax - cmin
    safe = np.where(chroma > 0, chroma, 1.0)
    hue = np.select(
        [chroma == 0, cmax == r, cmax == g],
        [0.0, np.mod((g - b) / safe, 6.0), (b - r) / safe + 2.0],
        default=(r - g) / safe + 4.0,
    )
    sat = np.where(cmax > 0, chroma / np.where(cmax > 0, cmax, 1.0), 0.0)
    return np.stack([hue * 60.0, sat, cmax], axis=-3)


def convert_array(rgb, target, clip=True):
    """Convert raw RGB pixels (channel axis -3) into ``target`` scaled to [0, 255].

    With ``clip=False`` the scaled values are returned unclamped so callers
    can check how far outside the range they fall.
    """
    target = ColorSpace.parse(target)
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim < 3 or rgb.shape[-3] != 3:
        raise ShapeError(f"expected a channel axis of 3 at -3, got {rgb.shape}")
    if target is ColorSpace.RGB:
        return rgb.copy()
    if target is ColorSpace.HSV:
        scale = np.array([255.0 / 360.0, 255.0, 255.0])
        out = rgb_to_hsv(rgb) * scale[:, None, None]
    elif target is ColorSpace.CIEXYZ:
        out = rgb_to_xyz(rgb) * (255.0 / WHITE_D65)[:, None, None]
    else:
        lab = xyz_to_lab(rgb_to_xyz(rgb))
        scale = np.array([255.0 / 100.0, 1.0, 1.0])
        shift = np.array([0.0, 128.0, 128.0])
        out = lab * scale[:, None, None] + shift[:, None, None]
    if clip:
        out = np.clip(out, 0.0, 255.0)
    return out


def convert(src, target):
    """Convert an RGB :class:`Image` into ``target``; RGB to RGB is the identity."""
    target = ColorSpace.parse(target)
    if src.space is not ColorSpace.RGB:
        raise UnsupportedConversionError(
            f"only RGB images can be converted, got {src.space.value}"
        )
    if target is ColorSpace.RGB:
        return Image(src.pixels, ColorSpace.RGB)
    return Image(convert_array(src.pixels, target), target)


def mean_image(images):
    """Per-pixel, per-channel mean of same-shaped, same-space images (float64)."""
    images = list(images)
    if not images:
        raise EmptyInputError("mean_image needs at least one image")
    first = images[0]
    total = np.zeros(first.shape, dtype=np.float64)
    for img in images:
        if img.shape != first.shape or img.space is not first.space:
            raise ShapeError(
                f"mixed images: {img.shape}/{img.space.value} vs "
                f"{first.shape}/{first.space.value}"
            )
        total += img.pixels
    return total / len(images)
