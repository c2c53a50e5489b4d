"""Image types and file IO.

Grayscale images are binary PGM (P5), colour overlays binary PPM (P6), both
through Pillow. Physical pixel size travels in a JSON sidecar next to the
image: ``{"s_xy_mm": 0.26}``. A sample directory looks like::

    image.pgm      unannotated grayscale frame
    image.json     {"s_xy_mm": ...}
    overlay.ppm    optional, same frame with the coloured dashed ellipse
    mask.pgm       optional, ground-truth head mask (0 / 255)
"""

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from utils.errors import InvalidFileFormat, InvalidParams, NonPositivePixelSize
from utils.geometry import Biometrics, Ellipse
from utils.raster import Contour, Mask

PathLike = Union[str, Path]

SIDECAR_NAME = 'image.json'


@dataclass(frozen=True)
class GrayImage:
    """Intensities in [0, 1], shape (height, width), with pixel size in mm."""
    data: np.ndarray
    s_xy: float

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2:
            raise InvalidParams(f'gray image must be 2-D, got shape {arr.shape}')
        if arr.size and (not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0):
            raise InvalidParams('gray intensities must lie in [0, 1]')
        _check_pixel_size(self.s_xy)
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, 'data', arr)
        object.__setattr__(self, 's_xy', float(self.s_xy))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class RgbImage:
    """8-bit colour image, shape (height, width, 3), with pixel size in mm."""
    data: np.ndarray
    s_xy: float

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise InvalidParams(f'rgb image must have shape (h, w, 3), got {arr.shape}')
        if arr.dtype != np.uint8:
            if arr.size and (arr.min() < 0 or arr.max() > 255):
                raise InvalidParams('rgb values must lie in [0, 255]')
            arr = arr.astype(np.uint8)
        _check_pixel_size(self.s_xy)
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, 'data', arr)
        object.__setattr__(self, 's_xy', float(self.s_xy))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @classmethod
    def from_gray(cls, img: GrayImage) -> 'RgbImage':
        levels = to_uint8(img.data)
        return cls(np.repeat(levels[:, :, None], 3, axis=2), img.s_xy)


def _check_pixel_size(s_xy) -> None:
    try:
        ok = math.isfinite(float(s_xy)) and float(s_xy) > 0
    except (TypeError, ValueError):
        ok = False
    if not ok:
        raise NonPositivePixelSize(f's_xy must be a positive number, got {s_xy!r}')


def to_uint8(values: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(values) * 255.0), 0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# Raw PNM
# ---------------------------------------------------------------------------

def _open(path: PathLike, mode: str) -> np.ndarray:
    try:
        with Image.open(path) as im:
            if im.format != 'PPM':
                raise InvalidFileFormat(f'{path}: expected a binary PGM/PPM file, got {im.format}')
            if im.mode != mode:
                raise InvalidFileFormat(f'{path}: expected 8-bit {"P5" if mode == "L" else "P6"}, got mode {im.mode}')
            return np.array(im)
    except (UnidentifiedImageError, OSError) as e:
        raise InvalidFileFormat(f'{path}: {e}') from e


def read_pgm(path: PathLike) -> np.ndarray:
    """8-bit grayscale array, shape (height, width)."""
    return _open(path, 'L')


def write_pgm(path: PathLike, values: np.ndarray) -> None:
    arr = np.asarray(values, dtype=np.uint8)
    Image.fromarray(arr).save(path, format='PPM')


def read_ppm(path: PathLike) -> np.ndarray:
    """8-bit RGB array, shape (height, width, 3)."""
    return _open(path, 'RGB')


def write_ppm(path: PathLike, values: np.ndarray) -> None:
    arr = np.asarray(values, dtype=np.uint8)
    Image.fromarray(arr).save(path, format='PPM')


# ---------------------------------------------------------------------------
# Sidecars and typed loaders
# ---------------------------------------------------------------------------

def sidecar_path(image_path: PathLike) -> Path:
    """``<stem>.json`` if present, otherwise ``image.json`` in the same directory."""
    image_path = Path(image_path)
    own = image_path.with_suffix('.json')
    if own.exists():
        return own
    return image_path.parent / SIDECAR_NAME


def read_sidecar(path: PathLike) -> float:
    data = read_json(path)
    if not isinstance(data, dict) or 's_xy_mm' not in data:
        raise InvalidFileFormat(f'{path}: sidecar must contain "s_xy_mm"')
    s_xy = data['s_xy_mm']
    _check_pixel_size(s_xy)
    return float(s_xy)


def write_sidecar(path: PathLike, s_xy: float) -> None:
    _check_pixel_size(s_xy)
    write_json(path, {'s_xy_mm': float(s_xy)})


def _resolve_pixel_size(image_path: PathLike, s_xy: Optional[float]) -> float:
    if s_xy is not None:
        _check_pixel_size(s_xy)
        return float(s_xy)
    sidecar = sidecar_path(image_path)
    if not sidecar.exists():
        raise InvalidFileFormat(f'{image_path}: no pixel size given and no sidecar at {sidecar}')
    return read_sidecar(sidecar)


def load_gray(path: PathLike, s_xy: Optional[float] = None) -> GrayImage:
    return GrayImage(read_pgm(path) / 255.0, _resolve_pixel_size(path, s_xy))


def save_gray(path: PathLike, img: GrayImage) -> None:
    write_pgm(path, to_uint8(img.data))


def load_rgb(path: PathLike, s_xy: Optional[float] = None) -> RgbImage:
    return RgbImage(read_ppm(path), _resolve_pixel_size(path, s_xy))


def save_rgb(path: PathLike, img: RgbImage) -> None:
    write_ppm(path, img.data)


def load_mask(path: PathLike) -> Mask:
    return Mask((read_pgm(path) > 127).astype(np.uint8))


def save_mask(path: PathLike, m: Mask) -> None:
    write_pgm(path, m.data * np.uint8(255))


def save_contour_csv(path: PathLike, contour: Contour) -> None:
    Path(path).write_text(contour.to_csv())


# ---------------------------------------------------------------------------
# JSON
# ---------------------------------------------------------------------------

def read_json(path: PathLike):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise InvalidFileFormat(f'{path}: {e}') from e


def write_json(path: PathLike, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + '\n')


def load_ellipse(path: PathLike) -> Ellipse:
    return Ellipse.from_dict(read_json(path))


def save_ellipse(path: PathLike, e: Ellipse) -> None:
    write_json(path, e.to_dict())


def save_biometrics(path: PathLike, bio: Biometrics) -> None:
    write_json(path, bio.to_dict())
