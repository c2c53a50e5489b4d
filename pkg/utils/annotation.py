"""
Ground-truth recovery from annotated frames.

The clinical frames carry the sonographer's ellipse as a coloured dashed line
over a grayscale ultrasound image. The annotation is found as the chromatic
pixels, an ellipse is fitted to them and rasterized into the head mask. The
module also implements the crop-and-downscale preprocessing step.
"""

import logging
import math
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from utils.errors import CropOutOfBounds, DegenerateConfiguration, InvalidParams, NoAnnotationFound
from utils.geometry import MIN_FIT_POINTS, Ellipse, fit_ellipse, sample_points
from utils.imageio import GrayImage, RgbImage
from utils.raster import Mask, rasterize_ellipse

logger = logging.getLogger(__name__)

DEFAULT_CHROMA_THRESHOLD = 30
DEFAULT_DASH = (8, 6)
OVERLAY_SAMPLES = 720
YELLOW = (255, 255, 0)

Crop = Tuple[int, int, int, int]  # x0, y0, width, height


def find_annotation_pixels(img: RgbImage,
                           chroma_threshold: float = DEFAULT_CHROMA_THRESHOLD,
                           key_color: Optional[Sequence[int]] = None,
                           tolerance: int = 0) -> np.ndarray:
    """(x, y) of overlay pixels in scan order, shape (n, 2).

    By default any pixel with max(r, g, b) - min(r, g, b) above the threshold
    counts (the ultrasound itself has r = g = b). With ``key_color`` only
    pixels within ``tolerance`` of that colour on every channel count.
    """
    rgb = img.data.astype(np.int16)
    if key_color is not None:
        key = np.asarray(key_color, dtype=np.int16).reshape(1, 1, 3)
        selected = np.abs(rgb - key).max(axis=2) <= tolerance
    else:
        chroma = rgb.max(axis=2) - rgb.min(axis=2)
        selected = chroma > chroma_threshold
    ys, xs = np.nonzero(selected)
    if len(xs) == 0:
        raise NoAnnotationFound('no annotation-coloured pixels in image')
    return np.column_stack([xs, ys])


def extract_ground_truth(img: RgbImage,
                         chroma_threshold: float = DEFAULT_CHROMA_THRESHOLD,
                         key_color: Optional[Sequence[int]] = None,
                         tolerance: int = 0) -> Tuple[Ellipse, Mask]:
    """Fit the annotated ellipse and rasterize its mask at the image size."""
    pixels = find_annotation_pixels(img, chroma_threshold, key_color, tolerance)
    if len(pixels) < MIN_FIT_POINTS:
        raise DegenerateConfiguration(
            f'only {len(pixels)} annotation pixels, need {MIN_FIT_POINTS} to fit an ellipse')
    ellipse = fit_ellipse(pixels)
    logger.debug('annotation: %d pixels -> %s', len(pixels), ellipse)
    return ellipse, rasterize_ellipse(ellipse, img.width, img.height)


def draw_overlay(base: GrayImage, e: Ellipse,
                 color: Sequence[int] = YELLOW,
                 dash: Optional[Tuple[int, int]] = DEFAULT_DASH,
                 samples: int = OVERLAY_SAMPLES) -> RgbImage:
    """Render ``e`` as a 1-px dashed line over ``base``.

    ``samples`` parametric points are taken; with a dash pattern (on, off)
    point k is drawn when k mod (on + off) < on. Each drawn point sets its
    nearest pixel. ``dash=None`` draws a solid outline.
    """
    rgb = RgbImage.from_gray(base).data.copy()
    points = sample_points(e, samples)
    keep = np.ones(samples, dtype=bool)
    if dash is not None:
        on, off = dash
        keep = (np.arange(samples) % (on + off)) < on
    px = np.rint(points[keep]).astype(int)
    inside = (px[:, 0] >= 0) & (px[:, 0] < base.width) & (px[:, 1] >= 0) & (px[:, 1] < base.height)
    px = px[inside]
    rgb[px[:, 1], px[:, 0]] = np.asarray(color, dtype=np.uint8)
    return RgbImage(rgb, base.s_xy)


# ---------------------------------------------------------------------------
# Crop and scale
# ---------------------------------------------------------------------------

def _check_crop(crop: Optional[Crop], width: int, height: int) -> Crop:
    if crop is None:
        return (0, 0, width, height)
    x0, y0, w, h = (int(v) for v in crop)
    if w < 1 or h < 1 or x0 < 0 or y0 < 0 or x0 + w > width or y0 + h > height:
        raise CropOutOfBounds(f'crop {crop} outside {width}x{height} image')
    return (x0, y0, w, h)


def scaled_size(n: int, factor: float) -> int:
    return max(1, math.ceil(n * factor - 1e-9))


def crop_and_scale(img: GrayImage, crop: Optional[Crop] = None, factor: float = 0.5) -> GrayImage:
    """Crop to ``(x0, y0, width, height)`` and resample by ``factor`` in (0, 1].

    Factor 0.5 averages 2x2 blocks (edge blocks average the pixels that
    exist); other factors interpolate bilinearly. Pixel size grows by
    1 / factor.
    """
    if not 0.0 < factor <= 1.0:
        raise InvalidParams(f'scale factor must be in (0, 1], got {factor}')
    x0, y0, w, h = _check_crop(crop, img.width, img.height)
    region = img.data[y0:y0 + h, x0:x0 + w]
    out_w, out_h = scaled_size(w, factor), scaled_size(h, factor)

    if factor == 1.0:
        resampled = region.copy()
    elif factor == 0.5:
        resampled = _box_half(region)
    else:
        rows = np.clip((np.arange(out_h) + 0.5) / factor - 0.5, 0, h - 1)
        cols = np.clip((np.arange(out_w) + 0.5) / factor - 0.5, 0, w - 1)
        rr, cc = np.meshgrid(rows, cols, indexing='ij')
        resampled = ndimage.map_coordinates(region, [rr, cc], order=1, mode='nearest')
    return GrayImage(np.clip(resampled, 0.0, 1.0), img.s_xy / factor)


def _box_half(region: np.ndarray) -> np.ndarray:
    h, w = region.shape
    padded = np.full((h + h % 2, w + w % 2), np.nan)
    padded[:h, :w] = region
    blocks = padded.reshape(padded.shape[0] // 2, 2, padded.shape[1] // 2, 2)
    return np.nanmean(blocks, axis=(1, 3))


def transform_ellipse(e: Ellipse, crop: Optional[Crop], factor: float) -> Ellipse:
    """Ellipse coordinates after :func:`crop_and_scale` with the same arguments."""
    x0, y0 = (0, 0) if crop is None else (crop[0], crop[1])
    return Ellipse((e.cx - x0 + 0.5) * factor - 0.5,
                   (e.cy - y0 + 0.5) * factor - 0.5,
                   e.a * factor, e.b * factor, e.alpha)
