"""The measurement chain shared by the CLI and the API:
mask -> boundary points -> ellipse fit -> HC/BPD, optionally preceded by the
segmentation network."""

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from utils.errors import CaliperError, InvalidParams
from utils.geometry import BPD_DIAMETER, Biometrics, Ellipse, fit_ellipse, measure
from utils.imageio import GrayImage
from utils.raster import Mask, boundary_points
from utils.segnet import NetworkParams, predict

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Measurement:
    ellipse: Ellipse
    biometrics: Biometrics

    def to_dict(self) -> Dict:
        return {'ellipse': self.ellipse.to_dict(), 'biometrics': self.biometrics.to_dict()}


def ellipse_from_mask(mask: Mask) -> Ellipse:
    """Fit the outline of the largest head region."""
    return fit_ellipse(boundary_points(mask))


def measure_mask(mask: Mask, s_xy: float, bpd_convention: str = BPD_DIAMETER) -> Measurement:
    e = ellipse_from_mask(mask)
    return Measurement(e, measure(e, s_xy, bpd_convention))


@dataclass
class Prediction:
    name: str
    probability: np.ndarray
    mask: Mask
    measurement: Optional[Measurement] = None
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.measurement is not None

    def to_dict(self) -> Dict:
        out = {'name': self.name, 'error': self.error}
        if self.measurement:
            out.update(self.measurement.to_dict())
        return out


def infer_image(params: NetworkParams, img: GrayImage, name: str = '',
                bpd_convention: str = BPD_DIAMETER) -> Prediction:
    """Segment ``img`` and measure the result.

    Shape errors propagate; a mask that cannot be fitted (empty, degenerate)
    is reported on the prediction instead.
    """
    prob, mask = predict(params, img)
    try:
        return Prediction(name, prob, mask, measure_mask(mask, img.s_xy, bpd_convention))
    except CaliperError as e:
        logger.warning('%s: no measurement (%s)', name or 'image', e.describe())
        return Prediction(name, prob, mask, error=e.describe())


@dataclass
class BenchReport:
    frames: int
    warmup: int
    mean_ms: float
    p95_ms: float
    fps: float
    failures: int
    latencies_ms: List[float] = field(default_factory=list, repr=False)

    def to_dict(self) -> Dict:
        return {
            'frames': self.frames,
            'warmup': self.warmup,
            'mean_latency_ms': self.mean_ms,
            'p95_latency_ms': self.p95_ms,
            'fps': self.fps,
            'failures': self.failures,
            'methodology': ('wall-clock time per frame for predict -> contour -> fit -> measure, '
                            f'single thread, after {self.warmup} untimed warm-up frames; '
                            'fps = 1000 / mean latency; p95 is the linearly interpolated 95th '
                            'percentile and can fall below the mean when a few frames are much slower'),
        }


def bench(params: NetworkParams, images: Sequence[GrayImage], frames: int = 100, warmup: int = 10,
          bpd_convention: str = BPD_DIAMETER,
          clock: Callable[[], float] = time.perf_counter) -> BenchReport:
    """Time the full chain; images are cycled when fewer than ``frames``."""
    if not images:
        raise InvalidParams('bench needs at least one image')
    if frames < 1 or warmup < 0:
        raise InvalidParams(f'frames must be positive and warm-up non-negative, got {frames}, {warmup}')
    for i in range(warmup):
        infer_image(params, images[i % len(images)], bpd_convention=bpd_convention)

    latencies = []
    failures = 0
    for i in range(frames):
        img = images[i % len(images)]
        start = clock()
        result = infer_image(params, img, bpd_convention=bpd_convention)
        latencies.append((clock() - start) * 1000.0)
        failures += not result.ok
    mean_ms = float(np.mean(latencies))
    return BenchReport(frames, warmup, mean_ms, float(np.percentile(latencies, 95)),
                       1000.0 / mean_ms if mean_ms > 0 else float('inf'), failures, latencies)
