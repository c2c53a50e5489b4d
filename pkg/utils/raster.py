"""Binary mask operations: ellipse rasterization, connected components,
Moore-neighbour contour tracing and Dice overlap."""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy import ndimage

from utils.errors import DimensionMismatch, EmptyMask, InvalidParams
from utils.geometry import Ellipse

logger = logging.getLogger(__name__)

# Moore neighbourhood in clockwise order on screen (y grows downwards), starting west.
_MOORE_OFFSETS = ((-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1))
_DIRECTION_INDEX = {offset: i for i, offset in enumerate(_MOORE_OFFSETS)}
_EIGHT_CONNECTED = np.ones((3, 3), dtype=int)


@dataclass(frozen=True)
class Mask:
    """Binary label map, 1 = head, 0 = background. ``data`` has shape (height, width)."""
    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 2:
            raise InvalidParams(f'mask must be 2-D, got shape {arr.shape}')
        if arr.dtype != np.uint8:
            if arr.size and not np.isin(arr, (0, 1)).all():
                raise InvalidParams('mask values must be 0 or 1')
            arr = arr.astype(np.uint8)
        elif arr.size and arr.max() > 1:
            raise InvalidParams('mask values must be 0 or 1')
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, 'data', arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape

    def count(self) -> int:
        return int(self.data.sum())

    @classmethod
    def zeros(cls, width: int, height: int) -> 'Mask':
        return cls(np.zeros((height, width), dtype=np.uint8))

    def __eq__(self, other):
        return isinstance(other, Mask) and np.array_equal(self.data, other.data)

    def __hash__(self):
        return hash((self.data.shape, self.data.tobytes()))


@dataclass(frozen=True)
class Contour:
    """Closed boundary loop of pixel-centre coordinates, shape (n, 2) as (x, y)."""
    points: np.ndarray

    def __len__(self):
        return len(self.points)

    def as_list(self) -> List[Tuple[int, int]]:
        return [(int(x), int(y)) for x, y in self.points]

    def to_csv(self) -> str:
        return ''.join(f'{int(x)},{int(y)}\n' for x, y in self.points)


@dataclass
class Components:
    """8-connected components: ``labels`` grid plus (id, size) sorted by size descending."""
    labels: np.ndarray
    sizes: List[Tuple[int, int]] = field(default_factory=list)

    def largest(self) -> Optional[int]:
        return self.sizes[0][0] if self.sizes else None


def rasterize_ellipse(e: Ellipse, width: int, height: int,
                      origin: Tuple[float, float] = (0.0, 0.0)) -> Mask:
    """Pixels whose centres lie inside or on ``e``.

    ``origin`` is the coordinate of the top-left pixel centre; a non-zero
    origin rasterizes into a window of a larger plane.
    """
    if width < 1 or height < 1:
        raise InvalidParams(f'grid must be at least 1x1, got {width}x{height}')
    x = np.arange(width, dtype=float) + origin[0] - e.cx
    y = np.arange(height, dtype=float) + origin[1] - e.cy
    dx, dy = np.meshgrid(x, y)
    c, s = math.cos(e.alpha), math.sin(e.alpha)
    u = (dx * c + dy * s) / e.a
    v = (-dx * s + dy * c) / e.b
    return Mask((u * u + v * v <= 1.0).astype(np.uint8))


def connected_components(m: Mask) -> Components:
    """Label 8-connected foreground regions; ids follow raster-scan order of first pixel."""
    labels, count = ndimage.label(m.data, structure=_EIGHT_CONNECTED)
    if count == 0:
        return Components(labels=labels, sizes=[])
    counts = np.bincount(labels.ravel(), minlength=count + 1)
    sizes = [(label, int(counts[label])) for label in range(1, count + 1)]
    # stable sort keeps scan order among equal sizes
    sizes.sort(key=lambda item: -item[1])
    return Components(labels=labels, sizes=sizes)


def largest_component(m: Mask) -> Mask:
    components = connected_components(m)
    if not components.sizes:
        raise EmptyMask('mask has no foreground pixels')
    return Mask((components.labels == components.largest()).astype(np.uint8))


def extract_contour(m: Mask) -> Contour:
    """Outer boundary of the largest component.

    Moore-neighbour tracing, clockwise on screen, starting at the first pixel
    in raster order and stopping by Jacob's criterion (start pixel re-entered
    from the initial backtrack direction).
    """
    region = largest_component(m).data
    padded = np.pad(region, 1)
    ys, xs = np.nonzero(padded)
    start = (int(xs[0]), int(ys[0]))
    start_back = (start[0] - 1, start[1])

    contour = [start]
    state = (start, start_back)
    first_move = None
    # each boundary pixel is entered at most once per incoming direction
    limit = 8 * int(region.sum()) + 8
    for _ in range(limit):
        state = _next_boundary_pixel(padded, *state)
        if state is None:
            break
        if state[0] == start and state[1] == start_back:
            break
        # one-pixel-wide strands re-enter the start from another side;
        # repeating the first move closes the loop there
        if state == first_move:
            if contour[-1] == start:
                contour.pop()
            break
        if first_move is None:
            first_move = state
        contour.append(state[0])
    else:
        logger.warning('contour tracing hit its step limit at %d points', len(contour))

    points = np.array(contour, dtype=int) - 1
    return Contour(points=points)


def _next_boundary_pixel(padded: np.ndarray, current, back):
    cx, cy = current
    first = _DIRECTION_INDEX[(back[0] - cx, back[1] - cy)]
    prev = back
    for k in range(1, 9):
        dx, dy = _MOORE_OFFSETS[(first + k) % 8]
        candidate = (cx + dx, cy + dy)
        if padded[candidate[1], candidate[0]]:
            return candidate, prev
        prev = candidate
    return None


def boundary_points(m: Mask) -> np.ndarray:
    """Pixel-edge midpoints between contour pixels and their background 4-neighbours.

    These lie on the digitized region's outline rather than half a pixel inside
    it, so an ellipse fitted to them is not shrunk.
    """
    contour = extract_contour(m)
    region = np.pad(largest_component(m).data, 1)
    points = []
    seen = set()
    for x, y in contour.points:
        if (x, y) in seen:
            continue
        seen.add((x, y))
        for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            if not region[y + 1 + dy, x + 1 + dx]:
                points.append((x + 0.5 * dx, y + 0.5 * dy))
    return np.array(points, dtype=float)


def dice(m1: Mask, m2: Mask) -> float:
    """2|A n B| / (|A| + |B|); two empty masks agree perfectly (1.0)."""
    if m1.shape != m2.shape:
        raise DimensionMismatch(f'mask shapes differ: {m1.shape} vs {m2.shape}')
    total = int(m1.data.sum()) + int(m2.data.sum())
    if total == 0:
        return 1.0
    overlap = int(np.logical_and(m1.data, m2.data).sum())
    return 2.0 * overlap / total


def ellipse_dice(e1: Ellipse, e2: Ellipse, margin: int = 2) -> float:
    """Dice of two rasterized ellipses on a window that covers both."""
    boxes = (e1.bounding_box(), e2.bounding_box())
    x0 = math.floor(min(b[0] for b in boxes)) - margin
    y0 = math.floor(min(b[1] for b in boxes)) - margin
    x1 = math.ceil(max(b[2] for b in boxes)) + margin
    y1 = math.ceil(max(b[3] for b in boxes)) + margin
    width, height = x1 - x0 + 1, y1 - y0 + 1
    origin = (float(x0), float(y0))
    return dice(rasterize_ellipse(e1, width, height, origin),
                rasterize_ellipse(e2, width, height, origin))
