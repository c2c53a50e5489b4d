"""
Ellipse geometry: conic/geometric conversion, direct least-squares fitting,
the Ramanujan perimeter and the HC/BPD biometric formulas.

All functions are pure and safe to call from any thread.
"""

import cmath
import logging
import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from utils.errors import (
    DegenerateConfiguration,
    InvalidParams,
    NonPositivePixelSize,
    NotAnEllipse,
    TooFewPoints,
)

logger = logging.getLogger(__name__)

BPD_DIAMETER = 'diameter'
BPD_RADIUS = 'radius'
BPD_CONVENTIONS = (BPD_DIAMETER, BPD_RADIUS)

MIN_FIT_POINTS = 6

# Inverse of the 3x3 block of the ellipse constraint matrix (4AC - B^2 = 1).
_C1_INV = np.array([[0.0, 0.0, 0.5],
                    [0.0, -1.0, 0.0],
                    [0.5, 0.0, 0.0]])


@dataclass(frozen=True)
class Ellipse:
    """Geometric ellipse in pixel units.

    ``a`` and ``b`` are semi-axis radii, ``alpha`` the counterclockwise angle
    from +x to the major axis. Construction normalizes the representation:
    a >= b, alpha in [0, pi), and circles report alpha = 0.
    """
    cx: float
    cy: float
    a: float
    b: float
    alpha: float = 0.0

    def __post_init__(self):
        cx, cy, a, b, alpha = (float(v) for v in (self.cx, self.cy, self.a, self.b, self.alpha))
        if not all(math.isfinite(v) for v in (cx, cy, a, b, alpha)):
            raise InvalidParams(f'non-finite ellipse parameters {(cx, cy, a, b, alpha)}')
        if a <= 0 or b <= 0:
            raise InvalidParams(f'ellipse radii must be positive, got a={a}, b={b}')
        if b > a:
            a, b = b, a
            alpha += math.pi / 2
        alpha = _normalize_angle(alpha)
        if a == b:
            alpha = 0.0
        object.__setattr__(self, 'cx', cx)
        object.__setattr__(self, 'cy', cy)
        object.__setattr__(self, 'a', a)
        object.__setattr__(self, 'b', b)
        object.__setattr__(self, 'alpha', alpha)

    def to_dict(self) -> Dict[str, float]:
        return {'cx': self.cx, 'cy': self.cy, 'a': self.a, 'b': self.b, 'alpha': self.alpha}

    @classmethod
    def from_dict(cls, data: Dict) -> 'Ellipse':
        try:
            return cls(data['cx'], data['cy'], data['a'], data['b'], data.get('alpha', 0.0))
        except (KeyError, TypeError) as e:
            raise InvalidParams(f'malformed ellipse object: {data!r}') from e

    def translated(self, dx: float, dy: float) -> 'Ellipse':
        return Ellipse(self.cx + dx, self.cy + dy, self.a, self.b, self.alpha)

    def bounding_box(self) -> Tuple[float, float, float, float]:
        """Axis-aligned extent as (x_min, y_min, x_max, y_max)."""
        c, s = math.cos(self.alpha), math.sin(self.alpha)
        half_w = math.hypot(self.a * c, self.b * s)
        half_h = math.hypot(self.a * s, self.b * c)
        return (self.cx - half_w, self.cy - half_h, self.cx + half_w, self.cy + half_h)


@dataclass(frozen=True)
class ConicCoefficients:
    """Coefficients of A x^2 + B xy + C y^2 + D x + E y + F = 0."""
    A: float
    B: float
    C: float
    D: float
    E: float
    F: float

    def as_array(self) -> np.ndarray:
        return np.array([self.A, self.B, self.C, self.D, self.E, self.F], dtype=float)

    @classmethod
    def from_array(cls, values: Sequence[float]) -> 'ConicCoefficients':
        return cls(*(float(v) for v in values))

    def discriminant(self) -> float:
        return self.B * self.B - 4.0 * self.A * self.C

    def normalized(self) -> 'ConicCoefficients':
        """Scale so that 4AC - B^2 = 1."""
        k = -self.discriminant()
        if k <= 0:
            raise NotAnEllipse(f'B^2 - 4AC = {-k} is not negative')
        return ConicCoefficients.from_array(self.as_array() / math.sqrt(k))

    def unit_norm(self) -> 'ConicCoefficients':
        v = self.as_array()
        return ConicCoefficients.from_array(v / np.linalg.norm(v))

    def evaluate(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return (self.A * x * x + self.B * x * y + self.C * y * y
                + self.D * x + self.E * y + self.F)


@dataclass(frozen=True)
class Biometrics:
    """Head circumference and biparietal diameter in millimeters."""
    hc_mm: float
    bpd_mm: float

    def __post_init__(self):
        if not (self.hc_mm > 0 and self.bpd_mm > 0):
            raise InvalidParams(f'biometrics must be positive, got {self.hc_mm}, {self.bpd_mm}')

    def to_dict(self) -> Dict[str, float]:
        return {'hc_mm': self.hc_mm, 'bpd_mm': self.bpd_mm}

    @classmethod
    def from_dict(cls, data: Dict) -> 'Biometrics':
        return cls(float(data['hc_mm']), float(data['bpd_mm']))


def _normalize_angle(alpha: float) -> float:
    alpha = math.fmod(alpha, math.pi)
    if alpha < 0:
        alpha += math.pi
    if alpha >= math.pi:
        alpha = 0.0
    return alpha


# ---------------------------------------------------------------------------
# Conversions
# ---------------------------------------------------------------------------

def geometric_to_conic(e: Ellipse) -> ConicCoefficients:
    """Implicit-form coefficients of ``e`` (not normalized)."""
    c, s = math.cos(e.alpha), math.sin(e.alpha)
    a2, b2 = e.a * e.a, e.b * e.b
    A = a2 * s * s + b2 * c * c
    B = 2.0 * (b2 - a2) * s * c
    C = a2 * c * c + b2 * s * s
    D = -2.0 * A * e.cx - B * e.cy
    E = -B * e.cx - 2.0 * C * e.cy
    F = A * e.cx * e.cx + B * e.cx * e.cy + C * e.cy * e.cy - a2 * b2
    return ConicCoefficients(A, B, C, D, E, F)


def conic_to_geometric(conic: ConicCoefficients) -> Ellipse:
    """Center, semi-axes and rotation of a real ellipse given as a conic."""
    A, B, C, D, E, F = conic.as_array()
    if not np.all(np.isfinite(conic.as_array())):
        raise NotAnEllipse('non-finite conic coefficients')
    den = 4.0 * A * C - B * B
    if den <= 0:
        raise NotAnEllipse(f'B^2 - 4AC = {-den} is not negative')

    x0 = (B * E - 2.0 * C * D) / den
    y0 = (B * D - 2.0 * A * E) / den
    f0 = F + 0.5 * (D * x0 + E * y0)

    # make the quadratic part positive definite
    if A + C < 0:
        A, B, C, f0 = -A, -B, -C, -f0
    if f0 >= 0:
        raise NotAnEllipse('conic has no real points')

    p, q, r = A, 0.5 * B, C
    lam_large = 0.5 * (p + r) + math.hypot(0.5 * (p - r), q)
    lam_small = (p * r - q * q) / lam_large
    a = math.sqrt(-f0 / lam_small)
    b = math.sqrt(-f0 / lam_large)
    if a - b <= 1e-12 * a:
        alpha = 0.0
    else:
        alpha = 0.5 * math.atan2(-B, C - A)
    return Ellipse(x0, y0, a, b, alpha)


def sample_points(e: Ellipse, n: int) -> np.ndarray:
    """``n`` points at uniformly spaced parametric angles, shape (n, 2)."""
    if n < 1:
        raise InvalidParams(f'n must be >= 1, got {n}')
    theta = 2.0 * np.pi * np.arange(n) / n
    c, s = math.cos(e.alpha), math.sin(e.alpha)
    ct, st = np.cos(theta), np.sin(theta)
    x = e.cx + e.a * ct * c - e.b * st * s
    y = e.cy + e.a * ct * s + e.b * st * c
    return np.column_stack([x, y])


def distance_to_curve(e: Ellipse, points, samples: int = 4096) -> np.ndarray:
    """Approximate Euclidean distance from each point to the ellipse curve.

    Nearest of ``samples`` curve points; the error is below
    (2*pi*a/samples)^2 / (8*b).
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    curve = sample_points(e, samples)
    out = np.empty(len(pts))
    # chunk to bound memory on long contours
    for start in range(0, len(pts), 256):
        chunk = pts[start:start + 256]
        d = np.hypot(chunk[:, None, 0] - curve[None, :, 0], chunk[:, None, 1] - curve[None, :, 1])
        out[start:start + 256] = d.min(axis=1)
    return out


# ---------------------------------------------------------------------------
# Direct least-squares fitting
# ---------------------------------------------------------------------------

def fit_ellipse(points: Iterable[Sequence[float]]) -> Ellipse:
    """Fit an ellipse to 2-D points by direct least squares.

    Minimizes the algebraic distance subject to 4AC - B^2 = 1, using the
    partitioned (3x3 reduced) formulation on centered and scaled data.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        pts = pts.reshape(-1, 2)
    if len(pts) < MIN_FIT_POINTS:
        raise TooFewPoints(f'need at least {MIN_FIT_POINTS} points, got {len(pts)}')
    if not np.all(np.isfinite(pts)):
        raise DegenerateConfiguration('points contain non-finite values')

    mean = pts.mean(axis=0)
    centered = pts - mean
    rms = math.sqrt(float(np.mean(np.sum(centered * centered, axis=1))))
    if rms == 0.0:
        raise DegenerateConfiguration('all points coincide')
    scale = rms / math.sqrt(2.0)
    u = centered / scale

    cov = u.T @ u / len(u)
    spread = 0.5 * (cov[0, 0] + cov[1, 1])
    det = cov[0, 0] * cov[1, 1] - cov[0, 1] * cov[0, 1]
    if det <= 1e-12 * spread * spread:
        raise DegenerateConfiguration('points are collinear')

    x, y = u[:, 0], u[:, 1]
    d1 = np.column_stack([x * x, x * y, y * y])
    d2 = np.column_stack([x, y, np.ones_like(x)])
    s1 = d1.T @ d1
    s2 = d1.T @ d2
    s3 = d2.T @ d2
    try:
        t = -np.linalg.solve(s3, s2.T)
    except np.linalg.LinAlgError as e:
        raise DegenerateConfiguration('singular scatter matrix') from e
    m = _C1_INV @ (s1 + s2 @ t)

    a1 = _constrained_eigenvector(m)
    a2 = t @ a1
    conic = ConicCoefficients.from_array(np.concatenate([a1, a2]))
    try:
        conic = conic.normalized()
        fitted = conic_to_geometric(conic)
    except NotAnEllipse as e:
        raise DegenerateConfiguration(f'fit did not produce an ellipse: {e}') from e

    return Ellipse(mean[0] + scale * fitted.cx,
                   mean[1] + scale * fitted.cy,
                   scale * fitted.a,
                   scale * fitted.b,
                   fitted.alpha)


def _constrained_eigenvector(m: np.ndarray) -> np.ndarray:
    """Eigenvector of the reduced 3x3 system with 4AC - B^2 > 0."""
    best = None
    best_score = 0.0
    for lam in _characteristic_roots(m):
        v = _eigenvector(m, lam)
        if v is None:
            continue
        score = (4.0 * v[0] * v[2] - v[1] * v[1]) / float(v @ v)
        if score > best_score:
            best, best_score = v, score
    if best is None:
        raise DegenerateConfiguration('no ellipse-constrained solution')
    return best


def _characteristic_roots(m: np.ndarray) -> List[float]:
    """Real parts of the roots of det(M - lambda I), solved in closed form."""
    c2 = -np.trace(m)
    c1 = (m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
          + m[0, 0] * m[2, 2] - m[0, 2] * m[2, 0]
          + m[1, 1] * m[2, 2] - m[1, 2] * m[2, 1])
    c0 = -np.linalg.det(m)

    shift = c2 / 3.0
    p = c1 - c2 * c2 / 3.0
    q = 2.0 * c2 ** 3 / 27.0 - c2 * c1 / 3.0 + c0
    disc = (q / 2.0) ** 2 + (p / 3.0) ** 3

    if p == 0.0 and q == 0.0:
        return [-shift]
    if disc <= 0.0:
        r = 2.0 * math.sqrt(-p / 3.0)
        arg = (3.0 * q / (2.0 * p)) * math.sqrt(-3.0 / p)
        phi = math.acos(max(-1.0, min(1.0, arg))) / 3.0
        return [r * math.cos(phi - 2.0 * math.pi * k / 3.0) - shift for k in range(3)]

    # one real root plus a (numerically) complex pair; keep the pair's real part
    sq = cmath.sqrt(disc).real
    t0 = float(np.cbrt(-q / 2.0 + sq) + np.cbrt(-q / 2.0 - sq))
    return [t0 - shift, -0.5 * t0 - shift]


def _eigenvector(m: np.ndarray, lam: float):
    """Null vector of (M - lam I) by row cross products, then one inverse-iteration polish."""
    n = m - lam * np.eye(3)
    candidates = [np.cross(n[0], n[1]), np.cross(n[0], n[2]), np.cross(n[1], n[2])]
    v = max(candidates, key=lambda c: float(c @ c))
    norm = math.sqrt(float(v @ v))
    if norm == 0.0 or not math.isfinite(norm):
        v = np.array([1.0, 0.0, 1.0])
        norm = math.sqrt(2.0)
    v = v / norm

    mu = lam + 1e-10 * (abs(lam) + float(np.abs(m).max()))
    try:
        w = np.linalg.solve(m - mu * np.eye(3), v)
    except np.linalg.LinAlgError:
        return v
    wn = math.sqrt(float(w @ w))
    if wn == 0.0 or not math.isfinite(wn):
        return v
    return w / wn


# ---------------------------------------------------------------------------
# Perimeter and biometrics
# ---------------------------------------------------------------------------

def eccentricity_h(e: Ellipse) -> float:
    """h = (a - b)^2 / (a + b)^2."""
    return ((e.a - e.b) / (e.a + e.b)) ** 2


def ramanujan_perimeter(e: Ellipse) -> float:
    """Perimeter in pixels by Ramanujan's second approximation."""
    h = eccentricity_h(e)
    return math.pi * (e.a + e.b) * (1.0 + 3.0 * h / (10.0 + math.sqrt(4.0 - 3.0 * h)))


def measure(e: Ellipse, s_xy: float, bpd_convention: str = BPD_DIAMETER) -> Biometrics:
    """HC and BPD in millimeters for pixel size ``s_xy`` (mm per pixel).

    ``bpd_convention='diameter'`` returns the full minor axis (2 b s_xy);
    ``'radius'`` follows the formula as printed (b s_xy).
    """
    if not s_xy > 0:
        raise NonPositivePixelSize(f's_xy must be positive, got {s_xy}')
    if bpd_convention not in BPD_CONVENTIONS:
        raise InvalidParams(f'unknown bpd convention {bpd_convention!r}')
    hc = ramanujan_perimeter(e) * s_xy
    minor = 2.0 * e.b if bpd_convention == BPD_DIAMETER else e.b
    return Biometrics(hc_mm=hc, bpd_mm=minor * s_xy)
