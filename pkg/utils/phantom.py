"""
Synthetic ultrasound-like head phantoms with exact ground truth.

Sample ``i`` of a dataset depends only on ``(seed, i)``: its random stream is
numpy's Philox-4x64-10 counter-based generator keyed with ``[seed, i]``.
Draw order per sample is fixed: a, aspect ratio, rotation, centre x jitter,
centre y jitter, shadow coin, shadow sector (start angle, width; redrawn
while it removes too much rim), then one speckle value per pixel in raster
order.
"""

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage

from utils.annotation import draw_overlay
from utils.errors import InvalidFileFormat, InvalidParams
from utils.geometry import Ellipse
from utils.imageio import (
    GrayImage,
    load_gray,
    load_mask,
    read_json,
    save_gray,
    save_mask,
    save_rgb,
    write_json,
    write_sidecar,
)
from utils.raster import Mask, rasterize_ellipse

logger = logging.getLogger(__name__)

SPLITS = ('train', 'validation', 'test')
MANIFEST_NAME = 'manifest.csv'
MANIFEST_COLUMNS = ['file', 'split', 'cx', 'cy', 'a', 'b', 'alpha', 's_xy_mm']
DATASET_INFO_NAME = 'phantom.json'
MAX_SHADOW_DRAWS = 64


def nested_fractions(test_fraction: float = 0.2, validation_fraction: float = 0.1) -> Tuple[float, float, float]:
    """(train, validation, test) shares for a test split followed by a
    validation split of the remaining training data."""
    for f in (test_fraction, validation_fraction):
        if not 0.0 <= f < 1.0:
            raise InvalidParams(f'split fractions must lie in [0, 1), got {f}')
    keep = 1.0 - test_fraction
    return keep * (1.0 - validation_fraction), keep * validation_fraction, test_fraction


DEFAULT_FRACTIONS = nested_fractions()


@dataclass(frozen=True)
class PhantomParams:
    width: int = 96
    height: int = 64
    a_range: Tuple[float, float] = (14.0, 22.0)
    aspect_range: Tuple[float, float] = (1.05, 1.6)
    center_jitter: float = 4.0
    rotation_range: Tuple[float, float] = (0.0, math.pi)
    margin: int = 4
    interior_level: float = 0.15
    tissue_level: float = 0.4
    rim_level: float = 0.9
    rim_thickness: float = 2.0
    speckle: float = 0.35
    shadow_probability: float = 0.3
    shadow_attenuation: float = 0.7
    shadow_width_range: Tuple[float, float] = (math.pi / 12, math.pi / 4)
    shadow_max_fraction: float = 0.2
    blur_sigma: float = 0.8
    s_xy: float = 1.2

    def __post_init__(self):
        for name in ('a_range', 'aspect_range', 'rotation_range', 'shadow_width_range'):
            lo, hi = (float(v) for v in getattr(self, name))
            if not lo <= hi:
                raise InvalidParams(f'{name} must satisfy low <= high, got ({lo}, {hi})')
            object.__setattr__(self, name, (lo, hi))
        if self.width < 8 or self.height < 8:
            raise InvalidParams(f'image must be at least 8x8, got {self.width}x{self.height}')
        if self.a_range[0] <= 0:
            raise InvalidParams('semi-axes must be positive')
        if self.aspect_range[0] < 1.0:
            raise InvalidParams('aspect ratio a/b must be >= 1')
        if self.center_jitter < 0 or self.margin < 0 or self.blur_sigma < 0 or self.speckle < 0:
            raise InvalidParams('jitter, margin, blur and speckle must be non-negative')
        if self.rim_thickness <= 0:
            raise InvalidParams('rim thickness must be positive')
        for name in ('interior_level', 'tissue_level', 'rim_level', 'shadow_probability',
                     'shadow_attenuation', 'shadow_max_fraction'):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise InvalidParams(f'{name} must lie in [0, 1]')
        if not self.s_xy > 0:
            raise InvalidParams(f's_xy must be positive, got {self.s_xy}')
        # the largest head plus rim must clear the border by the margin
        reach = self.a_range[1] + self.rim_thickness / 2 + self.center_jitter + self.margin
        if reach > (min(self.width, self.height) - 1) / 2:
            raise InvalidParams(f'heads up to a={self.a_range[1]} with jitter {self.center_jitter} '
                                f'do not fit a {self.width}x{self.height} image with margin {self.margin}')

    def to_dict(self) -> Dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, data: Dict) -> 'PhantomParams':
        known = {k: tuple(v) if isinstance(v, list) else v
                 for k, v in data.items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass(frozen=True)
class PhantomSample:
    index: int
    image: GrayImage
    mask: Mask
    ellipse: Ellipse
    split: str = 'train'

    @property
    def name(self) -> str:
        return f'{self.index:05d}'

    def pair(self) -> Tuple[GrayImage, Mask]:
        return self.image, self.mask


@dataclass
class PhantomDataset:
    seed: int
    params: PhantomParams
    samples: List[PhantomSample] = field(default_factory=list)

    def split(self, name: str) -> List[PhantomSample]:
        return [s for s in self.samples if s.split == name]

    @property
    def train(self) -> List[PhantomSample]:
        return self.split('train')

    @property
    def validation(self) -> List[PhantomSample]:
        return self.split('validation')

    @property
    def test(self) -> List[PhantomSample]:
        return self.split('test')

    def manifest_rows(self) -> List[Dict]:
        return [{
            'file': f'{s.name}/image.pgm',
            'split': s.split,
            'cx': repr(s.ellipse.cx),
            'cy': repr(s.ellipse.cy),
            'a': repr(s.ellipse.a),
            'b': repr(s.ellipse.b),
            'alpha': repr(s.ellipse.alpha),
            's_xy_mm': repr(s.image.s_xy),
        } for s in self.samples]

    def manifest_csv(self) -> str:
        out = io.StringIO()
        writer = csv.DictWriter(out, fieldnames=MANIFEST_COLUMNS, lineterminator='\n')
        writer.writeheader()
        writer.writerows(self.manifest_rows())
        return out.getvalue()


def _rng(seed: int, index: int) -> np.random.Generator:
    if seed < 0 or index < 0:
        raise InvalidParams(f'seed and index must be non-negative, got {seed}, {index}')
    return np.random.Generator(np.random.Philox(key=[seed, index]))


def _draw_ellipse(rng: np.random.Generator, params: PhantomParams) -> Ellipse:
    a = rng.uniform(*params.a_range)
    aspect = rng.uniform(*params.aspect_range)
    alpha = rng.uniform(*params.rotation_range)
    jx, jy = rng.uniform(-params.center_jitter, params.center_jitter, size=2)
    cx = (params.width - 1) / 2 + jx
    cy = (params.height - 1) / 2 + jy
    return Ellipse(cx, cy, a, a / aspect, alpha)


def sample_ellipse(seed: int, params: PhantomParams, index: int = 0) -> Ellipse:
    """The ground-truth ellipse of sample ``index`` without rendering the image."""
    return _draw_ellipse(_rng(seed, index), params)


def generate(seed: int, params: PhantomParams = PhantomParams(), index: int = 0) -> Tuple[GrayImage, Mask, Ellipse]:
    """Render one phantom: dark interior, bright rim, tissue outside, optional
    shadow sector, multiplicative speckle and Gaussian blur."""
    rng = _rng(seed, index)
    e = _draw_ellipse(rng, params)

    dx, dy = np.meshgrid(np.arange(params.width, dtype=float) - e.cx,
                         np.arange(params.height, dtype=float) - e.cy)
    c, s = math.cos(e.alpha), math.sin(e.alpha)
    u = (dx * c + dy * s) / e.a
    v = (-dx * s + dy * c) / e.b
    rho = np.hypot(u, v)
    with np.errstate(divide='ignore', invalid='ignore'):
        # distance along the ray from the centre to the curve
        radial = np.where(rho > 0, np.hypot(dx, dy) * np.abs(1.0 - 1.0 / rho), np.inf)
    rim = radial <= params.rim_thickness / 2
    clean = np.where(rho <= 1.0, params.interior_level, params.tissue_level)
    clean[rim] = params.rim_level

    if rng.random() < params.shadow_probability:
        sector = _draw_shadow(rng, params, np.arctan2(dy, dx), rim)
        if sector is not None:
            clean[sector & (rim | (rho > 1.0))] *= 1.0 - params.shadow_attenuation

    noise = rng.uniform(-1.0, 1.0, size=clean.shape)
    image = np.clip(clean * (1.0 + params.speckle * noise), 0.0, 1.0)
    if params.blur_sigma > 0:
        image = np.clip(ndimage.gaussian_filter(image, params.blur_sigma, mode='nearest'), 0.0, 1.0)
    return GrayImage(image, params.s_xy), rasterize_ellipse(e, params.width, params.height), e


def _draw_shadow(rng, params: PhantomParams, angle: np.ndarray, rim: np.ndarray) -> Optional[np.ndarray]:
    rim_count = max(int(rim.sum()), 1)
    for _ in range(MAX_SHADOW_DRAWS):
        start = rng.uniform(0.0, 2.0 * math.pi)
        width = rng.uniform(*params.shadow_width_range)
        sector = np.mod(angle - start, 2.0 * math.pi) < width
        if (sector & rim).sum() / rim_count <= params.shadow_max_fraction:
            return sector
    logger.debug('no shadow sector within %.2f of the rim after %d draws',
                 params.shadow_max_fraction, MAX_SHADOW_DRAWS)
    return None


def split_sizes(n: int, fractions: Sequence[float] = DEFAULT_FRACTIONS) -> Tuple[int, ...]:
    """Largest-remainder apportionment of ``n`` items; ties go to the earlier split."""
    if n < 1:
        raise InvalidParams(f'dataset size must be positive, got {n}')
    fractions = [float(f) for f in fractions]
    if any(f < 0 for f in fractions) or not math.isclose(sum(fractions), 1.0, abs_tol=1e-9):
        raise InvalidParams(f'split fractions must be non-negative and sum to 1, got {fractions}')
    quotas = [n * f for f in fractions]
    sizes = [math.floor(q) for q in quotas]
    order = sorted(range(len(quotas)), key=lambda i: (-(quotas[i] - sizes[i]), i))
    for i in order[:n - sum(sizes)]:
        sizes[i] += 1
    return tuple(sizes)


def generate_dataset(seed: int, n: int, params: PhantomParams = PhantomParams(),
                     fractions: Sequence[float] = DEFAULT_FRACTIONS) -> PhantomDataset:
    """Samples 0..n-1; the first block is train, then validation, then test."""
    sizes = split_sizes(n, fractions)
    labels = [name for name, size in zip(SPLITS, sizes) for _ in range(size)]
    dataset = PhantomDataset(seed=seed, params=params)
    for index, split in enumerate(labels):
        image, mask, e = generate(seed, params, index)
        dataset.samples.append(PhantomSample(index, image, mask, e, split))
    logger.info('generated %d phantoms (seed %d): %s', n, seed,
                ', '.join(f'{k} {v}' for k, v in zip(SPLITS, sizes)))
    return dataset


def write_dataset(dataset: PhantomDataset, out_dir: Union[str, Path], overlays: bool = False) -> Path:
    """One directory per sample (image.pgm, image.json, mask.pgm, optional
    overlay.ppm) plus manifest.csv and phantom.json at the top."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for s in dataset.samples:
        sample_dir = out / s.name
        sample_dir.mkdir(exist_ok=True)
        save_gray(sample_dir / 'image.pgm', s.image)
        write_sidecar(sample_dir / 'image.json', s.image.s_xy)
        save_mask(sample_dir / 'mask.pgm', s.mask)
        if overlays:
            save_rgb(sample_dir / 'overlay.ppm', draw_overlay(s.image, s.ellipse))
    (out / MANIFEST_NAME).write_text(dataset.manifest_csv())
    write_json(out / DATASET_INFO_NAME, {'seed': dataset.seed, 'n': len(dataset.samples),
                                         'params': dataset.params.to_dict()})
    return out


def read_manifest(path: Union[str, Path]) -> List[Dict]:
    try:
        content = Path(path).read_text()
    except OSError as e:
        raise InvalidFileFormat(f'{path}: {e}') from e
    reader = csv.DictReader(io.StringIO(content))
    missing = set(MANIFEST_COLUMNS) - set(reader.fieldnames or [])
    if missing:
        raise InvalidFileFormat(f'{path}: missing manifest columns: {", ".join(sorted(missing))}')
    rows = []
    for row in reader:
        if row['split'] not in SPLITS:
            raise InvalidFileFormat(f'{path}: unknown split {row["split"]!r}')
        rows.append(row)
    return rows


def load_dataset(root: Union[str, Path]) -> PhantomDataset:
    """Read back a dataset directory; images come back 8-bit quantized."""
    root = Path(root)
    info = read_json(root / DATASET_INFO_NAME) if (root / DATASET_INFO_NAME).exists() else {}
    params = PhantomParams.from_dict(info.get('params', {}))
    dataset = PhantomDataset(seed=int(info.get('seed', 0)), params=params)
    for row in read_manifest(root / MANIFEST_NAME):
        image_path = root / row['file']
        try:
            e = Ellipse(*(float(row[k]) for k in ('cx', 'cy', 'a', 'b', 'alpha')))
            s_xy = float(row['s_xy_mm'])
            index = int(image_path.parent.name)
        except ValueError as err:
            raise InvalidFileFormat(f'{root / MANIFEST_NAME}: bad row for {row["file"]}: {err}') from err
        dataset.samples.append(PhantomSample(index, load_gray(image_path, s_xy),
                                             load_mask(image_path.parent / 'mask.pgm'), e, row['split']))
    if not dataset.samples:
        logger.warning('dataset at %s has an empty manifest', root)
    return dataset
