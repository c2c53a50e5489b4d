"""
Observer-study statistics: intra-expert, inter-expert and model-expert
agreement on HC, BPD and Dice, plus Bland-Altman export.

Signed differences follow fixed conventions: first repeat minus second
(intra), expert1 minus expert2 (inter), model minus expert (model-expert and
model-reference). HC and BPD differences are pooled over all images; Dice is
averaged per image first (one value per image for every comparison).
"""

import csv
import io
import logging
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from utils.errors import InsufficientData, InvalidFileFormat, InvalidParams, MissingRater
from utils.geometry import BPD_DIAMETER, Biometrics, Ellipse, measure
from utils.raster import ellipse_dice

logger = logging.getLogger(__name__)

EXPERT1 = 'expert1'
EXPERT2 = 'expert2'
MODEL = 'model'
REFERENCE = 'reference'

INTRA = 'intra'
INTER = 'inter'
MODEL_EXPERT = 'model-expert'
MODEL_REFERENCE = 'model-reference'
COMPARISONS = (INTRA, INTER, MODEL_EXPERT, MODEL_REFERENCE)

SD_POPULATION = 'population'
SD_SAMPLE = 'sample'

METRICS = ('hc', 'bpd')

STUDY_COLUMNS = ['image_id', 'rater', 'repeat_index', 'cx', 'cy', 'a', 'b', 'alpha', 's_xy_mm']

SIGN_CONVENTIONS = {
    INTRA: 'repeat 1 - repeat 2',
    INTER: 'expert1 - expert2',
    MODEL_EXPERT: 'model - expert',
    MODEL_REFERENCE: 'model - reference',
}


@dataclass
class StudyRecord:
    """All annotations of one image, keyed by rater, repeats in order."""
    image_id: str
    annotations: Dict[str, List[Ellipse]]
    s_xy: float

    def __post_init__(self):
        if not self.s_xy > 0:
            raise InvalidParams(f'{self.image_id}: s_xy must be positive, got {self.s_xy}')
        for rater, repeats in self.annotations.items():
            if not repeats:
                raise InvalidParams(f'{self.image_id}: rater {rater} has no annotations')

    def raters(self) -> List[str]:
        return list(self.annotations)

    def repeats(self, rater: str) -> List[Ellipse]:
        if rater not in self.annotations:
            raise MissingRater(f'{self.image_id}: no annotations by {rater}')
        return self.annotations[rater]


@dataclass(frozen=True)
class Difference:
    """One mandated comparison between two annotations of an image."""
    image_id: str
    hc: float
    bpd: float
    dice: float
    first: Biometrics
    second: Biometrics


def _compare(record: StudyRecord, e1: Ellipse, e2: Ellipse, bpd_convention: str) -> Difference:
    m1 = measure(e1, record.s_xy, bpd_convention)
    m2 = measure(e2, record.s_xy, bpd_convention)
    return Difference(record.image_id, m1.hc_mm - m2.hc_mm, m1.bpd_mm - m2.bpd_mm,
                      ellipse_dice(e1, e2), m1, m2)


def _annotation_pairs(record: StudyRecord, kind: str, rater: Optional[str]) -> List[Tuple[Ellipse, Ellipse]]:
    if kind == INTRA:
        repeats = record.repeats(rater or EXPERT1)
        if len(repeats) < 2:
            raise InsufficientData(f'{record.image_id}: intra-rater comparison needs 2 repeats by {rater or EXPERT1}')
        return [(repeats[0], repeats[1])]
    if kind == INTER:
        return [(e1, e2) for e1 in record.repeats(EXPERT1) for e2 in record.repeats(EXPERT2)]
    if kind == MODEL_EXPERT:
        model = record.repeats(MODEL)[0]
        experts = record.repeats(EXPERT1) + record.repeats(EXPERT2)
        return [(model, e) for e in experts]
    if kind == MODEL_REFERENCE:
        return [(record.repeats(MODEL)[0], record.repeats(rater or REFERENCE)[0])]
    raise InvalidParams(f'unknown comparison {kind!r}, expected one of {", ".join(COMPARISONS)}')


def pairwise_differences(record: StudyRecord, kind: str, rater: Optional[str] = None,
                         bpd_convention: str = BPD_DIAMETER) -> List[Difference]:
    """Signed differences for one image.

    intra: repeat 1 - repeat 2 of ``rater`` (default expert1);
    inter: expert1 repeat i - expert2 repeat j, i outer;
    model-expert: model - each expert1 then each expert2 annotation;
    model-reference: model - ``rater`` (default reference).
    """
    return [_compare(record, e1, e2, bpd_convention) for e1, e2 in _annotation_pairs(record, kind, rater)]


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------

def _mean(values: Sequence[float]) -> float:
    total = 0.0
    for v in values:
        total += v
    return total / len(values)


def _sd(values: Sequence[float], ddof: int) -> float:
    if len(values) <= ddof:
        raise InsufficientData(f'{len(values)} values are not enough for a standard deviation')
    m = _mean(values)
    total = 0.0
    for v in values:
        total += (v - m) ** 2
    return math.sqrt(total / (len(values) - ddof))


def _ddof(sd_convention: str) -> int:
    if sd_convention == SD_POPULATION:
        return 0
    if sd_convention == SD_SAMPLE:
        return 1
    raise InvalidParams(f'unknown SD convention {sd_convention!r}')


@dataclass(frozen=True)
class MetricSummary:
    """MAE and ME of a pool of signed differences, each with its SD."""
    mae: float
    mae_sd: float
    me: float
    me_sd: float
    n: int

    @classmethod
    def from_differences(cls, diffs: Sequence[float], ddof: int = 0) -> 'MetricSummary':
        absolute = [abs(d) for d in diffs]
        return cls(_mean(absolute), _sd(absolute, ddof), _mean(diffs), _sd(diffs, ddof), len(diffs))

    def to_dict(self) -> Dict:
        return {'mae': self.mae, 'mae_sd': self.mae_sd, 'me': self.me, 'me_sd': self.me_sd, 'n': self.n}


@dataclass(frozen=True)
class DiceSummary:
    mean: float
    sd: float
    n: int

    def to_dict(self) -> Dict:
        return {'mean': self.mean, 'sd': self.sd, 'n': self.n}


@dataclass
class AgreementReport:
    comparison: str
    rater: Optional[str]
    n_images: int
    hc: MetricSummary
    bpd: MetricSummary
    dice: DiceSummary
    sd_convention: str = SD_POPULATION
    worst: Dict[str, Dict] = field(default_factory=dict)

    @property
    def label(self) -> str:
        return f'{self.comparison}:{self.rater}' if self.rater else self.comparison

    def to_dict(self) -> Dict:
        return {
            'comparison': self.comparison,
            'rater': self.rater,
            'sign_convention': SIGN_CONVENTIONS[self.comparison],
            'sd_convention': self.sd_convention,
            'n_images': self.n_images,
            'hc_mm': self.hc.to_dict(),
            'bpd_mm': self.bpd.to_dict(),
            'dice': self.dice.to_dict(),
            'worst': self.worst,
        }


def collect_differences(records: Sequence[StudyRecord], kind: str, rater: Optional[str] = None,
                        bpd_convention: str = BPD_DIAMETER) -> List[List[Difference]]:
    return [pairwise_differences(r, kind, rater, bpd_convention) for r in records]


def aggregate(records: Sequence[StudyRecord], kind: str, rater: Optional[str] = None,
              sd_convention: str = SD_POPULATION,
              bpd_convention: str = BPD_DIAMETER) -> AgreementReport:
    """Pool the mandated differences of every record, in record order."""
    ddof = _ddof(sd_convention)
    if len(records) < 2:
        raise InsufficientData(f'aggregation needs at least 2 records, got {len(records)}')
    per_image = collect_differences(records, kind, rater, bpd_convention)
    pooled = [d for diffs in per_image for d in diffs]
    dice_per_image = [_mean([d.dice for d in diffs]) for diffs in per_image]

    worst_hc = max(pooled, key=lambda d: abs(d.hc))
    worst_bpd = max(pooled, key=lambda d: abs(d.bpd))
    worst_dice = min(range(len(records)), key=lambda i: dice_per_image[i])
    worst = {
        'hc': {'image_id': worst_hc.image_id, 'difference_mm': worst_hc.hc},
        'bpd': {'image_id': worst_bpd.image_id, 'difference_mm': worst_bpd.bpd},
        'dice': {'image_id': records[worst_dice].image_id, 'dice': dice_per_image[worst_dice]},
    }
    if rater is None:
        rater = {INTRA: EXPERT1, MODEL_REFERENCE: REFERENCE}.get(kind)
    return AgreementReport(
        comparison=kind,
        rater=rater,
        n_images=len(records),
        hc=MetricSummary.from_differences([d.hc for d in pooled], ddof),
        bpd=MetricSummary.from_differences([d.bpd for d in pooled], ddof),
        dice=DiceSummary(_mean(dice_per_image), _sd(dice_per_image, ddof), len(dice_per_image)),
        sd_convention=sd_convention,
        worst=worst,
    )


def available_comparisons(records: Sequence[StudyRecord]) -> List[Tuple[str, Optional[str]]]:
    """(kind, rater) pairs whose raters appear in every record."""
    common = set.intersection(*(set(r.raters()) for r in records)) if records else set()
    out = []
    for expert in (EXPERT1, EXPERT2):
        if expert in common and all(len(r.repeats(expert)) >= 2 for r in records):
            out.append((INTRA, expert))
    if {EXPERT1, EXPERT2} <= common:
        out.append((INTER, None))
    if {MODEL, EXPERT1, EXPERT2} <= common:
        out.append((MODEL_EXPERT, None))
    if {MODEL, REFERENCE} <= common:
        out.append((MODEL_REFERENCE, REFERENCE))
    return out


def full_report(records: Sequence[StudyRecord], sd_convention: str = SD_POPULATION,
                bpd_convention: str = BPD_DIAMETER) -> Dict[str, AgreementReport]:
    """Every comparison the records support, keyed by report label."""
    reports = OrderedDict()
    for kind, rater in available_comparisons(records):
        report = aggregate(records, kind, rater, sd_convention, bpd_convention)
        reports[report.label] = report
    if not reports:
        raise MissingRater('records do not share the raters of any comparison')
    return reports


# ---------------------------------------------------------------------------
# Bland-Altman
# ---------------------------------------------------------------------------

@dataclass
class BlandAltman:
    points: List[Tuple[float, float]]
    bias: float
    sd: float
    lower: float
    upper: float

    def to_dict(self) -> Dict:
        return {'points': [list(p) for p in self.points], 'bias': self.bias, 'sd': self.sd,
                'lower': self.lower, 'upper': self.upper}

    def to_csv(self) -> str:
        lines = [f'# bias={self.bias!r} sd={self.sd!r} lower={self.lower!r} upper={self.upper!r}',
                 'mean,diff']
        lines += [f'{m!r},{d!r}' for m, d in self.points]
        return '\n'.join(lines) + '\n'


def bland_altman(pairs: Iterable[Tuple[float, float]], sd_convention: str = SD_POPULATION) -> BlandAltman:
    """Per-pair (mean, difference) points with bias and 1.96 SD limits of agreement."""
    pairs = list(pairs)
    if len(pairs) < 2:
        raise InsufficientData(f'Bland-Altman needs at least 2 pairs, got {len(pairs)}')
    points = [((m1 + m2) / 2.0, m1 - m2) for m1, m2 in pairs]
    diffs = [d for _, d in points]
    bias = _mean(diffs)
    sd = _sd(diffs, _ddof(sd_convention))
    return BlandAltman(points, bias, sd, bias - 1.96 * sd, bias + 1.96 * sd)


def measurement_pairs(records: Sequence[StudyRecord], kind: str, metric: str = 'hc',
                      rater: Optional[str] = None,
                      bpd_convention: str = BPD_DIAMETER) -> List[Tuple[float, float]]:
    """(first, second) measurements in mm for every mandated comparison."""
    if metric not in METRICS:
        raise InvalidParams(f'unknown metric {metric!r}, expected hc or bpd')
    attr = 'hc_mm' if metric == 'hc' else 'bpd_mm'
    return [(getattr(d.first, attr), getattr(d.second, attr))
            for diffs in collect_differences(records, kind, rater, bpd_convention) for d in diffs]


# ---------------------------------------------------------------------------
# Clinical reference values
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReferenceValue:
    mean: float
    sd: float


_TABLE = {
    # comparison: (HC MAE, HC ME, BPD MAE, BPD ME, Dice), each (mean, sd)
    'intra-expert1': ((1.55, 1.30), (0.18, 2.01), (0.40, 0.32), (-0.05, 0.51), (0.983, 0.006)),
    'intra-expert2': ((1.55, 1.14), (-0.09, 1.92), (0.60, 0.45), (-0.06, 0.75), (0.984, 0.005)),
    'inter-expert': ((2.16, 1.16), (1.56, 1.70), (0.59, 0.34), (0.01, 0.60), (0.980, 0.005)),
    'model-expert': ((1.99, 0.87), (1.01, 1.62), (0.61, 0.33), (0.29, 0.55), (0.980, 0.005)),
    'all-test': ((1.80, 1.49), (0.54, 2.28), (0.68, 0.62), (0.13, 0.91), (0.981, 0.007)),
}
_TABLE_METRICS = ('hc_mae', 'hc_me', 'bpd_mae', 'bpd_me', 'dice')


def reference_table() -> Dict[str, Dict[str, ReferenceValue]]:
    """Clinical agreement values (mm, Dice) for report comparison only."""
    return {comparison: {metric: ReferenceValue(*value) for metric, value in zip(_TABLE_METRICS, row)}
            for comparison, row in _TABLE.items()}


def reference_table_dict() -> Dict[str, Dict[str, Dict[str, float]]]:
    return {c: {m: {'mean': v.mean, 'sd': v.sd} for m, v in row.items()}
            for c, row in reference_table().items()}


# ---------------------------------------------------------------------------
# Study CSV
# ---------------------------------------------------------------------------

def records_from_rows(rows: Iterable[Dict]) -> List[StudyRecord]:
    """Group annotation rows by image, first-appearance order, repeats sorted."""
    grouped: Dict[str, Dict] = OrderedDict()
    for row in rows:
        image_id = str(row['image_id'])
        s_xy = float(row['s_xy_mm'])
        entry = grouped.setdefault(image_id, {'s_xy': s_xy, 'raters': OrderedDict()})
        if not math.isclose(entry['s_xy'], s_xy, rel_tol=1e-12):
            raise InvalidFileFormat(f'{image_id}: conflicting pixel sizes {entry["s_xy"]} and {s_xy}')
        repeats = entry['raters'].setdefault(str(row['rater']), {})
        repeat = int(row['repeat_index'])
        if repeat in repeats:
            raise InvalidFileFormat(f'{image_id}: duplicate annotation {row["rater"]} #{repeat}')
        repeats[repeat] = Ellipse(float(row['cx']), float(row['cy']), float(row['a']),
                                  float(row['b']), float(row['alpha']))
    return [StudyRecord(image_id, {rater: [reps[k] for k in sorted(reps)] for rater, reps in entry['raters'].items()},
                        entry['s_xy'])
            for image_id, entry in grouped.items()]


def record_rows(records: Iterable[StudyRecord]) -> List[Dict]:
    rows = []
    for record in records:
        for rater, repeats in record.annotations.items():
            for k, e in enumerate(repeats, start=1):
                rows.append({'image_id': record.image_id, 'rater': rater, 'repeat_index': k,
                             'cx': e.cx, 'cy': e.cy, 'a': e.a, 'b': e.b, 'alpha': e.alpha,
                             's_xy_mm': record.s_xy})
    return rows


def parse_study_csv(content: str) -> List[StudyRecord]:
    """Parse a study CSV (one annotation per row)."""
    content = content.strip()
    if not content:
        raise InvalidFileFormat('empty study CSV')
    reader = csv.DictReader(io.StringIO(content))
    headers = {h.strip().lower() for h in (reader.fieldnames or [])}
    missing = set(STUDY_COLUMNS) - headers
    if missing:
        raise InvalidFileFormat(f'missing study columns: {", ".join(sorted(missing))}')

    rows = []
    for line, row in enumerate(reader, start=2):
        if not any(row.values()):
            continue
        normalized = {k.strip().lower(): (v.strip() if v else '') for k, v in row.items()}
        try:
            float(normalized['cx'])
            int(normalized['repeat_index'])
        except ValueError as e:
            raise InvalidFileFormat(f'line {line}: {e}') from e
        rows.append(normalized)
    try:
        records = records_from_rows(rows)
    except ValueError as e:
        if isinstance(e, InvalidFileFormat):
            raise
        raise InvalidFileFormat(str(e)) from e
    if not records:
        raise InvalidFileFormat('study CSV has no annotation rows')
    return records


def write_study_csv(records: Iterable[StudyRecord]) -> str:
    out = io.StringIO()
    writer = csv.DictWriter(out, fieldnames=STUDY_COLUMNS, lineterminator='\n')
    writer.writeheader()
    for row in record_rows(records):
        writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return out.getvalue()


# ---------------------------------------------------------------------------
# Synthetic study
# ---------------------------------------------------------------------------

def synthetic_study(seed: int, n: int, s_xy: float = 0.26, model: bool = True,
                    reference: bool = False, expert2_bias: float = 1.5) -> List[StudyRecord]:
    """Two experts annotate each image twice around a hidden true ellipse.

    Expert 2 traces ``expert2_bias`` px inside expert 1 on average; the
    optional model annotation is one more noisy tracing.
    """
    if n < 1:
        raise InvalidParams(f'study size must be positive, got {n}')
    records = []
    for i in range(n):
        rng = np.random.Generator(np.random.Philox(key=[seed, i]))
        a = rng.uniform(90.0, 180.0)
        truth = Ellipse(rng.uniform(300.0, 340.0), rng.uniform(170.0, 210.0),
                        a, a / rng.uniform(1.1, 1.5), rng.uniform(0.0, math.pi))

        def trace(shrink: float, spread: float) -> Ellipse:
            return Ellipse(truth.cx + rng.normal(0.0, spread), truth.cy + rng.normal(0.0, spread),
                           truth.a - shrink + rng.normal(0.0, spread),
                           truth.b - shrink + rng.normal(0.0, spread),
                           truth.alpha + rng.normal(0.0, 0.02))

        annotations = OrderedDict()
        annotations[EXPERT1] = [trace(0.0, 1.0), trace(0.0, 1.0)]
        annotations[EXPERT2] = [trace(expert2_bias, 1.0), trace(expert2_bias, 1.0)]
        if model:
            annotations[MODEL] = [trace(0.5, 1.2)]
        if reference:
            annotations[REFERENCE] = [truth]
        records.append(StudyRecord(f'img{i:04d}', annotations, s_xy))
    return records
