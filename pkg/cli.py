"""
caliper command line.

    python cli.py phantom-gen --n 250 --seed 7 --out data/
    python cli.py train --data data/ --out net.segn
    python cli.py infer --params net.segn --data data/ --out pred/
    python cli.py evaluate --predictions pred/ --data data/ --out report/

JSON results go to stdout, logs to stderr. Exit codes: 0 success, 1 a
measurement/IO error (its name is printed), 2 invalid arguments. Every run
writes a run-manifest JSON that ``replay`` can re-execute.
"""

import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import click
import dotenv
import numpy as np
import scipy

import config
from utils import __version__
from utils.annotation import extract_ground_truth
from utils.errors import CaliperError, InvalidFileFormat, InvalidParams
from utils.geometry import BPD_CONVENTIONS, measure
from utils.imageio import (
    GrayImage,
    RgbImage,
    load_ellipse,
    load_gray,
    load_mask,
    load_rgb,
    read_json,
    read_ppm,
    read_sidecar,
    save_biometrics,
    save_contour_csv,
    save_ellipse,
    save_mask,
    sidecar_path,
    write_json,
)
from utils.phantom import (
    MANIFEST_NAME,
    PhantomParams,
    generate_dataset,
    load_dataset,
    nested_fractions,
    write_dataset,
)
from utils.pipeline import bench, ellipse_from_mask, infer_image, measure_mask
from utils.raster import dice, extract_contour
from utils.segnet import CLINICAL_LEARNING_RATE, ArchitectureConfig, TrainConfig, load_params, save_params, train
from utils.study import (
    MODEL,
    MODEL_REFERENCE,
    REFERENCE,
    SD_POPULATION,
    SD_SAMPLE,
    StudyRecord,
    aggregate,
    bland_altman,
    full_report,
    measurement_pairs,
    parse_study_csv,
    reference_table_dict,
    synthetic_study,
    write_study_csv,
)

logger = logging.getLogger('caliper')

RUN_MANIFEST_NAME = 'run-manifest.json'
LOG_LEVELS = ['DEBUG', 'INFO', 'WARNING', 'ERROR']


class CaliperGroup(click.Group):
    """Reports library errors as exit code 1 with the error name."""

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except CaliperError as exc:
            raise click.ClickException(exc.describe()) from exc


def _emit(obj) -> None:
    click.echo(json.dumps(obj))


def load_config_file(path) -> Dict:
    """Option defaults from a JSON object or key=value file; keys use option names."""
    path = Path(path)
    if path.suffix.lower() == '.json':
        data = read_json(path)
        if not isinstance(data, dict):
            raise InvalidFileFormat(f'{path}: config must be a JSON object')
    else:
        data = dotenv.dotenv_values(path)
    return {str(k).strip().lower().replace('-', '_'): v for k, v in data.items() if v is not None}


def _record_run(ctx: click.Context, default_path=None) -> Optional[Path]:
    """Write the effective parameters of this run for ``replay``.

    Commands without an output location only record when ``--manifest`` is given.
    """
    root = ctx.find_root()
    path = (root.obj or {}).get('manifest') or default_path
    if path is None:
        logger.debug('no output location, run manifest skipped')
        return None
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest = {
        'command': ctx.info_name,
        'params': ctx.params,
        'versions': {'caliper': __version__, 'numpy': np.__version__, 'scipy': scipy.__version__},
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + '\n')
    logger.debug('run manifest written to %s', path)
    return path


def _int_list(ctx, param, value) -> Optional[Tuple[int, ...]]:
    if value is None or isinstance(value, (list, tuple)):
        return None if value is None else tuple(int(v) for v in value)
    try:
        return tuple(int(v) for v in str(value).split(','))
    except ValueError:
        raise click.BadParameter(f'expected comma-separated integers, got {value!r}')


def _usage(fn, *args, **kwargs):
    """Build a config object, turning InvalidParams into a usage error (exit 2)."""
    try:
        return fn(*args, **kwargs)
    except InvalidParams as e:
        raise click.UsageError(str(e))


seed_option = click.option('--seed', type=click.IntRange(min=0), default=config.CALIPER_SEED,
                           envvar='CALIPER_SEED', show_default=True, help='RNG seed (env CALIPER_SEED).')
bpd_option = click.option('--bpd-convention', type=click.Choice(BPD_CONVENTIONS),
                          default=config.CALIPER_BPD_CONVENTION, show_default=True,
                          help='BPD as the full minor axis or the semi-minor axis.')


@click.group(cls=CaliperGroup)
@click.option('--config', 'config_path', type=click.Path(exists=True, dir_okay=False),
              help='JSON or key=value file with option defaults.')
@click.option('--log-level', type=click.Choice(LOG_LEVELS, case_sensitive=False),
              default=config.CALIPER_LOG_LEVEL, show_default=True)
@click.option('--manifest', 'manifest_path', type=click.Path(dir_okay=False),
              help='Where to write the run manifest (default: next to the outputs).')
@click.version_option(__version__, prog_name='caliper')
@click.pass_context
def cli(ctx, config_path, log_level, manifest_path):
    """Fetal head biometry from ultrasound ellipses."""
    logging.basicConfig(level=log_level.upper(), stream=sys.stderr, force=True,
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    ctx.ensure_object(dict)
    ctx.obj['manifest'] = manifest_path
    if config_path:
        try:
            defaults = load_config_file(config_path)
        except CaliperError as e:
            raise click.BadParameter(e.describe(), param_hint='--config')
        ctx.default_map = {name: defaults for name in cli.commands}


# ---------------------------------------------------------------------------
# Data
# ---------------------------------------------------------------------------

@cli.command('phantom-gen')
@click.option('--n', 'n', type=click.IntRange(min=1), required=True, help='Number of phantoms.')
@seed_option
@click.option('--out', required=True, type=click.Path(file_okay=False), help='Dataset directory.')
@click.option('--overlays', is_flag=True, help='Also write overlay.ppm with the dashed ellipse.')
@click.option('--width', type=click.IntRange(min=8), default=96, show_default=True)
@click.option('--height', type=click.IntRange(min=8), default=64, show_default=True)
@click.option('--a-min', type=float, default=14.0, show_default=True, help='Smallest semi-major axis (px).')
@click.option('--a-max', type=float, default=22.0, show_default=True, help='Largest semi-major axis (px).')
@click.option('--s-xy', type=click.FloatRange(min=0, min_open=True), default=1.2, show_default=True)
@click.option('--speckle', type=click.FloatRange(min=0), default=0.35, show_default=True)
@click.option('--shadow-probability', type=click.FloatRange(0, 1), default=0.3, show_default=True)
@click.option('--blur', type=click.FloatRange(min=0), default=0.8, show_default=True)
@click.option('--test-fraction', type=click.FloatRange(0, 1, max_open=True), default=0.2, show_default=True)
@click.option('--validation-fraction', type=click.FloatRange(0, 1, max_open=True), default=0.1,
              show_default=True, help='Share of the non-test data used for validation.')
@click.pass_context
def phantom_gen(ctx, n, seed, out, overlays, width, height, a_min, a_max, s_xy, speckle,
                shadow_probability, blur, test_fraction, validation_fraction):
    """Generate a synthetic phantom dataset with ground truth."""
    params = _usage(PhantomParams, width=width, height=height, a_range=(a_min, a_max), s_xy=s_xy,
                    speckle=speckle, shadow_probability=shadow_probability, blur_sigma=blur)
    dataset = generate_dataset(seed, n, params, nested_fractions(test_fraction, validation_fraction))
    write_dataset(dataset, out, overlays=overlays)
    _record_run(ctx, Path(out) / RUN_MANIFEST_NAME)
    _emit({'out': str(out), 'n': n, 'seed': seed,
           'splits': {name: len(dataset.split(name)) for name in ('train', 'validation', 'test')}})


@cli.command('study-gen')
@click.option('--n', 'n', type=click.IntRange(min=2), default=100, show_default=True)
@seed_option
@click.option('--out', required=True, type=click.Path(dir_okay=False), help='Study CSV to write.')
@click.option('--s-xy', type=click.FloatRange(min=0, min_open=True), default=0.26, show_default=True)
@click.option('--no-model', is_flag=True, help='Leave out the model annotation.')
@click.option('--reference', is_flag=True, help='Add the hidden true ellipse as rater "reference".')
@click.pass_context
def study_gen(ctx, n, seed, out, s_xy, no_model, reference):
    """Write a synthetic two-expert observer study CSV."""
    records = synthetic_study(seed, n, s_xy=s_xy, model=not no_model, reference=reference)
    Path(out).write_text(write_study_csv(records))
    _record_run(ctx, Path(out).parent / RUN_MANIFEST_NAME)
    _emit({'out': str(out), 'n': n, 'seed': seed})


# ---------------------------------------------------------------------------
# Measurement chain
# ---------------------------------------------------------------------------

@cli.command('extract')
@click.option('--overlay', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--out', required=True, type=click.Path(file_okay=False))
@click.option('--s-xy', type=click.FloatRange(min=0, min_open=True), default=None,
              help='Pixel size in mm (default: the JSON sidecar, if any).')
@click.option('--chroma-threshold', type=click.IntRange(0, 255),
              default=config.CALIPER_CHROMA_THRESHOLD, show_default=True)
@click.option('--key-color', callback=_int_list, default=None, help='Annotation colour as r,g,b.')
@click.option('--tolerance', type=click.IntRange(0, 255), default=0, show_default=True)
@bpd_option
@click.pass_context
def extract(ctx, overlay, out, s_xy, chroma_threshold, key_color, tolerance, bpd_convention):
    """Recover the annotated ellipse and its mask from an overlay image."""
    if key_color is not None and len(key_color) != 3:
        raise click.BadParameter('expected r,g,b', param_hint='--key-color')
    if s_xy is None and sidecar_path(overlay).exists():
        s_xy = read_sidecar(sidecar_path(overlay))
    img = RgbImage(read_ppm(overlay), s_xy or 1.0)
    e, mask = extract_ground_truth(img, chroma_threshold, key_color, tolerance)

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    save_ellipse(out / 'ellipse.json', e)
    save_mask(out / 'mask.pgm', mask)
    result = {'ellipse': e.to_dict(), 's_xy_mm': s_xy}
    if s_xy is not None:
        bio = measure(e, s_xy, bpd_convention)
        save_biometrics(out / 'biometrics.json', bio)
        result['biometrics'] = bio.to_dict()
    _record_run(ctx, out / RUN_MANIFEST_NAME)
    _emit(result)


@cli.command('fit')
@click.option('--mask', 'mask_path', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--out', type=click.Path(dir_okay=False), default=None, help='ellipse.json to write.')
@click.option('--contour', 'contour_path', type=click.Path(dir_okay=False), default=None,
              help='Also write the traced contour as x,y rows.')
@click.pass_context
def fit(ctx, mask_path, out, contour_path):
    """Fit an ellipse to the outline of a mask."""
    mask = load_mask(mask_path)
    e = ellipse_from_mask(mask)
    if out:
        save_ellipse(out, e)
    if contour_path:
        save_contour_csv(contour_path, extract_contour(mask))
    _record_run(ctx, Path(out).parent / RUN_MANIFEST_NAME if out else None)
    _emit(e.to_dict())


precision_option = click.option('--precision', type=click.IntRange(0, 17), default=4, show_default=True,
                                help='Decimals in the printed values.')


def _emit_biometrics(bio, precision: int) -> None:
    _emit({k: round(v, precision) for k, v in bio.to_dict().items()})


@cli.command('measure')
@click.option('--ellipse', 'ellipse_path', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--s-xy', type=click.FloatRange(min=0, min_open=True), required=True, help='Pixel size in mm.')
@bpd_option
@precision_option
@click.pass_context
def measure_cmd(ctx, ellipse_path, s_xy, bpd_convention, precision):
    """Print HC and BPD in mm for an ellipse."""
    bio = measure(load_ellipse(ellipse_path), s_xy, bpd_convention)
    _record_run(ctx)
    _emit_biometrics(bio, precision)


@cli.command('chain')
@click.option('--overlay', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--s-xy', type=click.FloatRange(min=0, min_open=True), default=None,
              help='Pixel size in mm (default: the JSON sidecar).')
@click.option('--chroma-threshold', type=click.IntRange(0, 255),
              default=config.CALIPER_CHROMA_THRESHOLD, show_default=True)
@click.option('--key-color', callback=_int_list, default=None, help='Annotation colour as r,g,b.')
@click.option('--tolerance', type=click.IntRange(0, 255), default=0, show_default=True)
@bpd_option
@precision_option
@click.pass_context
def chain(ctx, overlay, s_xy, chroma_threshold, key_color, tolerance, bpd_convention, precision):
    """extract -> fit -> measure in one process, without intermediate files.

    Prints exactly what ``measure`` prints for the ellipse ``fit`` recovers
    from the mask ``extract`` writes.
    """
    if key_color is not None and len(key_color) != 3:
        raise click.BadParameter('expected r,g,b', param_hint='--key-color')
    img = load_rgb(overlay, s_xy)
    _, mask = extract_ground_truth(img, chroma_threshold, key_color, tolerance)
    result = measure_mask(mask, img.s_xy, bpd_convention)
    _record_run(ctx)
    _emit_biometrics(result.biometrics, precision)


# ---------------------------------------------------------------------------
# Network
# ---------------------------------------------------------------------------

def _samples(data, split: str) -> List[Tuple[str, GrayImage]]:
    """(name, GrayImage) for a phantom dataset split, or for every */image.pgm."""
    data = Path(data)
    if (data / MANIFEST_NAME).exists():
        dataset = load_dataset(data)
        chosen = dataset.samples if split == 'all' else dataset.split(split)
        return [(s.name, s.image) for s in chosen]
    paths = sorted(data.glob('*/image.pgm'))
    if (data / 'image.pgm').exists():
        paths.insert(0, data / 'image.pgm')
    return [(p.parent.name, load_gray(p)) for p in paths]


@cli.command('train')
@click.option('--data', required=True, type=click.Path(exists=True, file_okay=False), help='Phantom dataset.')
@click.option('--out', required=True, type=click.Path(dir_okay=False), help='Parameter file to write.')
@click.option('--log', 'log_path', type=click.Path(dir_okay=False), default=None,
              help='Training log CSV (default: <out>.csv).')
@seed_option
@click.option('--epochs', type=click.IntRange(min=1), default=20, show_default=True)
@click.option('--patience', type=click.IntRange(min=1), default=3, show_default=True)
@click.option('--batch-size', type=click.IntRange(min=1), default=5, show_default=True)
@click.option('--lr', type=click.FloatRange(min=0, min_open=True), default=1e-3, show_default=True)
@click.option('--clinical-lr', is_flag=True, help=f'Use the clinical-scale learning rate {CLINICAL_LEARNING_RATE}.')
@click.option('--channels', callback=_int_list, default='8,16,32', show_default=True,
              help='Channels per encoder stage.')
@click.option('--no-skip', is_flag=True, help='Disable encoder-decoder skip connections.')
@click.option('--no-augment', is_flag=True, help='Disable random left-right flips.')
@click.pass_context
def train_cmd(ctx, data, out, log_path, seed, epochs, patience, batch_size, lr, clinical_lr, channels,
              no_skip, no_augment):
    """Train the segmentation network on a phantom dataset."""
    arch = _usage(ArchitectureConfig, channels=channels, skip_connections=not no_skip)
    cfg = _usage(TrainConfig, max_epochs=epochs, patience=patience, batch_size=batch_size,
                 learning_rate=CLINICAL_LEARNING_RATE if clinical_lr else lr, seed=seed, augment=not no_augment)
    dataset = load_dataset(data)
    params, log = train([s.pair() for s in dataset.train], [s.pair() for s in dataset.validation], arch, cfg)

    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_params(out, params)
    log_path = Path(log_path) if log_path else out.with_suffix('.csv')
    log_path.write_text(log.to_csv())
    _record_run(ctx, out.parent / RUN_MANIFEST_NAME)
    best = next(r for r in log.records if r.epoch == log.best_epoch)
    _emit({'params': str(out), 'log': str(log_path), 'epochs_run': len(log.records),
           'best_epoch': log.best_epoch, 'best_val_dice': best.val_dice, 'stopped_early': log.stopped_early})


@cli.command('infer')
@click.option('--params', 'params_path', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--data', required=True, type=click.Path(exists=True, file_okay=False),
              help='Phantom dataset or directory of */image.pgm samples.')
@click.option('--split', type=click.Choice(['train', 'validation', 'test', 'all']), default='test',
              show_default=True, help='Dataset split to run on (phantom datasets only).')
@click.option('--out', required=True, type=click.Path(file_okay=False))
@bpd_option
@click.pass_context
def infer(ctx, params_path, data, split, out, bpd_convention):
    """Segment images, fit the head ellipse and measure HC/BPD."""
    params = load_params(params_path)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    results = []
    for name, img in _samples(data, split):
        prediction = infer_image(params, img, name, bpd_convention)
        sample_dir = out / name
        sample_dir.mkdir(exist_ok=True)
        save_mask(sample_dir / 'mask.pgm', prediction.mask)
        if prediction.ok:
            save_ellipse(sample_dir / 'ellipse.json', prediction.measurement.ellipse)
            save_biometrics(sample_dir / 'biometrics.json', prediction.measurement.biometrics)
        results.append(dict(prediction.to_dict(), s_xy_mm=img.s_xy))
    write_json(out / 'predictions.json', results)
    _record_run(ctx, out / RUN_MANIFEST_NAME)
    failures = sum(1 for r in results if r['error'])
    logger.info('inferred %d images, %d without a measurement', len(results), failures)
    _emit({'out': str(out), 'n': len(results), 'failures': failures})


@cli.command('evaluate')
@click.option('--predictions', type=click.Path(exists=True, file_okay=False), default=None,
              help='Output directory of infer.')
@click.option('--data', type=click.Path(exists=True, file_okay=False), default=None,
              help='Phantom dataset with the ground truth.')
@click.option('--study', 'study_path', type=click.Path(exists=True, dir_okay=False), default=None,
              help='Observer-study CSV (instead of predictions + data).')
@click.option('--out', required=True, type=click.Path(file_okay=False))
@click.option('--sd-convention', type=click.Choice([SD_POPULATION, SD_SAMPLE]),
              default=config.CALIPER_SD_CONVENTION, show_default=True)
@bpd_option
@click.pass_context
def evaluate(ctx, predictions, data, study_path, out, sd_convention, bpd_convention):
    """Agreement report and Bland-Altman tables."""
    if study_path is None and (predictions is None or data is None):
        raise click.UsageError('give --study, or both --predictions and --data')
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)

    if study_path:
        records = parse_study_csv(Path(study_path).read_text())
        reports = full_report(records, sd_convention, bpd_convention)
        summary = {}
    else:
        records, summary = _prediction_records(predictions, data)
        reports = {MODEL_REFERENCE: aggregate(records, MODEL_REFERENCE, REFERENCE, sd_convention, bpd_convention)}
        mean_hc = float(np.mean([m for _, m in measurement_pairs(records, MODEL_REFERENCE, 'hc')]))
        summary['mean_reference_hc_mm'] = mean_hc
        summary['hc_mae_percent_of_mean'] = 100.0 * reports[MODEL_REFERENCE].hc.mae / mean_hc

    for label, report in reports.items():
        kind, rater = report.comparison, report.rater
        for metric in ('hc', 'bpd'):
            pairs = measurement_pairs(records, kind, metric, rater, bpd_convention)
            ba = bland_altman(pairs, sd_convention)
            (out / f'bland-altman-{label.replace(":", "-")}-{metric}.csv').write_text(ba.to_csv())

    result = dict(summary, reports={label: r.to_dict() for label, r in reports.items()},
                  reference_table=reference_table_dict())
    write_json(out / 'report.json', result)
    _record_run(ctx, out / RUN_MANIFEST_NAME)
    _emit(result)


def _prediction_records(predictions, data) -> Tuple[List[StudyRecord], Dict]:
    """Pair infer output with phantom ground truth as model/reference records."""
    predictions = Path(predictions)
    predicted = {p['name']: p for p in read_json(predictions / 'predictions.json')}
    dataset = load_dataset(data)
    records, mask_dice, failures = [], [], 0
    for sample in dataset.samples:
        p = predicted.get(sample.name)
        if p is None:
            continue
        mask_dice.append(dice(load_mask(predictions / sample.name / 'mask.pgm'), sample.mask))
        if p.get('error'):
            failures += 1
            continue
        model = load_ellipse(predictions / sample.name / 'ellipse.json')
        records.append(StudyRecord(sample.name, {MODEL: [model], REFERENCE: [sample.ellipse]}, sample.image.s_xy))
    if not mask_dice:
        raise InvalidFileFormat(f'{predictions}: no predictions match samples in {data}')
    return records, {'n_predicted': len(mask_dice), 'failures': failures,
                     'mask_dice': {'mean': float(np.mean(mask_dice)), 'sd': float(np.std(mask_dice))}}


@cli.command('bench')
@click.option('--params', 'params_path', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--data', required=True, type=click.Path(exists=True, file_okay=False))
@click.option('--split', type=click.Choice(['train', 'validation', 'test', 'all']), default='all',
              show_default=True)
@click.option('--frames', type=click.IntRange(min=1), default=100, show_default=True)
@click.option('--warmup', type=click.IntRange(min=0), default=10, show_default=True)
@bpd_option
@click.pass_context
def bench_cmd(ctx, params_path, data, split, frames, warmup, bpd_convention):
    """Throughput of the full predict -> contour -> fit -> measure chain."""
    params = load_params(params_path)
    images = [img for _, img in _samples(data, split)]
    report = bench(params, images, frames, warmup, bpd_convention)
    _record_run(ctx)
    result = report.to_dict()
    result['image_size'] = list(images[0].data.shape) if images else None
    result['note'] = 'desk-scale CPU figure; the 15 fps clinical GPU figure is a reference, not a target'
    _emit(result)


@cli.command('replay')
@click.argument('manifest', type=click.Path(exists=True, dir_okay=False))
@click.pass_context
def replay(ctx, manifest):
    """Re-run the command recorded in a run manifest."""
    recorded = read_json(manifest)
    if not isinstance(recorded, dict) or 'command' not in recorded:
        raise InvalidFileFormat(f'{manifest}: not a run manifest')
    command = cli.get_command(ctx, recorded['command'])
    if command is None or command is replay:
        raise InvalidFileFormat(f'{manifest}: cannot replay command {recorded["command"]!r}')
    params = recorded.get('params', {})
    unknown = set(params) - {p.name for p in command.params}
    if unknown:
        raise InvalidFileFormat(f'{manifest}: unknown parameters {", ".join(sorted(unknown))}')
    logger.info('replaying %s from %s', recorded['command'], manifest)
    ctx.invoke(command, **params)


if __name__ == '__main__':
    cli()
