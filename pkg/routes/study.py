"""Observer-study annotation store and agreement reports."""

from flask import Blueprint, Response, current_app, jsonify, request

from models import Annotation, db
from routes.measure import json_body, require
from utils.errors import InvalidFileFormat, InvalidParams
from utils.geometry import Ellipse
from utils.study import (
    COMPARISONS,
    INTER,
    METRICS,
    STUDY_COLUMNS,
    bland_altman,
    full_report,
    measurement_pairs,
    parse_study_csv,
    record_rows,
    records_from_rows,
)

study_bp = Blueprint('study', __name__)

CSV_TEMPLATE = ','.join(STUDY_COLUMNS) + """
img0001,expert1,1,320.5,190.2,120.4,98.7,0.31,0.26
img0001,expert1,2,321.0,189.8,121.1,98.2,0.30,0.26
img0001,expert2,1,320.1,190.9,119.2,97.5,0.33,0.26
img0001,expert2,2,320.7,190.0,119.8,97.9,0.29,0.26
img0001,model,1,320.9,190.4,120.0,98.0,0.31,0.26
"""


def _records():
    rows = [a.to_row() for a in Annotation.query.order_by(Annotation.id).all()]
    return records_from_rows(rows)


@study_bp.route('/annotations', methods=['GET'])
def list_annotations():
    query = Annotation.query
    for field in ('image_id', 'rater'):
        value = request.args.get(field, '').strip()
        if value:
            query = query.filter_by(**{field: value})
    annotations = query.order_by(Annotation.image_id, Annotation.rater, Annotation.repeat_index).all()
    return jsonify({'annotations': [a.to_dict() for a in annotations]})


@study_bp.route('/annotations', methods=['POST'])
def add_annotation():
    data = json_body()
    image_id, rater, ellipse, s_xy = require(data, 'image_id', 'rater', 'ellipse', 's_xy_mm')
    if not isinstance(ellipse, dict):
        raise InvalidParams('ellipse must be an object with cx, cy, a, b, alpha')
    e = Ellipse.from_dict(ellipse)
    try:
        s_xy = float(s_xy)
    except (TypeError, ValueError):
        raise InvalidParams(f's_xy_mm must be a number, got {s_xy!r}')
    if not s_xy > 0:
        raise InvalidParams('s_xy_mm must be positive')

    existing = Annotation.query.filter_by(image_id=str(image_id), rater=str(rater))
    repeat_index = int(data.get('repeat_index') or existing.count() + 1)
    if existing.filter_by(repeat_index=repeat_index).first():
        return jsonify({'error': f'{image_id}: {rater} #{repeat_index} already exists',
                        'type': 'Conflict'}), 409

    annotation = Annotation.from_ellipse(str(image_id), str(rater), repeat_index, e, s_xy)
    db.session.add(annotation)
    db.session.commit()
    return jsonify(annotation.to_dict()), 201


@study_bp.route('/annotations/<int:annotation_id>', methods=['DELETE'])
def delete_annotation(annotation_id):
    annotation = db.get_or_404(Annotation, annotation_id)
    db.session.delete(annotation)
    db.session.commit()
    return jsonify({'success': True, 'deleted': str(annotation_id)})


@study_bp.route('/csv-template', methods=['GET'])
def download_csv_template():
    """Study CSV template: one annotation per row, repeats numbered from 1."""
    return Response(
        CSV_TEMPLATE,
        mimetype='text/csv',
        headers={'Content-Disposition': 'attachment; filename=study_template.csv'}
    )


@study_bp.route('/import', methods=['POST'])
def import_csv():
    """Load a study CSV (multipart 'file' or raw text body); existing repeats are skipped."""
    if 'file' in request.files:
        file = request.files['file']
        if not file.filename.lower().endswith('.csv'):
            raise InvalidFileFormat('study file must be a .csv')
        content = file.read().decode('utf-8')
    else:
        content = request.get_data(as_text=True)
    records = parse_study_csv(content)

    added = skipped = 0
    for row in record_rows(records):
        exists = Annotation.query.filter_by(image_id=row['image_id'], rater=row['rater'],
                                            repeat_index=row['repeat_index']).first()
        if exists:
            skipped += 1
            continue
        db.session.add(Annotation(**row))
        added += 1
    db.session.commit()
    current_app.logger.info('study import: %d annotations added, %d skipped', added, skipped)
    return jsonify({'success': True, 'images': len(records), 'added': added, 'skipped': skipped})


@study_bp.route('/report', methods=['GET'])
def report():
    """Agreement report for every comparison the stored raters support."""
    sd = request.args.get('sd', current_app.config['CALIPER_SD_CONVENTION'])
    bpd = request.args.get('bpd', current_app.config['CALIPER_BPD_CONVENTION'])
    reports = full_report(_records(), sd, bpd)
    return jsonify({label: r.to_dict() for label, r in reports.items()})


@study_bp.route('/bland-altman', methods=['GET'])
def bland_altman_export():
    metric = request.args.get('metric', 'hc')
    comparison = request.args.get('comparison', INTER)
    rater = request.args.get('rater') or None
    if metric not in METRICS:
        raise InvalidParams(f'metric must be one of {", ".join(METRICS)}')
    if comparison not in COMPARISONS:
        raise InvalidParams(f'comparison must be one of {", ".join(COMPARISONS)}')
    pairs = measurement_pairs(_records(), comparison, metric, rater,
                              current_app.config['CALIPER_BPD_CONVENTION'])
    result = bland_altman(pairs, request.args.get('sd', current_app.config['CALIPER_SD_CONVENTION']))
    if request.args.get('format') == 'csv':
        return Response(result.to_csv(), mimetype='text/csv', headers={
            'Content-Disposition': f'attachment; filename=bland_altman_{comparison}_{metric}.csv'})
    return jsonify(result.to_dict())
