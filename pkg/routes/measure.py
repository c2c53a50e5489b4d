"""Stateless measurement endpoints."""

from flask import Blueprint, current_app, jsonify, request

from utils.errors import InvalidParams
from utils.geometry import Ellipse, fit_ellipse, measure
from utils.study import reference_table_dict

measure_bp = Blueprint('measure', __name__)


def json_body() -> dict:
    data = request.get_json(silent=True)
    if not isinstance(data, dict):
        raise InvalidParams('request body must be a JSON object')
    return data


def require(data: dict, *fields):
    missing = [f for f in fields if f not in data]
    if missing:
        raise InvalidParams(f'missing fields: {", ".join(missing)}')
    return [data[f] for f in fields]


@measure_bp.route('/measure', methods=['POST'])
def measure_ellipse():
    """HC and BPD for {ellipse, s_xy_mm, bpd_convention?}."""
    data = json_body()
    ellipse, s_xy = require(data, 'ellipse', 's_xy_mm')
    if not isinstance(ellipse, dict):
        raise InvalidParams('ellipse must be an object with cx, cy, a, b, alpha')
    convention = data.get('bpd_convention', current_app.config['CALIPER_BPD_CONVENTION'])
    try:
        s_xy = float(s_xy)
    except (TypeError, ValueError):
        raise InvalidParams(f's_xy_mm must be a number, got {s_xy!r}')
    bio = measure(Ellipse.from_dict(ellipse), s_xy, convention)
    return jsonify(dict(bio.to_dict(), bpd_convention=convention))


@measure_bp.route('/fit', methods=['POST'])
def fit_points():
    """Least-squares ellipse through {points: [[x, y], ...]}."""
    (points,) = require(json_body(), 'points')
    try:
        pts = [(float(x), float(y)) for x, y in points]
    except (TypeError, ValueError):
        raise InvalidParams('points must be a list of [x, y] pairs')
    e = fit_ellipse(pts)
    current_app.logger.debug('fitted %d points -> %s', len(pts), e)
    return jsonify({'ellipse': e.to_dict(), 'n_points': len(pts)})


@measure_bp.route('/reference')
def reference():
    """Clinical agreement values, for comparison with local reports."""
    return jsonify(reference_table_dict())
