from flask import Blueprint, jsonify

from models import Annotation, db
from utils import __version__

main_bp = Blueprint('main', __name__)

ENDPOINTS = [
    'POST /api/measure',
    'POST /api/fit',
    'GET /api/reference',
    'GET|POST /api/study/annotations',
    'DELETE /api/study/annotations/<id>',
    'GET /api/study/csv-template',
    'POST /api/study/import',
    'GET /api/study/report',
    'GET /api/study/bland-altman',
]


@main_bp.route('/')
def index():
    """Service description and store size."""
    images = db.session.query(Annotation.image_id).distinct().count()
    return jsonify({
        'service': 'caliper',
        'version': __version__,
        'annotations': Annotation.query.count(),
        'images': images,
        'endpoints': ENDPOINTS,
    })


@main_bp.route('/health')
def health():
    return jsonify({'status': 'ok'})
