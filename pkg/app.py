from flask import Flask, jsonify, request
from flask_compress import Compress
from werkzeug.exceptions import HTTPException
from werkzeug.middleware.proxy_fix import ProxyFix

from models import db
from routes import main_bp, measure_bp, study_bp
from utils.errors import CaliperError


def create_app(test_config=None):
    """Application factory; ``test_config`` overrides settings from config.py."""
    app = Flask(__name__)
    app.wsgi_app = ProxyFix(app.wsgi_app, x_for=1, x_proto=1, x_host=1, x_prefix=1)
    app.config.from_object('config')
    if test_config:
        app.config.update(test_config)

    Compress(app)
    db.init_app(app)

    app.register_blueprint(main_bp)
    app.register_blueprint(measure_bp, url_prefix='/api')
    app.register_blueprint(study_bp, url_prefix='/api/study')

    @app.errorhandler(CaliperError)
    def caliper_error(exc):
        app.logger.info('rejected request: %s', exc.describe())
        return jsonify({'error': str(exc), 'type': exc.name}), 400

    @app.errorhandler(404)
    def not_found(exc: HTTPException):
        return jsonify({'error': exc.description, 'type': 'NotFound'}), 404

    @app.after_request
    def add_header(response):
        """API results are never cached."""
        if request.path.startswith('/api'):
            response.headers['Cache-Control'] = 'no-cache, no-store, must-revalidate'
        return response

    with app.app_context():
        db.create_all()

    return app


if __name__ == '__main__':
    create_app().run(debug=True, port=5000)
