import logging
import os
from datetime import datetime

from dotenv import load_dotenv
from flask import Flask, jsonify
from flask_cors import CORS

from rmq.errors import NumericalFailure, RmqError
from rmq.service.extensions import db

load_dotenv()

logger = logging.getLogger(__name__)


def create_app(test_config=None):
    logging.basicConfig(level=os.getenv("RMQ_LOG_LEVEL", "INFO").upper())

    app = Flask(__name__)

    # App configuration
    app.config["SQLALCHEMY_DATABASE_URI"] = os.getenv("DATABASE_URL", "sqlite:///rmq_runs.db")
    app.config["SQLALCHEMY_ENGINE_OPTIONS"] = {
        "pool_recycle": 300,
        "pool_pre_ping": True,
    }
    app.config["SQLALCHEMY_TRACK_MODIFICATIONS"] = False
    app.config["RMQ_MAX_CARDINALITY"] = int(os.getenv("RMQ_MAX_CARDINALITY", "2000"))
    if test_config:
        app.config.update(test_config)

    db.init_app(app)
    CORS(app)

    from rmq.service.routes.pricing import pricing_bp
    from rmq.service.routes.runs import runs_bp

    app.register_blueprint(runs_bp, url_prefix='/api/runs')
    app.register_blueprint(pricing_bp, url_prefix='/api/runs')

    with app.app_context():
        import rmq.service.models  # noqa: F401  registers the tables
        db.create_all()

    register_error_handlers(app)

    @app.route('/api/health')
    def health_check():
        return jsonify({"status": "healthy", "timestamp": datetime.now().isoformat()})

    logger.info(f"service ready, store {app.config['SQLALCHEMY_DATABASE_URI']}")
    return app


def register_error_handlers(app):
    @app.errorhandler(NumericalFailure)
    def numerical_failure(error):
        return jsonify({"error": "Numerical failure", "message": str(error), "step": error.step}), 422

    @app.errorhandler(RmqError)
    def invalid_request(error):
        return jsonify({"error": "Bad request", "message": str(error)}), 400

    @app.errorhandler(400)
    def bad_request(error):
        return jsonify({"error": "Bad request", "message": str(error)}), 400

    @app.errorhandler(404)
    def not_found(error):
        return jsonify({"error": "Not found", "message": "Resource not found"}), 404

    @app.errorhandler(500)
    def server_error(error):
        return jsonify({"error": "Server error", "message": "Internal server error"}), 500
