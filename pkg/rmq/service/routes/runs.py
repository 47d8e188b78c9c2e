import json
import logging

from flask import Blueprint, Response, abort, current_app, jsonify, request

from rmq.config import RunConfig
from rmq.engine import rmq_run
from rmq.errors import ConfigError
from rmq.export import grid_csv, sequence_json
from rmq.service.extensions import db
from rmq.service.models import QuantizationRun

runs_bp = Blueprint('runs', __name__)
logger = logging.getLogger(__name__)


def get_run_or_404(run_id):
    run = db.session.get(QuantizationRun, run_id)
    if run is None:
        abort(404)
    return run


@runs_bp.route('', methods=['POST'])
def create_run():
    data = request.get_json(silent=True)
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("request body must be a JSON object")

    cfg = RunConfig.from_mapping(data)
    limit = current_app.config["RMQ_MAX_CARDINALITY"]
    if cfg.N > limit:
        raise ConfigError(f"N={cfg.N} exceeds the service limit of {limit}")

    logger.info(f"Starting run: {cfg.to_dict()}")
    seq = rmq_run(cfg.sde_model(), cfg.scheme, cfg.s0, cfg.schedule(), boundary=cfg.boundary_mode())
    final = seq.step(seq.K)

    run = QuantizationRun(
        model=cfg.model,
        scheme=cfg.scheme,
        boundary=cfg.boundary,
        s0=cfg.s0,
        r=cfg.r,
        horizon=cfg.T,
        steps=cfg.K,
        cardinality=cfg.N,
        config_json=json.dumps(cfg.to_dict()),
        grid_json=sequence_json(seq),
        final_mean=float(seq.probabilities(seq.K) @ seq.states(seq.K)),
        zero_mass=final.zero_mass,
    )
    db.session.add(run)
    db.session.commit()

    return jsonify({"message": "Run completed", "run": run.to_dict()}), 201


@runs_bp.route('', methods=['GET'])
def list_runs():
    runs = QuantizationRun.query.order_by(QuantizationRun.created_at.desc()).all()
    return jsonify([run.to_dict() for run in runs])


@runs_bp.route('/<int:run_id>', methods=['GET'])
def get_run(run_id):
    return jsonify(get_run_or_404(run_id).to_dict())


@runs_bp.route('/<int:run_id>', methods=['DELETE'])
def delete_run(run_id):
    run = get_run_or_404(run_id)
    db.session.delete(run)
    db.session.commit()
    return jsonify({"message": f"Run {run_id} deleted successfully"})


@runs_bp.route('/<int:run_id>/grid', methods=['GET'])
def export_grid(run_id):
    """Grids of a stored run as CSV."""
    run = get_run_or_404(run_id)
    filename = f"rmq_run_{run.id}_{run.model}_{run.scheme}.csv"
    return Response(
        grid_csv(run.sequence()),
        mimetype="text/csv",
        headers={"Content-disposition": f"attachment; filename={filename}"},
    )
