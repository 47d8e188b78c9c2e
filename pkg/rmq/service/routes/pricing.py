import logging

from flask import Blueprint, jsonify, request

from rmq.errors import ConfigError
from rmq.pricing import INSTRUMENTS, BarrierSpec, VanillaPayoff, price_many
from rmq.service.extensions import db
from rmq.service.models import PriceRecord
from rmq.service.routes.runs import get_run_or_404

pricing_bp = Blueprint('pricing', __name__)
logger = logging.getLogger(__name__)


def _float_list(data, key):
    values = data.get(key)
    if values is None:
        return None
    if not isinstance(values, list):
        values = [values]
    try:
        return [float(v) for v in values]
    except (TypeError, ValueError):
        raise ConfigError(f"{key} must be a list of numbers") from None


@pricing_bp.route('/<int:run_id>/prices', methods=['POST'])
def price_run(run_id):
    run = get_run_or_404(run_id)
    data = request.get_json(silent=True) or {}

    instrument = data.get('instrument', 'european')
    kind = data.get('kind', 'put')
    if instrument not in INSTRUMENTS:
        raise ConfigError(f"instrument must be one of {INSTRUMENTS}")
    strikes = _float_list(data, 'strikes')
    if not strikes:
        raise ConfigError("strikes are required")
    level = data.get('level')
    if instrument == 'barrier' and level is None:
        raise ConfigError("barrier pricing needs a level")

    payoffs = [VanillaPayoff(kind, strike) for strike in strikes]
    barriers = [BarrierSpec(float(level))] * len(payoffs) if instrument == 'barrier' else None
    prices = price_many(run.sequence(), payoffs, run.r, instrument=instrument, barriers=barriers)

    records = [
        PriceRecord(
            run_id=run.id,
            instrument=instrument,
            kind=kind,
            strike=strike,
            level=float(level) if instrument == 'barrier' else None,
            price=value,
        )
        for strike, value in zip(strikes, prices)
    ]
    db.session.add_all(records)
    db.session.commit()
    logger.info(f"Priced {len(records)} {instrument} {kind}s on run {run.id}")

    return jsonify({"run_id": run.id, "prices": [record.to_dict() for record in records]}), 201


@pricing_bp.route('/<int:run_id>/prices', methods=['GET'])
def list_prices(run_id):
    run = get_run_or_404(run_id)
    records = PriceRecord.query.filter_by(run_id=run.id).order_by(PriceRecord.id.asc()).all()
    return jsonify([record.to_dict() for record in records])
