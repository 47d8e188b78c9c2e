import datetime
import json

from rmq.export import sequence_from_dict
from rmq.service.extensions import db


class QuantizationRun(db.Model):
    __tablename__ = 'quantization_runs'

    id = db.Column(db.Integer, primary_key=True)
    model = db.Column(db.String(10), nullable=False)
    scheme = db.Column(db.String(10), nullable=False)
    boundary = db.Column(db.String(12), nullable=False)
    s0 = db.Column(db.Float, nullable=False)
    r = db.Column(db.Float, nullable=False)
    horizon = db.Column(db.Float, nullable=False)
    steps = db.Column(db.Integer, nullable=False)
    cardinality = db.Column(db.Integer, nullable=False)
    config_json = db.Column(db.Text, nullable=False)
    grid_json = db.Column(db.Text, nullable=False)
    final_mean = db.Column(db.Float, nullable=True)
    zero_mass = db.Column(db.Float, nullable=False, default=0.0)
    created_at = db.Column(db.DateTime, nullable=False, default=datetime.datetime.now)

    prices = db.relationship(
        'PriceRecord', backref='run', lazy=True, cascade='all, delete-orphan'
    )

    def sequence(self):
        return sequence_from_dict(json.loads(self.grid_json))

    def to_dict(self):
        return {
            'id': self.id,
            'model': self.model,
            'scheme': self.scheme,
            'boundary': self.boundary,
            's0': self.s0,
            'r': self.r,
            'T': self.horizon,
            'K': self.steps,
            'N': self.cardinality,
            'config': json.loads(self.config_json),
            'final_mean': self.final_mean,
            'zero_mass': self.zero_mass,
            'created_at': self.created_at.isoformat() if self.created_at else None,
        }


class PriceRecord(db.Model):
    __tablename__ = 'price_records'

    id = db.Column(db.Integer, primary_key=True)
    run_id = db.Column(db.Integer, db.ForeignKey('quantization_runs.id'), nullable=False)
    instrument = db.Column(db.String(10), nullable=False)  # european, bermudan, barrier
    kind = db.Column(db.String(4), nullable=False)  # put, call
    strike = db.Column(db.Float, nullable=False)
    level = db.Column(db.Float, nullable=True)
    price = db.Column(db.Float, nullable=False)
    created_at = db.Column(db.DateTime, nullable=False, default=datetime.datetime.now)

    def to_dict(self):
        return {
            'id': self.id,
            'run_id': self.run_id,
            'instrument': self.instrument,
            'kind': self.kind,
            'strike': self.strike,
            'level': self.level,
            'price': self.price,
            'created_at': self.created_at.isoformat() if self.created_at else None,
        }
