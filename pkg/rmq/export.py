"""CSV and JSON dumps of grids and result tables, and their reload."""
import csv
import io
import json
import logging
import math

import numpy as np

from rmq.affine_schemes import AffineUpdate
from rmq.engine import BoundaryMode, QuantizationSequence, QuantizationStep, Schedule, TransitionSet
from rmq.errors import ConfigError
from rmq.vq1d import Quantizer

logger = logging.getLogger(__name__)

GRID_SCHEMA = "rmq.grid.v1"
SEQUENCE_SCHEMA = "rmq.sequence.v1"
GRID_COLUMNS = ("step", "time", "index", "codeword", "probability")


def _cell(value):
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return value


def _finite_or_none(value):
    value = float(value)
    return value if math.isfinite(value) else None


def rows_to_csv(schema, columns, rows):
    buffer = io.StringIO()
    buffer.write(f"# schema={schema}\n")
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_cell(row[c]) for c in columns])
    return buffer.getvalue()


def rows_to_json(schema, rows, **extra):
    rows = [{k: _finite_or_none(v) if isinstance(v, float) else v for k, v in row.items()} for row in rows]
    return json.dumps({"schema": schema, **extra, "rows": rows}, indent=2)


def grid_rows(seq: QuantizationSequence):
    for k in range(1, seq.K + 1):
        time = seq.step(k).time
        for i, (x, p) in enumerate(zip(seq.states(k), seq.probabilities(k))):
            yield {"step": k, "time": time, "index": i, "codeword": float(x), "probability": float(p)}


def grid_csv(seq: QuantizationSequence):
    return rows_to_csv(GRID_SCHEMA, GRID_COLUMNS, grid_rows(seq))


def sequence_json(seq: QuantizationSequence):
    data = seq.to_dict()
    for step in data["steps"]:
        step["residual"] = _finite_or_none(step["residual"])
    return json.dumps({"schema": SEQUENCE_SCHEMA, **data})


def write_text(path, text):
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write(text)
    logger.info(f"wrote {path}")


def _read_schema(lines, expected):
    if not lines or not lines[0].startswith("# schema="):
        raise ConfigError("missing schema header")
    schema = lines[0].strip().split("=", 1)[1]
    if schema != expected:
        raise ConfigError(f"expected schema {expected}, found {schema}")


def parse_grid_csv(text):
    """Per-step quantizers keyed by step index, zero state included."""
    lines = text.splitlines()
    _read_schema(lines, GRID_SCHEMA)
    codewords, probabilities, times = {}, {}, {}
    for row in csv.DictReader(lines[1:]):
        k = int(row["step"])
        times[k] = float(row["time"])
        codewords.setdefault(k, []).append(float(row["codeword"]))
        probabilities.setdefault(k, []).append(float(row["probability"]))
    return {k: (times[k], Quantizer(codewords[k], probabilities[k])) for k in sorted(codewords)}


def load_grid_csv(path):
    with open(path, encoding="utf-8") as handle:
        return parse_grid_csv(handle.read())


def sequence_from_dict(data):
    if data.get("schema") != SEQUENCE_SCHEMA:
        raise ConfigError(f"expected schema {SEQUENCE_SCHEMA}, found {data.get('schema')}")
    steps = []
    for raw in data["steps"]:
        upd = raw["updates"]
        lam = [np.nan if v is None else v for v in upd["lam"]]
        residual = np.nan if raw.get("residual") is None else raw["residual"]
        steps.append(
            QuantizationStep(
                k=int(raw["step"]),
                time=float(raw["time"]),
                quantizer=Quantizer(raw["codewords"], raw["probabilities"], residual=residual),
                transitions=TransitionSet(np.asarray(raw["transitions"], dtype=float)),
                updates=AffineUpdate(upd["m"], upd["c"], lam, np.zeros(len(lam), dtype=bool)),
                zero_mass=float(raw["zero_mass"]),
            )
        )
    sched = data["schedule"]
    return QuantizationSequence(
        s0=float(data["s0"]),
        scheme=data["scheme"],
        boundary=BoundaryMode.parse(data["boundary"]),
        schedule=Schedule(
            T=sched["T"],
            K=sched["K"],
            n_per_step=tuple(sched["n_per_step"]),
            n_max_vq=sched["n_max_vq"],
            n_max_rmq=sched["n_max_rmq"],
        ),
        steps=tuple(steps),
        model=data.get("model", {}),
    )


def load_json(path):
    with open(path, encoding="utf-8") as handle:
        return sequence_from_dict(json.load(handle))
