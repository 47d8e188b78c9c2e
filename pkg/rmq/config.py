"""Run configuration shared by the command line and the HTTP service."""
import logging
from dataclasses import asdict, dataclass, fields

from dotenv.parser import parse_stream

from rmq.affine_schemes import SCHEMES
from rmq.engine import BoundaryMode, Schedule
from rmq.errors import ConfigError, ModelDomainError
from rmq.sde_models import CevParams, GbmParams, cev_model, gbm_model

logger = logging.getLogger(__name__)

MODELS = ("gbm", "cev")

_MODEL_FIELDS = {
    "gbm": {"sigma"},
    "cev": {"alpha", "sigma_ln"},
}


@dataclass(frozen=True)
class RunConfig:
    model: str = "gbm"
    s0: float = 100.0
    r: float = 0.05
    sigma: float = 0.3
    alpha: float = 0.7
    sigma_ln: float = 0.3
    scheme: str = "weak2"
    boundary: str = "free"
    T: float = 1.0
    K: int = 12
    N: int = 200
    n_max_vq: int = 50
    n_max_rmq: int = 5

    def __post_init__(self):
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}; expected one of {MODELS}")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}; expected one of {sorted(SCHEMES)}")
        BoundaryMode.parse(self.boundary)
        # building the parameter objects and schedule runs their own checks
        try:
            self.params()
        except ModelDomainError as exc:
            raise ConfigError(str(exc)) from exc
        self.schedule()

    @classmethod
    def from_mapping(cls, data):
        """Build from strings or JSON values; unknown keys are rejected."""
        known = {f.name: f.type for f in fields(cls)}
        unknown = sorted(set(data) - set(known))
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
        values = {}
        for key, raw in data.items():
            if raw is None:
                continue
            kind = known[key]
            try:
                if kind in (int, "int"):
                    values[key] = int(raw)
                elif kind in (float, "float"):
                    values[key] = float(raw)
                else:
                    values[key] = str(raw).strip().lower()
            except (TypeError, ValueError):
                raise ConfigError(f"invalid value for {key}: {raw!r}") from None
        return cls(**values)

    def params(self):
        if self.model == "gbm":
            return GbmParams(s0=self.s0, r=self.r, sigma=self.sigma)
        return CevParams(s0=self.s0, r=self.r, alpha=self.alpha, sigma_ln=self.sigma_ln)

    def sde_model(self):
        p = self.params()
        return gbm_model(p) if self.model == "gbm" else cev_model(p)

    def boundary_mode(self):
        return BoundaryMode.parse(self.boundary)

    def schedule(self):
        return Schedule.uniform(T=self.T, K=self.K, N=self.N, n_max_vq=self.n_max_vq, n_max_rmq=self.n_max_rmq)

    def to_dict(self):
        data = asdict(self)
        other = set().union(*_MODEL_FIELDS.values()) - _MODEL_FIELDS[self.model]
        return {k: v for k, v in data.items() if k not in other}


def read_config_file(path):
    """Read ``key=value`` settings with the dotenv grammar; ``-`` in keys becomes ``_``."""
    try:
        with open(path, encoding="utf-8") as handle:
            bindings = list(parse_stream(handle))
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    values = {}
    for binding in bindings:
        if binding.error or (binding.key is not None and binding.value is None):
            line = binding.original.string.strip()
            raise ConfigError(f"{path}:{binding.original.line}: expected key=value, got {line!r}")
        if binding.key is None:
            continue
        values[binding.key.replace("-", "_")] = binding.value
    logger.debug(f"read {len(values)} settings from {path}")
    return values
