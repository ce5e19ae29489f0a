"""Experiment configuration read from an INI file.

Every key has a default; the defaults reproduce the reference operating point
(ten observations, ``L = 10^4``, ``M = 3000``, ``N = 750``, ``L' = 2 10^4``,
``beta = 1.05``, ``kappa = 4``, prior standard deviation 0.45).

Example::

    [experiment]
    seed = 0
    n_designs = 1

    [testbed]
    n = 10
    sigma_eps = 0.09, 0.09, 0.03
    t_obs = 1, 2, 3

    [method]
    methods = no_error, uniform_error, hier_map, hier_full_bayes, embedded
    L = 10000
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .methods import METHODS, MethodConfig
from .testbed import DEFAULT_DELTA_V, DEFAULT_LAMBDA0, N_OUTPUTS

DEFAULT_SIGMA_EPS = (0.09, 0.09, 0.03)


@dataclass
class DataSection:
    n: int = 10
    sigma_eps: tuple = DEFAULT_SIGMA_EPS
    delta_v: float = DEFAULT_DELTA_V
    lambda0: tuple = DEFAULT_LAMBDA0
    t_obs: tuple = (1, 2, 3)

    def sigma_for(self, t: int) -> float:
        return float(self.sigma_eps[t - 1] if len(self.sigma_eps) > 1 else self.sigma_eps[0])


@dataclass
class SurrogateSection:
    n_train: int = 120
    exact: bool = False
    n_starts: int = 8
    lengthscale_low: float = 1e-2
    lengthscale_high: float = 10.0


@dataclass
class ConfidenceSection:
    grid_points: int = 21
    zeta: float = 0.95


@dataclass
class ExperimentConfig:
    seed: int = 0
    n_designs: int = 1
    testbed: DataSection = field(default_factory=DataSection)
    surrogate: SurrogateSection = field(default_factory=SurrogateSection)
    method: MethodConfig = field(default_factory=MethodConfig)
    methods: tuple = METHODS
    confidence: ConfidenceSection = field(default_factory=ConfidenceSection)
    x0: tuple = ()
    output_dir: str = "transcal_out"

    def validate(self) -> "ExperimentConfig":
        tb = self.testbed
        if tb.n < 2:
            raise ConfigError("testbed.n must be at least 2")
        if len(tb.sigma_eps) not in (1, N_OUTPUTS) or min(tb.sigma_eps) <= 0:
            raise ConfigError(f"testbed.sigma_eps needs 1 or {N_OUTPUTS} positive values")
        if len(tb.lambda0) != len(DEFAULT_LAMBDA0) or not all(0 <= v <= 1 for v in tb.lambda0):
            raise ConfigError("testbed.lambda0 needs six values in [0, 1]")
        if not tb.t_obs or any(t not in range(1, N_OUTPUTS + 1) for t in tb.t_obs):
            raise ConfigError(f"testbed.t_obs values must lie in 1..{N_OUTPUTS}")
        if self.n_designs < 1:
            raise ConfigError("experiment.n_designs must be at least 1")
        if self.surrogate.n_train < 2 or self.surrogate.n_starts < 1:
            raise ConfigError("surrogate.n_train must be >= 2 and n_starts >= 1")
        if not 0 < self.surrogate.lengthscale_low < self.surrogate.lengthscale_high:
            raise ConfigError("surrogate lengthscale bounds must satisfy 0 < low < high")
        if self.confidence.grid_points < 1 or not 0 < self.confidence.zeta < 1:
            raise ConfigError("confidence.grid_points must be >= 1 and zeta in (0, 1)")
        for x in self.x0:
            if len(x) != 3 or not all(0 <= v <= 1 for v in x):
                raise ConfigError("each x0 point needs three coordinates in [0, 1]")
        for m in self.methods:
            self.method.validate(m)
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, default=list)
        return hashlib.sha256(text.encode()).hexdigest()


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())


def _ints(text: str) -> tuple:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _points(text: str) -> tuple:
    return tuple(_floats(chunk) for chunk in text.split(";") if chunk.strip())


def _convert(name: str, raw: str, default):
    try:
        if isinstance(default, bool):
            return configparser.ConfigParser.BOOLEAN_STATES[raw.strip().lower()]
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return _ints(raw) if default and isinstance(default[0], int) else _floats(raw)
        return raw.strip()
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"bad value for {name!r}: {raw!r}") from exc


def _fill(obj, section, name: str):
    known = {f.name for f in fields(obj)}
    for key, raw in section.items():
        if key not in known:
            raise ConfigError(f"unknown key {key!r} in [{name}]")
        setattr(obj, key, _convert(f"{name}.{key}", raw, getattr(obj, key)))


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser()
    parser.optionxform = str  # keep key case (L, N, M)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    cfg = ExperimentConfig()
    for name in parser.sections():
        sec = parser[name]
        if name == "experiment":
            for key, raw in sec.items():
                if key not in ("seed", "n_designs"):
                    raise ConfigError(f"unknown key {key!r} in [experiment]")
                setattr(cfg, key, _convert(key, raw, 0))
        elif name == "testbed":
            _fill(cfg.testbed, sec, name)
        elif name == "surrogate":
            _fill(cfg.surrogate, sec, name)
        elif name == "confidence":
            _fill(cfg.confidence, sec, name)
        elif name == "method":
            sec = dict(sec)
            if "methods" in sec:
                cfg.methods = tuple(m.strip() for m in sec.pop("methods").split(",") if m.strip())
            _fill(cfg.method, sec, name)
        elif name == "predict":
            for key, raw in sec.items():
                if key != "x0":
                    raise ConfigError(f"unknown key {key!r} in [predict]")
                cfg.x0 = _points(raw)
        elif name == "output":
            for key, raw in sec.items():
                if key != "directory":
                    raise ConfigError(f"unknown key {key!r} in [output]")
                cfg.output_dir = raw.strip()
        else:
            raise ConfigError(f"unknown section [{name}]")
    return cfg.validate()


def load_config(path) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig().validate()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)
