"""Experiment configuration files.

Configs are INI files with four sections.  Every key is optional except
``experiment.kind``; unknown sections or keys are rejected so that typos
fail loudly.  Lists are comma separated.

    [experiment]
    kind = glm_stream          ; glm_stream glm_offline se_sweep landscape
                               ; phase_diagram cluster_stream tmax_study
    name = fig1-left
    seeds = 0, 1, 2

    [model]
    prior = gauss_bernoulli    ; gauss_bernoulli rademacher gaussian truncated_nonneg_gaussian
    rho = 0.3
    channel = gaussian         ; gaussian probit
    delta = 1e-8
    delta0 = 1e-8              ; true noise, defaults to delta
    R = 5
    sigma2 = 1.0

    [geometry]
    N = 2000
    alpha_b = 0.1, 0.35, 0.5
    num_batches = 30
    alpha_max = 3.0            ; overrides num_batches: ceil(alpha_max / alpha_b) per batch size
    alphas = 0.5, 1.0          ; offline grids

    [algorithm]
    method = mini_amp          ; mini_amp vb adf
    t_max = 200
    t_max_values = 2, 5, 10, converged
    tol = 1e-13
    damping = 1.0
    learn_noise = false
    init_batches = 5
"""

from __future__ import annotations

import configparser
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

from ..denoisers import ChannelSpec, PriorSpec
from ..errors import ConfigError, DomainError

KINDS = ("glm_stream", "glm_offline", "se_sweep", "landscape", "phase_diagram", "cluster_stream", "tmax_study")
METHODS = ("mini_amp", "vb", "adf")
PRIORS = ("gauss_bernoulli", "rademacher", "gaussian", "truncated_nonneg_gaussian")
CHANNELS = ("gaussian", "probit")

SCHEMA = {
    "experiment": {"kind": str, "name": str, "seeds": "ints"},
    "model": {"prior": str, "rho": float, "channel": str, "delta": float, "delta0": float, "R": int,
              "sigma2": float},
    "geometry": {"N": int, "alpha_b": "floats", "num_batches": int, "alpha_max": float,
                 "alphas": "floats"},
    "algorithm": {"method": str, "t_max": int, "t_max_values": "tmax", "tol": float, "damping": float,
                  "learn_noise": bool, "init_batches": int},
}


@dataclass
class ExperimentConfig:
    kind: str
    name: str = ""
    seeds: list = field(default_factory=lambda: [0])
    prior: str = "gauss_bernoulli"
    rho: float = 0.3
    channel: str = "gaussian"
    delta: float = 1e-8
    delta0: float | None = None
    R: int = 5
    sigma2: float = 1.0
    N: int = 2000
    alpha_b: list = field(default_factory=lambda: [0.35])
    num_batches: int = 10
    alpha_max: float | None = None
    alphas: list = field(default_factory=list)
    method: str = "mini_amp"
    t_max: int = 200
    t_max_values: list = field(default_factory=lambda: [2, 5, 10, None])
    tol: float = 1e-13
    damping: float = 1.0
    learn_noise: bool = False
    init_batches: int = 5

    def __post_init__(self):
        self.name = self.name or self.kind
        self.validate()

    def validate(self):
        checks = [
            (self.kind in KINDS, f"experiment.kind must be one of {', '.join(KINDS)}"),
            (self.method in METHODS, f"algorithm.method must be one of {', '.join(METHODS)}"),
            (self.prior in PRIORS, f"model.prior must be one of {', '.join(PRIORS)}"),
            (self.channel in CHANNELS, f"model.channel must be one of {', '.join(CHANNELS)}"),
            (len(self.seeds) > 0 and all(s >= 0 for s in self.seeds), "experiment.seeds must be non-negative"),
            (0.0 < self.rho <= 1.0, "model.rho must lie in (0, 1]"),
            (self.delta >= 0.0, "model.delta must be non-negative"),
            (self.delta0 is None or self.delta0 >= 0.0, "model.delta0 must be non-negative"),
            (self.R >= 1, "model.R must be >= 1"),
            (self.sigma2 > 0.0, "model.sigma2 must be positive"),
            (self.N >= 1, "geometry.N must be >= 1"),
            (len(self.alpha_b) > 0 and all(a > 0 for a in self.alpha_b), "geometry.alpha_b must be positive"),
            (self.num_batches >= 1, "geometry.num_batches must be >= 1"),
            (self.alpha_max is None or self.alpha_max > 0, "geometry.alpha_max must be positive"),
            (all(a > 0 for a in self.alphas), "geometry.alphas must be positive"),
            (self.t_max >= 1, "algorithm.t_max must be >= 1"),
            (all(t is None or t >= 1 for t in self.t_max_values), "algorithm.t_max_values must be >= 1"),
            (self.tol > 0.0, "algorithm.tol must be positive"),
            (0.0 < self.damping <= 1.0, "algorithm.damping must lie in (0, 1]"),
            (self.init_batches >= 0, "algorithm.init_batches must be >= 0"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)
        if self.kind in ("glm_offline",) and not self.alphas:
            raise ConfigError("geometry.alphas is required for glm_offline")
        if self.kind == "cluster_stream" and self.delta <= 0:
            raise ConfigError("model.delta must be positive for cluster_stream")
        try:
            self.prior_spec()
            self.channel_spec()
        except DomainError as err:
            raise ConfigError(str(err)) from err

    def batches_for(self, alpha_b) -> int:
        if self.alpha_max is None:
            return self.num_batches
        return max(int(math.ceil(self.alpha_max / alpha_b - 1e-9)), 1)

    def prior_spec(self) -> PriorSpec:
        if self.prior == "gauss_bernoulli":
            return PriorSpec.gauss_bernoulli(self.rho)
        if self.prior == "rademacher":
            return PriorSpec.rademacher()
        if self.prior == "gaussian":
            return PriorSpec.gaussian(variance=self.sigma2)
        return PriorSpec.truncated_nonneg_gaussian(self.sigma2)

    def channel_spec(self) -> ChannelSpec:
        if self.channel == "gaussian":
            return ChannelSpec.gaussian(self.delta, self.delta0)
        return ChannelSpec.probit(self.delta, self.delta0)

    def to_dict(self):
        return asdict(self)

    def config_hash(self) -> str:
        """Short SHA-256 of the canonical JSON form; the join key of result rows."""
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]


def _parse_value(kind, raw, where):
    raw = raw.strip()
    try:
        if kind is str:
            return raw
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        items = [s.strip() for s in raw.split(",") if s.strip()]
        if kind == "ints":
            return [int(s) for s in items]
        if kind == "floats":
            return [float(s) for s in items]
        if kind == "tmax":
            return [None if s.lower() == "converged" else int(s) for s in items]
    except ValueError:
        raise ConfigError(f"cannot parse {where} = {raw!r}") from None
    raise ConfigError(f"unsupported type for {where}")


def parse_config(text, source="<string>") -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as err:
        raise ConfigError(f"{source}: {err}") from err
    values = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {section}.{key}")
            values[key] = _parse_value(SCHEMA[section][key], raw, f"{section}.{key}")
    if "kind" not in values:
        raise ConfigError("experiment.kind is required")
    return ExperimentConfig(**values)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    return parse_config(text, source=str(path))
