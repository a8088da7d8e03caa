"""Model configuration, calibration thresholds and portfolio state.

The factor of each name is a Brownian motion run through a deterministic
volatility schedule that spends total variance one: at time t the factor
still carries variance decay(t)**2 of terminal information.  A name defaults
when its terminal factor value lands below a moving threshold calibrated so
the survival curve is exactly exponential at the configured hazard rate.

Names are integers: -1 is the bank, 0 the counterparty, 1..n the reference
portfolio.  Configuration and state read and write JSON with float values
preserved bit-exactly (Python's repr round-trips doubles).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import log_ndtr, ndtri_exp

from .errors import ConfigError, MissingResidual
from .gaussian import LOG_SQRT_2PI

__all__ = [
    "ConditionalCoefficients",
    "ModelConfig",
    "PortfolioState",
    "conditional_coefficients",
    "default_config",
    "default_threshold",
    "dump_config",
    "factor_decay",
    "factor_volatility",
    "load_config",
    "load_state",
    "step_variance",
    "threshold_inverse",
    "threshold_slope",
]


# ---------------------------------------------------------------------------
# volatility schedule
# ---------------------------------------------------------------------------


def factor_decay(t, kappa: float):
    """Standard deviation of terminal information still unseen at time t."""
    return np.exp(-0.5 * kappa * np.asarray(t, dtype=float))


def factor_volatility(t, kappa: float):
    """Instantaneous factor volatility; integrates decay(0)^2 - decay(t)^2."""
    return np.sqrt(kappa) * np.exp(-0.5 * kappa * np.asarray(t, dtype=float))


def step_variance(t0: float, t1: float, kappa: float) -> float:
    """Variance accumulated by the factor between t0 and t1 < t0 is illegal."""
    if not t1 > t0:
        raise ValueError("need t1 > t0")
    return float(np.exp(-kappa * t0) - np.exp(-kappa * t1))


# ---------------------------------------------------------------------------
# calibration thresholds
# ---------------------------------------------------------------------------


def default_threshold(t, rate: float):
    """Threshold x(t) with P(N(0,1) > x(t)) = exp(-rate * t).

    Strictly increasing from -inf at t = 0; a name defaults by t exactly
    when its terminal factor value is at most x(t).
    """
    out = -ndtri_exp(-rate * np.asarray(t, dtype=float))
    return float(out) if np.ndim(t) == 0 else out


def threshold_inverse(x, rate: float):
    """Time t with default_threshold(t, rate) = x; total inverse on [-inf, inf)."""
    out = -log_ndtr(-np.asarray(x, dtype=float)) / rate
    return float(out) if np.ndim(x) == 0 else out


def threshold_slope(t, rate: float):
    """d/dt of default_threshold, assembled in logs: both the survival
    density exp(-rate t) and the normal density at the threshold underflow
    separately at long horizons while their ratio stays moderate."""
    tt = np.asarray(t, dtype=float)
    x = -ndtri_exp(-rate * tt)
    out = np.exp(np.log(rate) - rate * tt + 0.5 * x * x + LOG_SQRT_2PI)
    return float(out) if np.ndim(t) == 0 else out


# ---------------------------------------------------------------------------
# conditional coefficients
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConditionalCoefficients:
    """Equicorrelation geometry of the alive factors given defaulted ones.

    ``rho`` and ``sigma`` describe the post-conditioning panel; the
    ``residual_load`` scales the sum of defaulted residuals entering every
    alive coordinate's threshold argument.
    """

    rho: float
    sigma: float
    residual_load: float


def conditional_coefficients(rho_copula: float, defaulted_count: int) -> ConditionalCoefficients:
    """Panel coefficients after conditioning on ``defaulted_count`` residuals.

    Conditioning strictly tightens the panel: sigma <= 1 with equality only
    under independence, and rho drops below the copula correlation as soon
    as one residual is pinned.
    """
    if not 0.0 <= rho_copula < 1.0:
        raise ValueError("rho_copula must lie in [0, 1)")
    if defaulted_count < 0:
        raise ValueError("defaulted_count must be nonnegative")
    den = defaulted_count * rho_copula + 1.0
    rho = rho_copula / den
    sigma = np.sqrt((1.0 - rho_copula) * den / (den - rho_copula))
    residual_load = rho_copula / ((defaulted_count - 1) * rho_copula + 1.0)
    return ConditionalCoefficients(rho=rho, sigma=float(sigma),
                                   residual_load=residual_load)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def _require_number(value, fieldname: str, *, minimum=None,
                    strict: bool = False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(fieldname, "must be a number")
    value = float(value)
    if not np.isfinite(value):
        raise ConfigError(fieldname, "must be finite")
    if minimum is not None:
        if strict and not value > minimum:
            raise ConfigError(fieldname, f"must be greater than {minimum}")
        if not strict and not value >= minimum:
            raise ConfigError(fieldname, f"must be at least {minimum}")
    return value


@dataclass
class ModelConfig:
    """Full static description of one portfolio model."""

    rho_copula: float
    kappa: float
    hazards: dict[int, float]
    horizon: float
    seed: int = 0

    def __post_init__(self) -> None:
        self.rho_copula = _require_number(self.rho_copula, "rho_copula", minimum=0.0)
        if not self.rho_copula < 1.0:
            raise ConfigError("rho_copula", "must be below 1")
        self.kappa = _require_number(self.kappa, "kappa", minimum=0.0, strict=True)
        self.horizon = _require_number(self.horizon, "horizon", minimum=0.0, strict=True)
        if isinstance(self.seed, bool) or not isinstance(self.seed, int):
            raise ConfigError("seed", "must be an integer")
        if self.seed < 0:
            raise ConfigError("seed", "must be nonnegative")
        if not isinstance(self.hazards, dict):
            raise ConfigError("hazards", "must map names to rates")
        hazards = {}
        for name, rate in self.hazards.items():
            if isinstance(name, bool) or not isinstance(name, int):
                raise ConfigError(f"hazards[{name!r}]", "name must be an integer")
            hazards[name] = _require_number(rate, f"hazards[{name}]",
                                            minimum=0.0, strict=True)
        names = tuple(sorted(hazards))
        top = names[-1] if names else 0
        if top < 1 or names != tuple(range(-1, top + 1)):
            raise ConfigError(
                "hazards", "names must be exactly -1, 0 and 1..n with n >= 1")
        self.hazards = hazards

    @property
    def names(self) -> tuple[int, ...]:
        return tuple(sorted(self.hazards))

    @property
    def reference_names(self) -> tuple[int, ...]:
        return tuple(name for name in self.names if name >= 1)


def default_config(rho_copula: float = 0.3, seed: int = 0) -> ModelConfig:
    """The single-reference demonstration portfolio."""
    return ModelConfig(rho_copula=rho_copula, kappa=0.25,
                       hazards={-1: 0.01, 0: 0.01, 1: 0.01},
                       horizon=10.0, seed=seed)


_CONFIG_FIELDS = ("rho_copula", "kappa", "hazards", "horizon", "seed")


def _load_json(path) -> dict:
    text = Path(path).read_text()
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError("json", f"invalid JSON at line {err.lineno}: {err.msg}") from None
    if not isinstance(obj, dict):
        raise ConfigError("json", "top level must be an object")
    return obj


def _int_keyed(obj, fieldname: str) -> dict[int, float]:
    if not isinstance(obj, dict):
        raise ConfigError(fieldname, "must be an object")
    out = {}
    for key, value in obj.items():
        try:
            name = int(key)
        except (TypeError, ValueError):
            raise ConfigError(f"{fieldname}[{key!r}]",
                              "key must be an integer name") from None
        out[name] = _require_number(value, f"{fieldname}[{key}]")
    return out


def load_config(path) -> ModelConfig:
    """Read a model configuration, with field-level diagnostics on failure."""
    obj = _load_json(path)
    for key in obj:
        if key not in _CONFIG_FIELDS:
            raise ConfigError(str(key), "unknown field")
    for key in _CONFIG_FIELDS:
        if key not in obj:
            raise ConfigError(key, "missing")
    seed = obj["seed"]
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigError("seed", "must be an integer")
    return ModelConfig(rho_copula=obj["rho_copula"], kappa=obj["kappa"],
                       hazards=_int_keyed(obj["hazards"], "hazards"),
                       horizon=obj["horizon"], seed=seed)


def dump_config(config: ModelConfig, path) -> None:
    obj = {"rho_copula": config.rho_copula, "kappa": config.kappa,
           "hazards": {str(k): v for k, v in sorted(config.hazards.items())},
           "horizon": config.horizon, "seed": config.seed}
    Path(path).write_text(json.dumps(obj, indent=2) + "\n")


# ---------------------------------------------------------------------------
# portfolio state
# ---------------------------------------------------------------------------


@dataclass
class PortfolioState:
    """Market state at one instant: factor levels, defaults and residuals.

    ``m`` carries the running factor of every name, defaulted or not.
    Every defaulted name must carry a residual: the gap between its default
    threshold (fixed at the default time) and its factor at the *current*
    time ``t``, so the residual keeps moving with ``m`` after the default.
    A missing residual is a distinct, loud error because silently assuming
    zero changes every conditional law downstream.
    """

    t: float
    m: dict[int, float]
    defaults: dict[int, float] = field(default_factory=dict)
    residuals: dict[int, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.t = _require_number(self.t, "t", minimum=0.0)
        for name, value in self.m.items():
            _require_number(value, f"m[{name}]")
        for name in sorted(self.defaults):
            if name not in self.m:
                raise ConfigError(f"defaults[{name}]", "unknown name")
            tau = _require_number(self.defaults[name], f"defaults[{name}]",
                                  minimum=0.0)
            if tau > self.t:
                raise ConfigError(f"defaults[{name}]",
                                  "default time lies after the state time")
            if name not in self.residuals:
                raise MissingResidual(name)
        for name, value in self.residuals.items():
            if name not in self.defaults:
                raise ConfigError(f"residuals[{name}]", "name is not defaulted")
            _require_number(value, f"residuals[{name}]")

    @property
    def defaulted_names(self) -> tuple[int, ...]:
        return tuple(sorted(self.defaults))

    @property
    def alive_names(self) -> tuple[int, ...]:
        return tuple(sorted(set(self.m) - set(self.defaults)))

    def to_json(self) -> str:
        obj = {"t": self.t,
               "m": {str(k): v for k, v in sorted(self.m.items())},
               "defaults": {str(k): v for k, v in sorted(self.defaults.items())},
               "residuals": {str(k): v for k, v in sorted(self.residuals.items())}}
        return json.dumps(obj, indent=2) + "\n"


_STATE_FIELDS = ("t", "m", "defaults", "residuals")


def load_state(path) -> PortfolioState:
    """Read a portfolio state, with field-level diagnostics on failure."""
    obj = _load_json(path)
    for key in obj:
        if key not in _STATE_FIELDS:
            raise ConfigError(str(key), "unknown field")
    for key in _STATE_FIELDS:
        if key not in obj:
            raise ConfigError(key, "missing")
    return PortfolioState(t=obj["t"], m=_int_keyed(obj["m"], "m"),
                          defaults=_int_keyed(obj["defaults"], "defaults"),
                          residuals=_int_keyed(obj["residuals"], "residuals"))
