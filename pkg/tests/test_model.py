"""Tests for model configuration, calibration thresholds and state handling."""
from __future__ import annotations

import json

import numpy as np
import pytest
from scipy.integrate import quad

from dgc.errors import ConfigError, MissingResidual
from dgc.gaussian import std_normal_survival
from dgc.model import (
    ModelConfig,
    PortfolioState,
    conditional_coefficients,
    default_config,
    default_threshold,
    dump_config,
    factor_decay,
    factor_volatility,
    load_config,
    load_state,
    step_variance,
    threshold_inverse,
    threshold_slope,
)

# -ndtri_exp(-0.5), i.e. the unique x with P(N(0,1) > x) = exp(-1/2),
# cross-checked by bisection on the survival function at dps=40
THRESHOLD_AT_HALF = -0.27028802073873585
EXP_MINUS_HALF = 0.60653065971263342


def make_config(**overrides):
    base = dict(rho_copula=0.3, kappa=0.25,
                hazards={-1: 0.01, 0: 0.01, 1: 0.01},
                horizon=10.0, seed=0)
    base.update(overrides)
    return ModelConfig(**base)


# ---------------------------------------------------------------------------
# decay schedule
# ---------------------------------------------------------------------------


def test_decay_starts_at_one_and_volatility_balances():
    kappa = 0.25
    assert factor_decay(0.0, kappa) == 1.0
    # remaining variance plus spent variance is one at every horizon
    for t in (0.3, 1.0, 4.0, 10.0):
        spent, _ = quad(lambda s: factor_volatility(s, kappa) ** 2, 0.0, t)
        total = factor_decay(t, kappa) ** 2 + spent
        assert abs(total - 1.0) < 1e-10


def test_step_variances_telescope():
    kappa, horizon = 0.25, 10.0
    grid = np.linspace(0.0, horizon, 201)
    steps = sum(step_variance(a, b, kappa) for a, b in zip(grid[:-1], grid[1:]))
    assert abs(steps + factor_decay(horizon, kappa) ** 2 - 1.0) < 1e-12
    assert all(step_variance(a, b, kappa) > 0 for a, b in zip(grid[:-1], grid[1:]))


# ---------------------------------------------------------------------------
# calibration thresholds
# ---------------------------------------------------------------------------


def test_threshold_reproduces_survival_curve():
    for rate in (0.005, 0.01, 0.1, 1.0):
        for t in (0.5, 1.0, 2.0, 5.0, 10.0):
            x = default_threshold(t, rate)
            want = np.exp(-rate * t)
            assert abs(std_normal_survival(x) - want) / want < 1e-9


def test_threshold_frozen_value():
    got = default_threshold(0.1, 5.0)
    assert got == pytest.approx(THRESHOLD_AT_HALF, rel=1e-12)
    assert std_normal_survival(got) == pytest.approx(EXP_MINUS_HALF, rel=1e-9)


def test_threshold_limits_and_monotonicity():
    assert default_threshold(0.0, 0.1) == -np.inf
    t = np.linspace(0.01, 40.0, 400)
    vals = default_threshold(t, 0.1)
    assert np.all(np.diff(vals) > 0)


def test_threshold_inverse_round_trip():
    rng = np.random.default_rng(4)
    for _ in range(50):
        rate = float(rng.uniform(0.005, 1.5))
        t = float(rng.uniform(0.01, 30.0))
        x = default_threshold(t, rate)
        assert threshold_inverse(x, rate) == pytest.approx(t, rel=1e-12)
    assert threshold_inverse(-np.inf, 0.1) == 0.0


def test_threshold_slope_matches_finite_difference():
    for rate in (0.005, 0.1, 1.0):
        for t in (0.1, 1.0, 5.0, 10.0):
            h = 1e-6 * max(t, 1.0)
            fd = (default_threshold(t + h, rate) - default_threshold(t - h, rate)) / (2 * h)
            got = threshold_slope(t, rate)
            assert abs(got - fd) / fd < 1e-6


def test_threshold_slope_deep_time_stays_finite():
    # rate * t = 600: both numerator and density underflow separately
    got = threshold_slope(6000.0, 0.1)
    assert np.isfinite(got) and got > 0.0


# ---------------------------------------------------------------------------
# conditional coefficients
# ---------------------------------------------------------------------------


def test_coefficients_frozen_example():
    c = conditional_coefficients(0.3, 2)
    assert c.rho == pytest.approx(0.1875, rel=1e-12)
    assert c.sigma**2 == pytest.approx(0.8615384615384616, rel=1e-12)
    assert c.residual_load == pytest.approx(0.23076923076923075, rel=1e-12)


def test_coefficients_no_defaults_and_independence():
    c = conditional_coefficients(0.3, 0)
    assert (c.rho, c.sigma) == (0.3, 1.0)
    assert c.residual_load == pytest.approx(0.3 / 0.7, rel=1e-15)
    c0 = conditional_coefficients(0.0, 3)
    assert (c0.rho, c0.sigma, c0.residual_load) == (0.0, 1.0, 0.0)


def test_coefficients_invariants():
    rng = np.random.default_rng(8)
    for _ in range(200):
        rho = float(rng.uniform(0.0, 0.99))
        k = int(rng.integers(0, 12))
        c = conditional_coefficients(rho, k)
        assert 0.0 <= c.rho < 1.0
        assert c.sigma <= 1.0 + 1e-15
        if rho == 0.0:
            assert c.sigma == 1.0
        else:
            assert c.sigma < 1.0 or k == 0
        if k >= 1:
            assert c.rho < rho or rho == 0.0
    with pytest.raises(ValueError):
        conditional_coefficients(1.0, 1)
    with pytest.raises(ValueError):
        conditional_coefficients(0.5, -1)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def test_config_validation():
    make_config()  # the base case is legal
    with pytest.raises(ConfigError):
        make_config(rho_copula=1.0)
    with pytest.raises(ConfigError):
        make_config(kappa=0.0)
    with pytest.raises(ConfigError):
        make_config(horizon=-1.0)
    with pytest.raises(ConfigError):
        make_config(hazards={-1: 0.01, 0: 0.01, 1: -0.2})
    with pytest.raises(ConfigError):
        make_config(hazards={-1: 0.01, 0: 0.01})  # no reference names
    with pytest.raises(ConfigError):
        make_config(hazards={-1: 0.01, 0: 0.01, 2: 0.01})  # gap at 1
    with pytest.raises(ConfigError):
        make_config(hazards={0: 0.01, 1: 0.01})  # bank missing


def test_config_names():
    cfg = make_config(hazards={-1: 0.01, 0: 0.02, 1: 0.03, 2: 0.04, 3: 0.05})
    assert cfg.names == (-1, 0, 1, 2, 3)
    assert cfg.reference_names == (1, 2, 3)


def test_config_file_round_trip(tmp_path):
    cfg = make_config(rho_copula=0.1 + 0.2, horizon=np.nextafter(10.0, 11.0))
    path = tmp_path / "model.json"
    dump_config(cfg, path)
    again = load_config(path)
    assert again == cfg  # bit-exact floats through the JSON layer


def test_config_file_diagnostics(tmp_path):
    path = tmp_path / "model.json"
    good = {"rho_copula": 0.3, "kappa": 0.25,
            "hazards": {"-1": 0.01, "0": 0.01, "1": 0.01},
            "horizon": 10.0, "seed": 0}

    bad = dict(good)
    del bad["kappa"]
    path.write_text(json.dumps(bad))
    with pytest.raises(ConfigError) as err:
        load_config(path)
    assert err.value.field == "kappa"

    bad = dict(good)
    bad["hazards"] = {"-1": 0.01, "0": 0.01, "one": 0.01}
    path.write_text(json.dumps(bad))
    with pytest.raises(ConfigError) as err:
        load_config(path)
    assert "hazards" in err.value.field

    bad = dict(good)
    bad["surprise"] = 1
    path.write_text(json.dumps(bad))
    with pytest.raises(ConfigError) as err:
        load_config(path)
    assert err.value.field == "surprise"

    path.write_text("{not json")
    with pytest.raises(ConfigError) as err:
        load_config(path)
    assert "line 1" in str(err.value)


def test_default_config_is_demo_shaped():
    cfg = default_config()
    assert cfg.names == (-1, 0, 1)
    assert cfg.kappa == 0.25
    assert cfg.horizon == 10.0
    assert all(rate > 0 for rate in cfg.hazards.values())


# ---------------------------------------------------------------------------
# portfolio state
# ---------------------------------------------------------------------------


def test_state_validation():
    PortfolioState(t=1.0, m={-1: 0.1, 0: -0.2, 1: 0.3}, defaults={}, residuals={})
    ok = PortfolioState(t=2.0, m={-1: 0.1, 0: -0.2, 1: 0.3},
                        defaults={1: 1.5}, residuals={1: 0.4})
    assert ok.defaults[1] == 1.5
    with pytest.raises(MissingResidual) as err:
        PortfolioState(t=2.0, m={-1: 0.1, 0: 0.0, 1: 0.3},
                       defaults={1: 1.5}, residuals={})
    assert "residuals[1]" in str(err.value)
    with pytest.raises(ConfigError):
        PortfolioState(t=2.0, m={-1: 0.1, 0: 0.0, 1: 0.3},
                       defaults={}, residuals={1: 0.4})  # residual without default
    with pytest.raises(ConfigError):
        PortfolioState(t=1.0, m={-1: 0.1, 0: 0.0, 1: 0.3},
                       defaults={1: 1.5}, residuals={1: 0.4})  # tau after t
    with pytest.raises(ConfigError):
        PortfolioState(t=1.0, m={-1: 0.1, 0: 0.0, 1: 0.3},
                       defaults={2: 0.5}, residuals={2: 0.1})  # unknown name
    with pytest.raises(ConfigError):
        PortfolioState(t=-1.0, m={-1: 0.0, 0: 0.0, 1: 0.0},
                       defaults={}, residuals={})
    with pytest.raises(ConfigError):
        PortfolioState(t=0.0, m={-1: np.nan, 0: 0.0, 1: 0.0},
                       defaults={}, residuals={})


def test_state_json_round_trip(tmp_path):
    state = PortfolioState(
        t=0.1 + 0.2,
        m={-1: 1e-17, 0: -0.1 + 0.3, 1: np.nextafter(0.5, 1.0), 2: -3.75},
        defaults={2: 0.2999999999999999},
        residuals={2: 5e-324},
    )
    path = tmp_path / "state.json"
    path.write_text(state.to_json())
    again = load_state(path)
    assert again == state  # bit-exact floats through the JSON layer


def test_state_alive_and_defaulted_views():
    state = PortfolioState(t=2.0, m={-1: 0.1, 0: 0.0, 1: 0.3, 2: -0.5},
                           defaults={1: 1.0}, residuals={1: 0.25})
    assert state.defaulted_names == (1,)
    assert state.alive_names == (-1, 0, 2)
