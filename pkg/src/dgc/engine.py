"""Conditional analytics: intensities, drifts, survival laws, measure change.

Everything in this module is a deterministic function of a model
configuration and a portfolio state.  The conditional law of the terminal
factor shortfalls given a state is an equicorrelated panel: pinning the
defaulted residuals tightens the correlation and scale
(``conditional_coefficients``) and shifts every threshold argument by a
common residual load.  Observation scopes differ only in which defaults are
pinned and which survivals constrain the panel:

* ``Scope.FULL``   pins every defaulted name and constrains every survivor.
* ``Scope.REFERENCE`` pins defaulted references only and constrains the
  surviving references only; the bank and counterparty are invisible.
* the reduction (``*_reduction`` functions) pins defaulted references but
  keeps the bank and counterparty as survival constraints.  Before the first
  party default it agrees pointwise with the full scope.

The one universal formula: the information drift of any name's Brownian
motion is (vol/decay) times the conditional mean of its terminal shortfall.
For a pinned name that mean is its residual over decay (a bridge), for a
constrained or unseen name it is a truncated first moment of the panel.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np

from .errors import DegenerateHazard, NonConvergence
from .gaussian import (
    EquicorrSpec,
    OneFactorPanel,
    QuadratureConfig,
    _log_phi,
    _log_surv,
)
from .model import (
    ConditionalCoefficients,
    ModelConfig,
    PortfolioState,
    conditional_coefficients,
    default_threshold,
    factor_decay,
    factor_volatility,
    threshold_slope,
)

__all__ = [
    "IntensityRecord",
    "Scope",
    "azema_supermartingale",
    "box_probability",
    "cds_clean_value",
    "factor_drift",
    "factor_drift_reduction",
    "intensity",
    "intensity_reduction",
    "intensity_report",
    "log_weight_increment",
    "measure_change_weights",
    "par_spread",
    "survival_probability",
]

_DEFAULT_QUAD = QuadratureConfig()


class Scope(Enum):
    """Which defaults the conditioning information contains."""

    FULL = "full"
    REFERENCE = "reference"


@dataclass(frozen=True)
class _View:
    """Resolved conditioning data for one state and scope."""

    pinned: tuple[int, ...]
    panel: tuple[int, ...]
    coefs: ConditionalCoefficients
    alpha: float
    residual_shift: float  # load * sum of pinned residuals / alpha


def _view(config: ModelConfig, state: PortfolioState, kind: str) -> _View:
    if kind == "full":
        pinned = state.defaulted_names
        panel = tuple(sorted(set(config.names) - set(pinned)))
    else:
        pinned = tuple(j for j in state.defaulted_names if j >= 1)
        panel = tuple(j for j in config.reference_names if j not in pinned)
        if kind == "reduction":
            panel = (-1, 0) + panel
        elif kind != "reference":
            raise ValueError(f"unknown view kind {kind!r}")
    coefs = conditional_coefficients(config.rho_copula, len(pinned))
    alpha = float(factor_decay(state.t, config.kappa))
    residual_sum = sum(state.residuals[i] for i in pinned)
    return _View(pinned=pinned, panel=panel, coefs=coefs, alpha=alpha,
                 residual_shift=coefs.residual_load * residual_sum / alpha)


_SCOPE_KIND = {Scope.FULL: "full", Scope.REFERENCE: "reference"}


def _z_args(config: ModelConfig, state: PortfolioState, view: _View,
            names: tuple[int, ...], horizons: dict[int, float] | None = None) -> np.ndarray:
    """Threshold arguments of the panel coordinates, shift included."""
    out = np.empty(len(names))
    for idx, name in enumerate(names):
        u = state.t if horizons is None else horizons.get(name, state.t)
        x = default_threshold(u, config.hazards[name])
        out[idx] = (x - state.m[name]) / view.alpha - view.residual_shift
    return out


def _spec(view: _View, size: int) -> EquicorrSpec:
    return EquicorrSpec(size=size, rho=view.coefs.rho, sigma=view.coefs.sigma)


def _certified(maker, quad_cfg: QuadratureConfig, what: str):
    base = maker(quad_cfg.node_count)
    fine = maker(2 * quad_cfg.node_count)
    value, scale = base[0], max(base[1], fine[1])
    if abs(value - fine[0]) > quad_cfg.refinement_tolerance * (scale + 1e-250):
        raise NonConvergence(f"{what} moved under node doubling")
    return fine[0]


def _log_mass(z: np.ndarray, spec: EquicorrSpec, quad_cfg: QuadratureConfig) -> float:
    def maker(nodes):
        panel = OneFactorPanel(z[None, :], spec.rho, spec.sigma, nodes,
                               quad_cfg.log_drop)
        return float(panel.log_mass[0]), abs(float(panel.log_mass[0])) + 1.0
    return _certified(maker, quad_cfg, "survival mass")


def _gradient(z: np.ndarray, j: int, spec: EquicorrSpec,
              quad_cfg: QuadratureConfig) -> float:
    def maker(nodes):
        panel = OneFactorPanel(z[None, :], spec.rho, spec.sigma, nodes,
                               quad_cfg.log_drop)
        val = float(panel.hazard_gradient(j)[0])
        return val, abs(val)
    return _certified(maker, quad_cfg, "hazard gradient")


def _moment_ratio(z: np.ndarray, k: int, shift: float, spec: EquicorrSpec,
                  quad_cfg: QuadratureConfig) -> float:
    def maker(nodes):
        panel = OneFactorPanel(z[None, :], spec.rho, spec.sigma, nodes,
                               quad_cfg.log_drop)
        val = float(panel.conditional_moment(k, shift)[0])
        return val, float(panel.moment_resolution(k)[0]) + abs(shift)
    return _certified(maker, quad_cfg, "conditional moment")


def _is_pristine(state: PortfolioState) -> bool:
    return (not state.defaults) and all(v == 0.0 for v in state.m.values())


# ---------------------------------------------------------------------------
# intensities
# ---------------------------------------------------------------------------


def _intensity_from_view(config: ModelConfig, state: PortfolioState,
                         name: int, view: _View,
                         quad_cfg: QuadratureConfig) -> float:
    if state.t == 0.0:
        # the direct formula is 0 * inf at the start; the limit is the
        # hazard rate, but only from the pristine state
        if _is_pristine(state):
            return config.hazards[name]
        raise DegenerateHazard(
            "intensity at t = 0 is only defined as a limit from the pristine state")
    z = _z_args(config, state, view, view.panel)
    j = view.panel.index(name)
    grad = _gradient(z, j, _spec(view, len(view.panel)), quad_cfg)
    return threshold_slope(state.t, config.hazards[name]) / view.alpha * grad


def intensity(config: ModelConfig, state: PortfolioState, name: int,
              scope: Scope = Scope.FULL,
              quad_cfg: QuadratureConfig | None = None) -> float:
    """Default intensity of ``name`` given the scope's information; zero
    after the name's own (scope-visible) default."""
    quad_cfg = quad_cfg or _DEFAULT_QUAD
    if scope is Scope.REFERENCE and name < 1:
        raise ValueError("the reference scope observes no bank or counterparty default")
    view = _view(config, state, _SCOPE_KIND[scope])
    if name in view.pinned:
        return 0.0
    return _intensity_from_view(config, state, name, view, quad_cfg)


def intensity_reduction(config: ModelConfig, state: PortfolioState, name: int,
                        quad_cfg: QuadratureConfig | None = None) -> float:
    """Intensity under reference conditioning that still counts the bank and
    counterparty as survival constraints.  Agrees with the full scope until
    a party defaults; zero after the name's own default."""
    quad_cfg = quad_cfg or _DEFAULT_QUAD
    view = _view(config, state, "reduction")
    if name in view.pinned:
        return 0.0
    if name not in view.panel:
        raise ValueError(f"name {name} is not a reduction coordinate")
    return _intensity_from_view(config, state, name, view, quad_cfg)


# ---------------------------------------------------------------------------
# factor drifts
# ---------------------------------------------------------------------------


def _drift_from_view(config: ModelConfig, state: PortfolioState, name: int,
                     view: _View, quad_cfg: QuadratureConfig) -> float:
    vol = float(factor_volatility(state.t, config.kappa))
    if name in view.pinned:
        return vol / view.alpha * state.residuals[name] / view.alpha
    names = view.panel
    z = _z_args(config, state, view, names)
    if name in names:
        k = names.index(name)
    else:
        # unseen coordinate: no survival factor of its own, only the shared
        # factor couples it to the panel
        names = names + (name,)
        z = np.append(z, -np.inf)
        k = len(names) - 1
    ratio = _moment_ratio(z, k, view.residual_shift,
                          _spec(view, len(names)), quad_cfg)
    return vol / view.alpha * ratio


def factor_drift(config: ModelConfig, state: PortfolioState, name: int,
                 scope: Scope = Scope.FULL,
                 quad_cfg: QuadratureConfig | None = None) -> float:
    """Information drift of the name's factor Brownian motion in the scope."""
    quad_cfg = quad_cfg or _DEFAULT_QUAD
    view = _view(config, state, _SCOPE_KIND[scope])
    return _drift_from_view(config, state, name, view, quad_cfg)


def factor_drift_reduction(config: ModelConfig, state: PortfolioState, name: int,
                           quad_cfg: QuadratureConfig | None = None) -> float:
    """Information drift under reference conditioning plus party survival."""
    quad_cfg = quad_cfg or _DEFAULT_QUAD
    view = _view(config, state, "reduction")
    return _drift_from_view(config, state, name, view, quad_cfg)


# ---------------------------------------------------------------------------
# survival laws
# ---------------------------------------------------------------------------


def azema_supermartingale(config: ModelConfig, state: PortfolioState,
                          quad_cfg: QuadratureConfig | None = None) -> float:
    """Conditional probability that both parties are alive, given the
    reference scope: the ratio of the party-keeping mass to the
    reference-only mass."""
    quad_cfg = quad_cfg or _DEFAULT_QUAD
    wide = _view(config, state, "reduction")
    narrow = _view(config, state, "reference")
    z_wide = _z_args(config, state, wide, wide.panel)
    num = _log_mass(z_wide, _spec(wide, len(wide.panel)), quad_cfg)
    if narrow.panel:
        z_narrow = _z_args(config, state, narrow, narrow.panel)
        den = _log_mass(z_narrow, _spec(narrow, len(narrow.panel)), quad_cfg)
    else:
        den = 0.0
    return float(np.exp(num - den))


def survival_probability(config: ModelConfig, state: PortfolioState, name: int,
                         u: float, scope: Scope = Scope.FULL,
                         quad_cfg: QuadratureConfig | None = None) -> float:
    """P(name survives past u) given the scope's information at state.t."""
    quad_cfg = quad_cfg or _DEFAULT_QUAD
    if u < state.t:
        raise ValueError("survival horizon lies before the state time")
    view = _view(config, state, _SCOPE_KIND[scope])
    if name in view.pinned:
        return 0.0
    names = view.panel
    if name not in names:
        names = names + (name,)
    spec = _spec(view, len(names))
    z_num = _z_args(config, state, view, names, horizons={name: u})
    num = _log_mass(z_num, spec, quad_cfg)
    z_den = _z_args(config, state, view, names)
    if name not in view.panel:
        z_den[names.index(name)] = -np.inf
    den = _log_mass(z_den, spec, quad_cfg)
    return float(np.exp(num - den))


def box_probability(config: ModelConfig, state: PortfolioState,
                    boxes: dict[int, tuple[float, float]],
                    scope: Scope = Scope.FULL,
                    quad_cfg: QuadratureConfig | None = None) -> float:
    """P(each boxed name defaults inside its (lo, hi] window) given the scope.

    Boxed names must not be pinned; a boxed panel coordinate needs
    lo >= state.t (its survival to state.t is already conditioned on).
    Upper edges may be inf.
    """
    quad_cfg = quad_cfg or _DEFAULT_QUAD
    view = _view(config, state, _SCOPE_KIND[scope])
    if not boxes:
        raise ValueError("need at least one boxed name")
    for name, (lo, hi) in boxes.items():
        if name in view.pinned:
            raise ValueError(f"name {name} is already defaulted in this scope")
        if not 0.0 <= lo < hi:
            raise ValueError(f"box for name {name} must satisfy 0 <= lo < hi")
        if name in view.panel and lo < state.t:
            raise ValueError(f"box for name {name} must start at or after state.t")

    plain = [n for n in view.panel if n not in boxes]
    boxed = sorted(boxes)
    z_plain = _z_args(config, state, view, tuple(plain))
    z_lo = np.array([
        (default_threshold(boxes[n][0], config.hazards[n]) - state.m[n]) / view.alpha
        - view.residual_shift for n in boxed])
    z_hi = np.array([
        (default_threshold(boxes[n][1], config.hazards[n]) - state.m[n]) / view.alpha
        - view.residual_shift if np.isfinite(boxes[n][1]) else np.inf
        for n in boxed])

    rho, sigma = view.coefs.rho, view.coefs.sigma
    srho = sigma * np.sqrt(rho)
    ssig = sigma * np.sqrt(1.0 - rho)

    def integral(nodes: int) -> tuple[float, float]:
        xg, wg = _box_leggauss(nodes)
        y = _BOX_HALFWIDTH * xg
        dens = np.exp(_log_phi(y)) * wg * _BOX_HALFWIDTH
        surv_lo = np.exp(_log_surv((z_lo[None, :] - srho * y[:, None]) / ssig))
        with np.errstate(invalid="ignore"):
            surv_hi = np.where(np.isposinf(z_hi)[None, :], 0.0,
                               np.exp(_log_surv((z_hi[None, :] - srho * y[:, None]) / ssig)))
        factors = np.prod(surv_lo - surv_hi, axis=1)
        if plain:
            zp = np.exp(_log_surv((z_plain[None, :] - srho * y[:, None]) / ssig))
            factors = factors * np.prod(zp, axis=1)
        val = float(np.sum(dens * factors))
        return val, 1.0

    num = _certified(integral, quad_cfg, "box probability")
    if plain:
        den = np.exp(_log_mass(z_plain, _spec(view, len(plain)), quad_cfg))
    else:
        den = 1.0
    return num / den


_BOX_HALFWIDTH = 8.5


@lru_cache(maxsize=8)
def _box_leggauss(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return x, w


# ---------------------------------------------------------------------------
# credit default swap
# ---------------------------------------------------------------------------


def cds_payment_grid(t0: float, maturity: float) -> np.ndarray:
    """Semiannual payment dates of a contract written at ``t0``."""
    if maturity <= t0:
        raise ValueError("maturity must lie after the valuation time")
    grid = list(np.arange(t0 + 0.5, maturity + 1e-12, 0.5))
    if not grid or grid[-1] < maturity - 1e-12:
        grid.append(maturity)
    return np.asarray(grid)


def cds_leg_value(survivals: np.ndarray, grid: np.ndarray, t0: float,
                  spread: float, *, rate: float = 0.02,
                  recovery: float = 0.4) -> np.ndarray:
    """Protection minus premium leg given survival probabilities on ``grid``.

    ``survivals`` holds the grid dates along its last axis; any leading axes
    are carried through, so one call prices a whole batch of paths whose
    curves share a valuation time.  Default payments settle at the end of
    the half-year in which they occur, premiums accrue to survivors only
    and discounting is flat.
    """
    q = np.asarray(survivals, dtype=float)
    qprev = np.concatenate([np.ones(q.shape[:-1] + (1,)), q[..., :-1]], axis=-1)
    disc = np.exp(-rate * (grid - t0))
    accrual = np.diff(grid, prepend=t0)
    protection = (1.0 - recovery) * np.sum(disc * (qprev - q), axis=-1)
    premium = spread * np.sum(accrual * disc * q, axis=-1)
    return protection - premium


def cds_clean_value(config: ModelConfig, state: PortfolioState, name: int,
                    maturity: float, spread: float, *, rate: float = 0.02,
                    recovery: float = 0.4, scope: Scope = Scope.FULL,
                    quad_cfg: QuadratureConfig | None = None) -> float:
    """Clean value of a unit-notional swap on ``name``, legs per
    :func:`cds_leg_value` on the grid of :func:`cds_payment_grid`."""
    grid = cds_payment_grid(state.t, maturity)
    q = np.array([survival_probability(config, state, name, u, scope, quad_cfg)
                  for u in grid])
    return float(cds_leg_value(q, grid, state.t, spread,
                               rate=rate, recovery=recovery))


def par_spread(config: ModelConfig, name: int, maturity: float, *,
               rate: float = 0.02, recovery: float = 0.4,
               scope: Scope = Scope.FULL,
               quad_cfg: QuadratureConfig | None = None) -> float:
    """Spread that zeroes the inception clean value; the value is linear in
    the spread, so the ratio of the legs is exact."""
    state = PortfolioState(t=0.0, m={n: 0.0 for n in config.names},
                           defaults={}, residuals={})
    protection = cds_clean_value(config, state, name, maturity, 0.0,
                                 rate=rate, recovery=recovery, scope=scope,
                                 quad_cfg=quad_cfg)
    with_spread = cds_clean_value(config, state, name, maturity, 1.0,
                                  rate=rate, recovery=recovery, scope=scope,
                                  quad_cfg=quad_cfg)
    annuity = protection - with_spread
    return protection / annuity


# ---------------------------------------------------------------------------
# measure change
# ---------------------------------------------------------------------------


def measure_change_weights(config: ModelConfig, state: PortfolioState,
                           quad_cfg: QuadratureConfig | None = None) -> dict[int, float]:
    """Loadings of the change-of-measure martingale on each compensated factor.

    Surviving coordinates load with the gap of their hazard gradients
    between the party-keeping and reference panels; pinned coordinates pick
    up the common residual-load backflow.  The load is calibrated so pinned
    coordinates are exactly orthogonal to the martingale.
    """
    quad_cfg = quad_cfg or _DEFAULT_QUAD
    wide = _view(config, state, "reduction")
    narrow = _view(config, state, "reference")
    spec_w = _spec(wide, len(wide.panel))
    z_w = _z_args(config, state, wide, wide.panel)
    grads_w = {}
    for idx, name in enumerate(wide.panel):
        grads_w[name] = _gradient(z_w, idx, spec_w, quad_cfg)
    grads_n = {}
    if narrow.panel:
        spec_n = _spec(narrow, len(narrow.panel))
        z_n = _z_args(config, state, narrow, narrow.panel)
        for idx, name in enumerate(narrow.panel):
            grads_n[name] = _gradient(z_n, idx, spec_n, quad_cfg)

    weights = {}
    for name in config.names:
        if name in wide.panel:
            weights[name] = (grads_w[name] - grads_n.get(name, 0.0)) / wide.alpha
    backflow = (sum(grads_w.values()) - sum(grads_n.values()))
    for name in wide.pinned:
        weights[name] = -wide.coefs.residual_load * backflow / wide.alpha
    return weights


def _compensator_gap(config: ModelConfig, state: PortfolioState,
                     quad_cfg: QuadratureConfig) -> float:
    gap = 0.0
    for j in config.reference_names:
        if j in state.defaults:
            continue
        gap += (intensity_reduction(config, state, j, quad_cfg)
                - intensity(config, state, j, Scope.REFERENCE, quad_cfg))
    return gap


def log_weight_increment(config: ModelConfig, state_from: PortfolioState,
                         state_to: PortfolioState,
                         quad_cfg: QuadratureConfig | None = None) -> float:
    """Log increment of the invariance-measure density over one grid step.

    The diffusion part uses left-node loadings with the exact conditional
    variance of the step; the survival compensator integrates piecewise,
    splitting at each reference default inside the step, and each default
    contributes the intensity ratio at its exact time with left-node
    factors and the pre-default pattern.
    """
    quad_cfg = quad_cfg or _DEFAULT_QUAD
    if not state_to.t > state_from.t:
        raise ValueError("states must be in increasing time order")
    dt = state_to.t - state_from.t
    rho = config.rho_copula

    weights = measure_change_weights(config, state_from, quad_cfg)
    vol = float(factor_volatility(state_from.t, config.kappa))
    total = 0.0
    wvals = []
    for name in config.names:
        w = weights[name]
        wvals.append(w)
        drift = _drift_from_view(config, state_from, name,
                                 _view(config, state_from, "reference"), quad_cfg)
        compensated = (state_to.m[name] - state_from.m[name]) - vol * drift * dt
        total += w * compensated
    wvals = np.asarray(wvals)
    vstep = float(np.exp(-config.kappa * state_from.t)
                  - np.exp(-config.kappa * state_to.t))
    variance = vstep * ((1.0 - rho) * np.sum(wvals**2) + rho * np.sum(wvals) ** 2)
    total -= 0.5 * variance

    events = sorted((tau, j) for j, tau in state_to.defaults.items()
                    if j not in state_from.defaults and j >= 1)
    pattern = dict(state_from.defaults)
    residuals = dict(state_from.residuals)
    cursor = state_from.t
    for tau, j in events:
        left = PortfolioState(t=cursor, m=dict(state_from.m),
                              defaults=dict(pattern), residuals=dict(residuals))
        total -= _compensator_gap(config, left, quad_cfg) * (tau - cursor)
        at_tau = PortfolioState(t=tau, m=dict(state_from.m),
                                defaults=dict(pattern), residuals=dict(residuals))
        num = intensity_reduction(config, at_tau, j, quad_cfg)
        den = intensity(config, at_tau, j, Scope.REFERENCE, quad_cfg)
        total += float(np.log(num / den))
        pattern[j] = tau
        residuals[j] = float(default_threshold(tau, config.hazards[j])
                             - state_from.m[j])
        cursor = tau
    left = PortfolioState(t=cursor, m=dict(state_from.m),
                          defaults=dict(pattern), residuals=dict(residuals))
    total -= _compensator_gap(config, left, quad_cfg) * (state_to.t - cursor)
    return float(total)


# ---------------------------------------------------------------------------
# reporting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IntensityRecord:
    name: int
    scope: str
    value: float


def intensity_report(config: ModelConfig, state: PortfolioState,
                     quad_cfg: QuadratureConfig | None = None) -> list[IntensityRecord]:
    """All defined intensities of every name at the state, one row each."""
    rows = []
    for name in config.names:
        rows.append(IntensityRecord(name, "full",
                                    intensity(config, state, name, Scope.FULL, quad_cfg)))
        if name >= 1:
            rows.append(IntensityRecord(name, "reference",
                                        intensity(config, state, name,
                                                  Scope.REFERENCE, quad_cfg)))
        rows.append(IntensityRecord(name, "reduction",
                                    intensity_reduction(config, state, name, quad_cfg)))
    return rows
