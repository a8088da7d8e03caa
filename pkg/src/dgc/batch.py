"""Vectorized conditional analytics over cross sections of paths.

Mirrors the pointwise engine on arrays: paths sharing a default pattern
share one quadrature panel per step, warm started per path, and panels
that reduce to a single live coordinate drop to closed normal formulas.
Production statistics run through this module; the pointwise engine is
the oracle in tests and still handles the rare steps flagged here (two
or more reference defaults inside one step).

Unlike the pointwise engine, nothing here certifies itself by node
doubling: the node counts below were fixed by matching the engine to
well under statistical resolution, which is what the accompanying tests
enforce.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .engine import Scope, intensity, intensity_reduction, log_weight_increment
from .errors import DegenerateHazard
from .gaussian import OneFactorPanel, _log_surv, _mills
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
from .simulate import SimulationBlock, iter_blocks


@dataclass(frozen=True)
class BatchQuadrature:
    """Node policy for batched panels; heavier only when correlation is."""

    low_node_count: int = 48
    high_node_count: int = 96
    high_rho_cutoff: float = 0.7
    log_drop: float = 30.0

    def node_count(self, rho: float) -> int:
        return self.high_node_count if rho >= self.high_rho_cutoff else self.low_node_count


_DEFAULT = BatchQuadrature()


class WarmStore:
    """Per-path Newton warm starts, one slot per panel label.

    The panel mode is a scalar per path whatever the panel width, so a
    slot stays valid when a path migrates between default patterns; a
    fresh slot starts at zero, which is exactly the cold start.
    """

    def __init__(self, path_count: int) -> None:
        self._count = path_count
        self._slots: dict[str, np.ndarray] = {}

    def modes(self, label: str, rows: np.ndarray) -> np.ndarray:
        slot = self._slots.get(label)
        if slot is None:
            slot = self._slots[label] = np.zeros(self._count)
        return slot[rows]

    def store(self, label: str, rows: np.ndarray, modes: np.ndarray) -> None:
        slot = self._slots.setdefault(label, np.zeros(self._count))
        slot[rows] = modes


@dataclass(frozen=True)
class CrossSection:
    """Snapshot of many paths, each at its own evaluation time.

    ``taus`` and ``terminals`` describe the whole path as simulated; the
    default pattern at the snapshot is derived by comparing ``taus`` with
    ``times`` row by row, and the residual of a defaulted name is always
    ``terminals - m`` of its column.
    """

    times: np.ndarray      # (paths,)
    m: np.ndarray          # (paths, names)
    taus: np.ndarray       # (paths, names)
    terminals: np.ndarray  # (paths, names)


def section_at(block: SimulationBlock, step_index: int) -> CrossSection:
    count = block.factors.shape[0]
    return CrossSection(times=np.full(count, float(block.times[step_index])),
                        m=block.factors[:, step_index, :],
                        taus=block.taus, terminals=block.terminals)


# ---------------------------------------------------------------------------
# pattern grouping and panel geometry
# ---------------------------------------------------------------------------


def _party_columns(config: ModelConfig) -> tuple[int, ...]:
    return tuple(i for i, n in enumerate(config.names) if n < 1)


def _reference_columns(config: ModelConfig) -> tuple[int, ...]:
    return tuple(i for i, n in enumerate(config.names) if n >= 1)


def _default_mask(config: ModelConfig, section: CrossSection, kind: str) -> np.ndarray:
    mask = section.taus <= section.times[:, None]
    if kind != "full":
        mask = mask.copy()
        mask[:, list(_party_columns(config))] = False
    return mask


def _groups(mask: np.ndarray, rows: np.ndarray):
    """Yield (pattern, global row indices) over the given candidate rows."""
    if rows.size == 0:
        return
    patterns, inverse = np.unique(mask[rows], axis=0, return_inverse=True)
    for g in range(patterns.shape[0]):
        yield tuple(map(bool, patterns[g])), rows[inverse == g]


@dataclass(frozen=True)
class _Geometry:
    """Panel geometry of one pattern group under one scope.

    ``layout`` lists the z-matrix columns: live panel coordinates first,
    then coordinates present only through the shared factor (held at
    -inf unless a horizon override makes them live).
    """

    rows: np.ndarray
    t: np.ndarray
    alpha: np.ndarray
    shift: np.ndarray
    coefs: ConditionalCoefficients
    pinned_cols: tuple[int, ...]
    panel_cols: tuple[int, ...]
    dead_cols: tuple[int, ...]

    @property
    def layout(self) -> tuple[int, ...]:
        return self.panel_cols + self.dead_cols


def _geometry(config: ModelConfig, section: CrossSection, rows: np.ndarray,
              pattern: tuple[bool, ...], kind: str,
              times: np.ndarray | None = None) -> _Geometry:
    parties = _party_columns(config)
    refs = _reference_columns(config)
    if kind == "full":
        pinned = tuple(i for i in range(len(pattern)) if pattern[i])
        panel = tuple(i for i in range(len(pattern)) if not pattern[i])
        dead: tuple[int, ...] = ()
    elif kind in ("reference", "reduction"):
        pinned = tuple(i for i in refs if pattern[i])
        alive = tuple(i for i in refs if not pattern[i])
        if kind == "reduction":
            panel, dead = parties + alive, ()
        else:
            panel, dead = alive, parties
    else:
        raise ValueError(f"unknown scope kind {kind!r}")
    coefs = conditional_coefficients(config.rho_copula, len(pinned))
    t = section.times[rows] if times is None else times
    alpha = np.asarray(factor_decay(t, config.kappa))
    if pinned:
        cols = list(pinned)
        resid = (section.terminals[np.ix_(rows, cols)]
                 - section.m[np.ix_(rows, cols)]).sum(axis=1)
    else:
        resid = np.zeros(rows.size)
    shift = coefs.residual_load * resid / alpha
    return _Geometry(rows=rows, t=t, alpha=alpha, shift=shift, coefs=coefs,
                     pinned_cols=pinned, panel_cols=panel, dead_cols=dead)


def _z_matrix(config: ModelConfig, section: CrossSection, geo: _Geometry,
              horizons: dict[int, object] | None = None) -> np.ndarray:
    names = config.names
    layout = geo.layout
    z = np.empty((geo.rows.size, len(layout)))
    for j, col in enumerate(layout):
        override = None if horizons is None else horizons.get(col)
        if col in geo.dead_cols and override is None:
            z[:, j] = -np.inf
            continue
        u = geo.t if override is None else override
        x = default_threshold(u, config.hazards[names[col]])
        z[:, j] = (x - section.m[geo.rows, col]) / geo.alpha - geo.shift
    return z


# ---------------------------------------------------------------------------
# panel evaluation: quadrature with a univariate closed-form shortcut
# ---------------------------------------------------------------------------


class _ClosedPanel:
    """Panel with at most one live coordinate: plain normal formulas."""

    def __init__(self, z: np.ndarray, coefs: ConditionalCoefficients,
                 live_col: int | None) -> None:
        self._sigma = coefs.sigma
        self._rho = coefs.rho
        self._col = live_col
        if live_col is None:
            self.log_mass = np.zeros(z.shape[0])
            self._mills = np.zeros(z.shape[0])
        else:
            zs = z[:, live_col] / coefs.sigma
            self.log_mass = _log_surv(zs)
            self._mills = _mills(zs)
        self.modes = None

    def gradient(self, idx: int) -> np.ndarray:
        if idx == self._col:
            return self._mills / self._sigma
        return np.zeros_like(self._mills)

    def moment(self, idx: int, shift) -> np.ndarray:
        if idx == self._col:
            return self._sigma * self._mills + shift
        return self._rho * self._sigma * self._mills + shift


class _ProductPanel:
    """Zero panel correlation: coordinates factorize, no quadrature."""

    def __init__(self, z: np.ndarray, coefs: ConditionalCoefficients) -> None:
        self._sigma = coefs.sigma
        zs = z / coefs.sigma
        self._mills = _mills(zs)
        self.log_mass = _log_surv(zs).sum(axis=1)
        self.modes = None

    def gradient(self, idx: int) -> np.ndarray:
        return self._mills[:, idx] / self._sigma

    def moment(self, idx: int, shift) -> np.ndarray:
        return self._sigma * self._mills[:, idx] + shift


class _QuadPanel:
    def __init__(self, panel: OneFactorPanel) -> None:
        self._panel = panel
        self.log_mass = panel.log_mass
        self.modes = panel.modes

    def gradient(self, idx: int) -> np.ndarray:
        return self._panel.hazard_gradient(idx)

    def moment(self, idx: int, shift) -> np.ndarray:
        return self._panel.conditional_moment(idx, shift)


def _evaluate(z: np.ndarray, coefs: ConditionalCoefficients,
              quad: BatchQuadrature, warm: np.ndarray | None = None):
    if coefs.rho == 0.0:
        return _ProductPanel(z, coefs)
    live = [j for j in range(z.shape[1]) if not np.isneginf(z[:, j]).all()]
    if len(live) <= 1:
        return _ClosedPanel(z, coefs, live[0] if live else None)
    nodes = quad.node_count(coefs.rho)
    return _QuadPanel(OneFactorPanel(z, coefs.rho, coefs.sigma, nodes,
                                     quad.log_drop, warm_modes=warm))


def _panel_for(config: ModelConfig, section: CrossSection, geo: _Geometry,
               quad: BatchQuadrature, warm: WarmStore | None, label: str,
               horizons: dict[int, object] | None = None):
    z = _z_matrix(config, section, geo, horizons)
    modes = warm.modes(label, geo.rows) if warm is not None else None
    panel = _evaluate(z, geo.coefs, quad, modes)
    if warm is not None and panel.modes is not None:
        warm.store(label, geo.rows, panel.modes)
    return panel


# ---------------------------------------------------------------------------
# cross-section matrices
# ---------------------------------------------------------------------------


def _split_zero_times(config: ModelConfig, section: CrossSection):
    """Indices of pristine time-zero rows and of live rows; loud otherwise."""
    zero = section.times == 0.0
    if np.any(zero):
        dirty = (section.m[zero] != 0.0).any() or (section.taus[zero] <= 0.0).any()
        if dirty:
            raise DegenerateHazard("time-zero rows must be pristine")
    return np.nonzero(zero)[0], np.nonzero(~zero)[0]


def intensity_matrix(config: ModelConfig, section: CrossSection,
                     kind: str = "full", quad: BatchQuadrature | None = None,
                     warm: WarmStore | None = None) -> np.ndarray:
    """Default intensity of every name for every path, zero where pinned.

    Under the ``reference`` scope the party columns carry NaN: the scope
    does not define an intensity for them.
    """
    quad = quad or _DEFAULT
    names = config.names
    out = np.zeros(section.m.shape)
    zero_rows, live_rows = _split_zero_times(config, section)
    if zero_rows.size:
        out[zero_rows] = [config.hazards[n] for n in names]
    mask = _default_mask(config, section, kind)
    for pattern, rows in _groups(mask, live_rows):
        geo = _geometry(config, section, rows, pattern, kind)
        panel = _panel_for(config, section, geo, quad, warm, f"{kind}:intensity")
        for j, col in enumerate(geo.panel_cols):
            slope = np.asarray(threshold_slope(geo.t, config.hazards[names[col]]))
            out[rows, col] = slope / geo.alpha * panel.gradient(j)
    if kind == "reference":
        out[:, list(_party_columns(config))] = np.nan
    return out


def drift_matrix(config: ModelConfig, section: CrossSection,
                 kind: str = "full", quad: BatchQuadrature | None = None,
                 warm: WarmStore | None = None) -> np.ndarray:
    """Information drift of every name's factor under the scope."""
    quad = quad or _DEFAULT
    out = np.zeros(section.m.shape)
    mask = _default_mask(config, section, kind)
    all_rows = np.arange(section.m.shape[0])
    for pattern, rows in _groups(mask, all_rows):
        geo = _geometry(config, section, rows, pattern, kind)
        vol = np.asarray(factor_volatility(geo.t, config.kappa))
        panel = _panel_for(config, section, geo, quad, warm, f"{kind}:drift")
        for j, col in enumerate(geo.layout):
            out[rows, col] = vol / geo.alpha * panel.moment(j, geo.shift)
        for col in geo.pinned_cols:
            resid = section.terminals[rows, col] - section.m[rows, col]
            out[rows, col] = vol / geo.alpha * resid / geo.alpha
    return out


def azema_values(config: ModelConfig, section: CrossSection,
                 quad: BatchQuadrature | None = None,
                 warm: WarmStore | None = None) -> np.ndarray:
    """Conditional party survival ratio per path (one at time zero)."""
    quad = quad or _DEFAULT
    out = np.empty(section.m.shape[0])
    mask = _default_mask(config, section, "reference")
    party_cols = set(_party_columns(config))
    all_rows = np.arange(section.m.shape[0])
    for pattern, rows in _groups(mask, all_rows):
        geo = _geometry(config, section, rows, pattern, "reduction")
        z = _z_matrix(config, section, geo)
        modes = warm.modes("azema", geo.rows) if warm is not None else None
        wide = _evaluate(z, geo.coefs, quad, modes)
        if warm is not None and wide.modes is not None:
            warm.store("azema", geo.rows, wide.modes)
        z_star = z.copy()
        for j, col in enumerate(geo.layout):
            if col in party_cols:
                z_star[:, j] = -np.inf
        narrow = _evaluate(z_star, geo.coefs, quad,
                           warm.modes("azema:star", geo.rows) if warm else None)
        if warm is not None and narrow.modes is not None:
            warm.store("azema:star", geo.rows, narrow.modes)
        out[rows] = np.exp(wide.log_mass - narrow.log_mass)
    return out


def survival_curve(config: ModelConfig, section: CrossSection, name: int,
                   horizons: np.ndarray, kind: str = "full",
                   quad: BatchQuadrature | None = None,
                   warm: WarmStore | None = None) -> np.ndarray:
    """P(name survives past each horizon) per path, zero where pinned."""
    quad = quad or _DEFAULT
    horizons = np.asarray(horizons, dtype=float)
    if np.any(horizons[None, :] < section.times[:, None]):
        raise ValueError("survival horizons must not precede the section times")
    col = config.names.index(name)
    out = np.zeros((section.m.shape[0], horizons.size))
    mask = _default_mask(config, section, kind)
    all_rows = np.arange(section.m.shape[0])
    for pattern, rows in _groups(mask, all_rows):
        if pattern[col]:
            continue  # pinned: zero survival
        geo = _geometry(config, section, rows, pattern, kind)
        den = _panel_for(config, section, geo, quad, warm, f"{kind}:surv")
        for h, u in enumerate(horizons):
            num = _panel_for(config, section, geo, quad, warm, f"{kind}:surv:num",
                             horizons={col: float(u)})
            out[rows, h] = np.exp(num.log_mass - den.log_mass)
    return out


# ---------------------------------------------------------------------------
# compensator integrals along a block
# ---------------------------------------------------------------------------


def _watch_columns(config: ModelConfig, kind: str) -> list[int]:
    """Columns whose defaults move the scope's intensities mid-step."""
    if kind == "full":
        return list(range(len(config.names)))
    return list(_reference_columns(config))


def _engine_gamma_row(config: ModelConfig, state: PortfolioState, kind: str) -> np.ndarray:
    out = np.zeros(len(config.names))
    for i, name in enumerate(config.names):
        if kind == "full":
            out[i] = intensity(config, state, name, Scope.FULL)
        elif name < 1:
            out[i] = np.nan if kind == "reference" else intensity_reduction(config, state, name)
        elif kind == "reference":
            out[i] = intensity(config, state, name, Scope.REFERENCE)
        else:
            out[i] = intensity_reduction(config, state, name)
    return out


def _engine_step_integral(config: ModelConfig, block: SimulationBlock, row: int,
                          step: int, kind: str) -> np.ndarray:
    """Trapezoid integral of one path's step with several defaults inside.

    Factors are held at the left node, matching the batched convention for
    values at interior default times.
    """
    names = config.names
    t0, t1 = float(block.times[step]), float(block.times[step + 1])
    taus = block.taus[row]
    events = sorted((float(taus[c]), c) for c in _watch_columns(config, kind)
                    if t0 < taus[c] <= t1)
    m_left = {n: float(block.factors[row, step, i]) for i, n in enumerate(names)}
    m_right = {n: float(block.factors[row, step + 1, i]) for i, n in enumerate(names)}
    terminal = {n: float(block.terminals[row, i]) for i, n in enumerate(names)}

    def gamma(t: float, cols: set[int], m: dict[int, float]) -> np.ndarray:
        defaults = {names[c]: float(taus[c]) for c in cols}
        residuals = {n: terminal[n] - m[n] for n in defaults}
        state = PortfolioState(t=t, m=m, defaults=defaults, residuals=residuals)
        return _engine_gamma_row(config, state, kind)

    base = {c for c in range(len(names)) if taus[c] <= t0}
    total = np.zeros(len(names))
    left_t, left_cols = t0, set(base)
    left_val = gamma(left_t, left_cols, m_left)
    for tau, col in events:
        # values at the exact default time hold the factors at the left node
        right_val = gamma(tau, left_cols, m_left)
        total += 0.5 * (left_val + right_val) * (tau - left_t)
        left_cols = left_cols | {col}
        left_t, left_val = tau, gamma(tau, left_cols, m_left)
    total += 0.5 * (left_val + gamma(t1, left_cols, m_right)) * (t1 - left_t)
    return total


def compensator_integrals(config: ModelConfig, block: SimulationBlock,
                          kind: str = "full",
                          snapshots: np.ndarray | list[float] | None = None,
                          quad: BatchQuadrature | None = None) -> np.ndarray:
    """Cumulative default compensator of every name at the snapshot times.

    Integrates the scope's intensity path by path with the trapezoid rule,
    splitting each step at the exact default times inside it (factors held
    at the left node there).  A name's own integral freezes at its default
    because its intensity drops to zero.  Snapshots must be grid nodes;
    the result has shape (paths, snapshots, names), with NaN in the party
    columns under the reference scope.
    """
    quad = quad or _DEFAULT
    times = np.asarray(block.times, dtype=float)
    if snapshots is None:
        snapshots = [float(times[-1])]
    snaps = np.asarray(snapshots, dtype=float)
    idx = np.searchsorted(times, snaps)
    on_grid = (idx < times.size) & (times[np.minimum(idx, times.size - 1)] == snaps)
    if not on_grid.all():
        raise ValueError("compensator snapshots must lie on the block's time grid")
    snap_of = {int(i): s for s, i in enumerate(idx)}

    count, node_count, width = block.factors.shape
    watch = _watch_columns(config, kind)
    acc = np.zeros((count, width))
    out = np.zeros((count, snaps.size, width))
    warm = WarmStore(count)
    gamma_right = intensity_matrix(config, section_at(block, 0), kind, quad, warm)
    for k in range(node_count - 1):
        t0, t1 = float(times[k]), float(times[k + 1])
        gamma_left = gamma_right
        gamma_right = intensity_matrix(config, section_at(block, k + 1), kind, quad, warm)
        events = (block.taus[:, watch] > t0) & (block.taus[:, watch] <= t1)
        counts = events.sum(axis=1)
        plain = counts == 0
        acc[plain] += 0.5 * (gamma_left[plain] + gamma_right[plain]) * (t1 - t0)

        single = np.nonzero(counts == 1)[0]
        if single.size:
            m0 = block.factors[:, k, :]
            event_col = np.array([watch[int(np.nonzero(events[r])[0][0])]
                                  for r in single])
            for col in np.unique(event_col):
                sel = single[event_col == col]
                tau = block.taus[sel, col]
                pre_taus = block.taus[sel].copy()
                pre_taus[:, col] = np.inf
                pre = CrossSection(times=tau, m=m0[sel], taus=pre_taus,
                                   terminals=block.terminals[sel])
                post = CrossSection(times=tau, m=m0[sel], taus=block.taus[sel],
                                    terminals=block.terminals[sel])
                g_pre = intensity_matrix(config, pre, kind, quad)
                g_post = intensity_matrix(config, post, kind, quad)
                acc[sel] += (0.5 * (gamma_left[sel] + g_pre) * (tau - t0)[:, None]
                             + 0.5 * (g_post + gamma_right[sel]) * (t1 - tau)[:, None])

        for r in np.nonzero(counts >= 2)[0]:
            acc[r] += _engine_step_integral(config, block, int(r), k, kind)

        snap = snap_of.get(k + 1)
        if snap is not None:
            out[:, snap, :] = acc
    return out


# ---------------------------------------------------------------------------
# change-of-measure increments along a block
# ---------------------------------------------------------------------------


def _weight_group_terms(config: ModelConfig, section: CrossSection,
                        rows: np.ndarray, pattern: tuple[bool, ...],
                        quad: BatchQuadrature, warm: WarmStore | None,
                        times: np.ndarray | None = None):
    """Gradients of both panels plus geometry for one pattern group.

    Returns (geo, grad_wide (R, cols), grad_star, panel_star) with columns
    in ``geo.layout`` order; the starred panel holds parties at -inf, so
    its gradients vanish there and both panels share one layout.
    """
    geo = _geometry(config, section, rows, pattern, "reduction", times)
    z = _z_matrix(config, section, geo)
    modes = warm.modes("w:wide", rows) if warm is not None else None
    wide = _evaluate(z, geo.coefs, quad, modes)
    if warm is not None and wide.modes is not None:
        warm.store("w:wide", rows, wide.modes)
    z_star = z.copy()
    party_cols = set(_party_columns(config))
    for j, col in enumerate(geo.layout):
        if col in party_cols:
            z_star[:, j] = -np.inf
    modes = warm.modes("w:star", rows) if warm is not None else None
    star = _evaluate(z_star, geo.coefs, quad, modes)
    if warm is not None and star.modes is not None:
        warm.store("w:star", rows, star.modes)
    grad_wide = np.stack([wide.gradient(j) for j in range(len(geo.layout))], axis=1)
    grad_star = np.stack([star.gradient(j) for j in range(len(geo.layout))], axis=1)
    return geo, grad_wide, grad_star, star


def _compensator_gap_rows(config: ModelConfig, geo: _Geometry,
                          grad_wide: np.ndarray, grad_star: np.ndarray) -> np.ndarray:
    """Sum over alive references of the intensity gap, zero at time zero."""
    gap = np.zeros(geo.rows.size)
    live = geo.t > 0.0
    if not live.any():
        return gap
    names = config.names
    for j, col in enumerate(geo.layout):
        if names[col] < 1:
            continue
        slope = np.asarray(threshold_slope(geo.t[live], config.hazards[names[col]]))
        gap[live] += slope / geo.alpha[live] * (grad_wide[live, j] - grad_star[live, j])
    return gap


def weight_log_increments(config: ModelConfig, block: SimulationBlock,
                          quad: BatchQuadrature | None = None) -> np.ndarray:
    """Log increment of the invariance-measure density, per path per step.

    Matches the pointwise engine: diffusion terms load on left-node
    gradients with the exact step variance, the survival compensator
    splits at reference defaults, and each default contributes the
    gradient ratio at its exact time.  Steps containing two or more
    reference defaults on one path are delegated to the engine.
    """
    quad = quad or _DEFAULT
    names = config.names
    path_count, node_count, _ = block.factors.shape
    steps = node_count - 1
    ref_cols = list(_reference_columns(config))
    out = np.zeros((path_count, steps))
    warm = WarmStore(path_count)
    rho = config.rho_copula

    for k in range(steps):
        t0, t1 = float(block.times[k]), float(block.times[k + 1])
        dt = t1 - t0
        vstep = float(np.exp(-config.kappa * t0) - np.exp(-config.kappa * t1))
        vol = float(factor_volatility(t0, config.kappa))
        m0 = block.factors[:, k, :]
        dm = block.factors[:, k + 1, :] - m0
        section = CrossSection(times=np.full(path_count, t0), m=m0,
                               taus=block.taus, terminals=block.terminals)
        new_events = (block.taus[:, ref_cols] > t0) & (block.taus[:, ref_cols] <= t1)
        event_count = new_events.sum(axis=1)
        multi_rows = np.nonzero(event_count >= 2)[0]

        mask = _default_mask(config, section, "reference")
        gap_left = np.zeros(path_count)
        patterns_of: dict[int, tuple[bool, ...]] = {}
        for pattern, rows in _groups(mask, np.arange(path_count)):
            geo, grad_wide, grad_star, star = _weight_group_terms(
                config, section, rows, pattern, quad, warm)
            w = np.zeros((rows.size, len(names)))
            beta = np.zeros((rows.size, len(names)))
            for j, col in enumerate(geo.layout):
                w[:, col] = (grad_wide[:, j] - grad_star[:, j]) / geo.alpha
                beta[:, col] = vol / geo.alpha * star.moment(j, geo.shift)
            backflow = (grad_wide.sum(axis=1) - grad_star.sum(axis=1))
            for col in geo.pinned_cols:
                w[:, col] = -geo.coefs.residual_load * backflow / geo.alpha
                resid = section.terminals[rows, col] - section.m[rows, col]
                beta[:, col] = vol / geo.alpha * resid / geo.alpha
            compensated = dm[rows] - vol * beta * dt
            dnu = (w * compensated).sum(axis=1)
            wsum = w.sum(axis=1)
            variance = vstep * ((1.0 - rho) * (w**2).sum(axis=1) + rho * wsum**2)
            gap = _compensator_gap_rows(config, geo, grad_wide, grad_star)
            out[rows, k] = dnu - 0.5 * variance - gap * dt
            gap_left[rows] = gap
            for r in rows:
                patterns_of[int(r)] = pattern

        single_rows = np.nonzero(event_count == 1)[0]
        single_rows = np.setdiff1d(single_rows, multi_rows)
        if single_rows.size:
            event_col = np.array([ref_cols[int(np.nonzero(new_events[r])[0][0])]
                                  for r in single_rows])
            keys = sorted({(patterns_of[int(r)], int(c))
                           for r, c in zip(single_rows, event_col)})
            for pattern, col in keys:
                sel = np.array([r for r, c in zip(single_rows, event_col)
                                if patterns_of[int(r)] == pattern and int(c) == col])
                taus = block.taus[sel, col]
                # gradient ratio at the exact default time, left-node factors
                pre = CrossSection(times=taus, m=m0[sel], taus=block.taus[sel],
                                   terminals=block.terminals[sel])
                local = np.arange(sel.size)
                geo, gw, gs, _ = _weight_group_terms(config, pre, local, pattern,
                                                     quad, None, times=taus)
                j = geo.layout.index(col)
                jump = np.log(gw[:, j] / gs[:, j])
                post_pattern = tuple(p or (i == col) for i, p in enumerate(pattern))
                geo2, gw2, gs2, _ = _weight_group_terms(config, pre, local,
                                                        post_pattern, quad, None,
                                                        times=taus)
                gap_post = _compensator_gap_rows(config, geo2, gw2, gs2)
                out[sel, k] += ((gap_left[sel] - gap_post) * (t1 - taus)) + jump

        for r in multi_rows:
            rec = block.record(int(r))
            out[r, k] = log_weight_increment(config, rec.state_at(k),
                                             rec.state_at(k + 1))
    return out


def measure_weight_matrix(config: ModelConfig, section: CrossSection,
                          quad: BatchQuadrature | None = None,
                          warm: WarmStore | None = None) -> np.ndarray:
    """Loadings of the measure-change martingale, one row per path."""
    quad = quad or _DEFAULT
    out = np.zeros(section.m.shape)
    mask = _default_mask(config, section, "reference")
    for pattern, rows in _groups(mask, np.arange(section.m.shape[0])):
        geo, grad_wide, grad_star, _ = _weight_group_terms(
            config, section, rows, pattern, quad, warm)
        for j, col in enumerate(geo.layout):
            out[rows, col] = (grad_wide[:, j] - grad_star[:, j]) / geo.alpha
        backflow = grad_wide.sum(axis=1) - grad_star.sum(axis=1)
        for col in geo.pinned_cols:
            out[rows, col] = -geo.coefs.residual_load * backflow / geo.alpha
    return out


def jy_defect_matrix(config: ModelConfig, section: CrossSection,
                     quad: BatchQuadrature | None = None) -> np.ndarray:
    """Defect of the drift identity: the party-information drift minus the
    reference drift minus the factor's bracket with the measure-change
    martingale.  Zero in exact arithmetic, so the value measures the mutual
    consistency of the three code paths that enter it.
    """
    rho = config.rho_copula
    tilde = drift_matrix(config, section, "reduction", quad)
    bar = drift_matrix(config, section, "reference", quad)
    weights = measure_weight_matrix(config, section, quad)
    vol = np.asarray(factor_volatility(section.times, config.kappa))[:, None]
    bracket = (1.0 - rho) * weights + rho * weights.sum(axis=1, keepdims=True)
    return tilde - bar - vol * bracket


# ---------------------------------------------------------------------------
# intensity jumps across a reference default
# ---------------------------------------------------------------------------


def spike_ratios(config: ModelConfig, block: SimulationBlock, ref_name: int,
                 horizon: float | None = None,
                 quad: BatchQuadrature | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Jump ratio of each party's intensity across one reference default.

    Selects the paths on which ``ref_name`` defaults strictly before every
    party default and before the horizon, linearly interpolates the factors
    to the exact default time, and returns (rows, ratios) with one column
    per party: the intensity just after the default over the intensity just
    before it (the reference sitting exactly on its survival boundary).
    """
    quad = quad or _DEFAULT
    names = config.names
    col = names.index(ref_name)
    party_cols = list(_party_columns(config))
    times = np.asarray(block.times, dtype=float)
    if horizon is None:
        horizon = float(times[-1])
    elif horizon > times[-1]:
        raise ValueError("spike horizon exceeds the simulated grid")

    tau = block.taus[:, col]
    first_party = block.taus[:, party_cols].min(axis=1)
    rows = np.nonzero((tau < first_party) & (tau < horizon))[0]
    if rows.size == 0:
        return rows, np.zeros((0, len(party_cols)))

    k = np.searchsorted(times, tau[rows], side="right") - 1
    t0, t1 = times[k], times[k + 1]
    frac = ((tau[rows] - t0) / (t1 - t0))[:, None]
    left = block.factors[rows, k, :]
    right = block.factors[rows, k + 1, :]
    m_tau = left + frac * (right - left)

    pre_taus = block.taus[rows].copy()
    pre_taus[:, col] = np.inf
    pre = CrossSection(times=tau[rows], m=m_tau, taus=pre_taus,
                       terminals=block.terminals[rows])
    post = CrossSection(times=tau[rows], m=m_tau, taus=block.taus[rows],
                        terminals=block.terminals[rows])
    gamma_pre = intensity_matrix(config, pre, "full", quad)
    gamma_post = intensity_matrix(config, post, "full", quad)
    return rows, gamma_post[:, party_cols] / gamma_pre[:, party_cols]


# ---------------------------------------------------------------------------
# path dump
# ---------------------------------------------------------------------------


def write_path_dump(config: ModelConfig, grid, seeds, path_count: int, out,
                    quad: BatchQuadrature | None = None) -> None:
    """Columnar per-path summary for external analysis.

    One row per path and name: the default time, the factor at the end of
    the grid and the terminal change-of-measure weight (a path quantity,
    repeated on each of the path's rows).  Floats are serialized with
    ``repr`` so equal runs produce equal bytes.
    """
    lines = ["path_index,name,tau,m_T,weight_T"]
    for block in iter_blocks(config, grid, seeds, path_count):
        weights = np.exp(weight_log_increments(config, block, quad).sum(axis=1))
        finals = block.factors[:, -1, :]
        for i in range(block.factors.shape[0]):
            path_index = block.path_offset + i
            for j, name in enumerate(config.names):
                lines.append(f"{path_index},{name},{float(block.taus[i, j])!r},"
                             f"{float(finals[i, j])!r},{float(weights[i])!r}")
    text = "\n".join(lines) + "\n"
    if isinstance(out, (str, Path)):
        Path(out).write_text(text)
    else:
        out.write(text)
