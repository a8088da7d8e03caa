"""Tests for the vectorized cross-section engine.

The pointwise engine is the oracle throughout: every matrix entry must
reproduce the corresponding single-state call, including steps containing
reference defaults, where the change-of-measure increment splits the
compensator and inserts the intensity jump at the exact default time.
"""
from __future__ import annotations

import numpy as np
import pytest

from dgc.batch import (
    BatchQuadrature,
    CrossSection,
    WarmStore,
    azema_values,
    compensator_integrals,
    drift_matrix,
    intensity_matrix,
    jy_defect_matrix,
    measure_weight_matrix,
    section_at,
    spike_ratios,
    survival_curve,
    weight_log_increments,
)
from dgc.engine import (
    Scope,
    azema_supermartingale,
    factor_drift,
    factor_drift_reduction,
    intensity,
    intensity_reduction,
    log_weight_increment,
    measure_change_weights,
    survival_probability,
)
from dgc.model import ModelConfig, PortfolioState
from dgc.simulate import GridSpec, SeedSpec, simulate_block


def make_config(rho=0.55, n=3, lam=0.5, lam_party=0.3):
    rates = {-1: lam_party, 0: lam_party}
    rates.update({i: lam * (1.0 + 0.2 * i) for i in range(1, n + 1)})
    return ModelConfig(rho_copula=rho, kappa=0.25, hazards=rates,
                       horizon=10.0, seed=0)


def busy_section(cfg, t_index=4, width=16, seed=17, steps=8, horizon=4.0):
    grid = GridSpec(horizon=horizon, step_count=steps)
    block = simulate_block(cfg, grid, SeedSpec(master_seed=seed, block_size=width), 0)
    return block, section_at(block, t_index)


def engine_states(block, k):
    return [block.record(i).state_at(k) for i in range(block.factors.shape[0])]


def test_section_at_carries_the_node():
    cfg = make_config()
    block, section = busy_section(cfg)
    assert np.all(section.times == block.times[4])
    assert np.array_equal(section.m, block.factors[:, 4, :])
    assert np.array_equal(section.taus, block.taus)
    # hot hazards make sure the section actually mixes default patterns
    defaulted = (section.taus <= section.times[:, None])
    assert 0 < defaulted.any(axis=1).sum() < defaulted.shape[0]


@pytest.mark.parametrize("kind,scope", [("full", Scope.FULL),
                                        ("reference", Scope.REFERENCE)])
def test_intensity_matrix_matches_engine(kind, scope):
    cfg = make_config()
    block, section = busy_section(cfg)
    got = intensity_matrix(cfg, section, kind)
    for row, state in enumerate(engine_states(block, 4)):
        for col, name in enumerate(cfg.names):
            if kind == "reference" and name < 1:
                assert np.isnan(got[row, col])
                continue
            want = intensity(cfg, state, name, scope)
            assert got[row, col] == pytest.approx(want, rel=1e-6, abs=1e-12)


def test_reduction_intensity_matrix_matches_engine():
    cfg = make_config()
    block, section = busy_section(cfg)
    got = intensity_matrix(cfg, section, "reduction")
    for row, state in enumerate(engine_states(block, 4)):
        for col, name in enumerate(cfg.names):
            want = intensity_reduction(cfg, state, name)
            assert got[row, col] == pytest.approx(want, rel=1e-6, abs=1e-12)


def test_pristine_rows_return_hazards():
    cfg = make_config()
    block, section = busy_section(cfg, t_index=0)
    got = intensity_matrix(cfg, section, "full")
    want = np.array([cfg.hazards[n] for n in cfg.names])
    assert np.array_equal(got, np.broadcast_to(want, got.shape))


def test_drift_matrix_matches_engine_all_scopes():
    cfg = make_config()
    block, section = busy_section(cfg)
    states = engine_states(block, 4)
    for kind, fn in (("full", lambda s, n: factor_drift(cfg, s, n, Scope.FULL)),
                     ("reference", lambda s, n: factor_drift(cfg, s, n, Scope.REFERENCE)),
                     ("reduction", lambda s, n: factor_drift_reduction(cfg, s, n))):
        got = drift_matrix(cfg, section, kind)
        for row, state in enumerate(states):
            for col, name in enumerate(cfg.names):
                want = fn(state, name)
                assert got[row, col] == pytest.approx(want, rel=1e-6, abs=1e-9), (
                    kind, row, name)


def test_azema_matches_engine():
    cfg = make_config()
    block, section = busy_section(cfg)
    got = azema_values(cfg, section)
    for row, state in enumerate(engine_states(block, 4)):
        assert got[row] == pytest.approx(azema_supermartingale(cfg, state), rel=1e-8)


def test_azema_is_one_at_time_zero():
    cfg = make_config()
    block, section = busy_section(cfg, t_index=0)
    assert np.all(azema_values(cfg, section) == 1.0)


@pytest.mark.parametrize("kind,scope", [("full", Scope.FULL),
                                        ("reference", Scope.REFERENCE)])
def test_survival_curve_matches_engine(kind, scope):
    cfg = make_config()
    block, section = busy_section(cfg)
    horizons = np.array([2.0, 3.0, 6.0])
    for name in (1, 2):
        got = survival_curve(cfg, section, name, horizons, kind)
        for row, state in enumerate(engine_states(block, 4)):
            for h, u in enumerate(horizons):
                want = survival_probability(cfg, state, name, float(u), scope)
                assert got[row, h] == pytest.approx(want, rel=1e-7, abs=1e-12)


def test_survival_curve_rejects_past_horizons():
    cfg = make_config()
    block, section = busy_section(cfg)
    with pytest.raises(ValueError):
        survival_curve(cfg, section, 1, np.array([0.5]), "full")


def test_closed_form_panels_match_quadrature_engine():
    # a single reference makes every starred panel univariate, so this pins
    # the closed-form shortcut against the engine's quadrature panels
    cfg = make_config(n=1, lam=0.6, lam_party=0.4, rho=0.5)
    block, section = busy_section(cfg, width=32, seed=23)
    states = engine_states(block, 4)
    got_ref = intensity_matrix(cfg, section, "reference")
    got_drift = drift_matrix(cfg, section, "reference")
    for row, state in enumerate(states):
        want = intensity(cfg, state, 1, Scope.REFERENCE)
        assert got_ref[row, 2] == pytest.approx(want, rel=1e-8, abs=1e-12)
        for col, name in enumerate(cfg.names):
            want = factor_drift(cfg, state, name, Scope.REFERENCE)
            assert got_drift[row, col] == pytest.approx(want, rel=1e-8, abs=1e-10)
    horizons = np.array([2.5, 5.0])
    got_surv = survival_curve(cfg, section, 1, horizons, "reference")
    for row, state in enumerate(states):
        for h, u in enumerate(horizons):
            want = survival_probability(cfg, state, 1, float(u), Scope.REFERENCE)
            assert got_surv[row, h] == pytest.approx(want, rel=1e-8, abs=1e-12)


def test_independent_copula_panels_match_engine():
    # rho = 0 short-circuits every panel to a product of normal factors;
    # the engine still runs its quadrature, making it a true cross-check
    cfg = make_config(rho=0.0, n=2, lam=0.5, lam_party=0.3)
    block, section = busy_section(cfg, width=16, seed=29)
    states = engine_states(block, 4)
    for kind, scope in (("full", Scope.FULL), ("reference", Scope.REFERENCE)):
        got = intensity_matrix(cfg, section, kind)
        for row, state in enumerate(states):
            for col, name in enumerate(cfg.names):
                if kind == "reference" and name < 1:
                    continue
                want = intensity(cfg, state, name, scope)
                assert got[row, col] == pytest.approx(want, rel=1e-8, abs=1e-12)
    got = drift_matrix(cfg, section, "reduction")
    for row, state in enumerate(states):
        for col, name in enumerate(cfg.names):
            want = factor_drift_reduction(cfg, state, name)
            assert got[row, col] == pytest.approx(want, rel=1e-8, abs=1e-10)
    got = azema_values(cfg, section)
    for row, state in enumerate(states):
        assert got[row] == pytest.approx(azema_supermartingale(cfg, state), rel=1e-9)
    grid = GridSpec(horizon=2.0, step_count=4)
    wblock = simulate_block(cfg, grid, SeedSpec(master_seed=3, block_size=12), 0)
    winc = weight_log_increments(cfg, wblock)
    for local in range(12):
        rec = wblock.record(local)
        for k in range(4):
            want = log_weight_increment(cfg, rec.state_at(k), rec.state_at(k + 1))
            assert winc[local, k] == pytest.approx(want, rel=1e-8, abs=1e-11)


def test_warm_store_reuse_is_consistent():
    cfg = make_config()
    block, _ = busy_section(cfg)
    warm = WarmStore(block.factors.shape[0])
    stepped = [intensity_matrix(cfg, section_at(block, k), "full", warm=warm)
               for k in range(1, 7)]
    fresh = [intensity_matrix(cfg, section_at(block, k), "full")
             for k in range(1, 7)]
    for a, b in zip(stepped, fresh):
        np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-15)


def test_weight_log_increments_match_engine():
    cfg = make_config(rho=0.6, n=2, lam=0.4, lam_party=0.2)
    grid = GridSpec(horizon=2.0, step_count=8)
    block = simulate_block(cfg, grid, SeedSpec(master_seed=31, block_size=24), 0)
    got = weight_log_increments(cfg, block)
    assert got.shape == (24, 8)
    event_steps = 0
    for local in range(24):
        rec = block.record(local)
        for k in range(8):
            lo, hi = rec.state_at(k), rec.state_at(k + 1)
            new_refs = [j for j in hi.defaults if j >= 1 and j not in lo.defaults]
            event_steps += bool(new_refs)
            want = log_weight_increment(cfg, lo, hi)
            assert got[local, k] == pytest.approx(want, rel=1e-6, abs=1e-10), (local, k)
    # the hot hazards must actually exercise the split-and-jump branch
    assert event_steps >= 3


def test_weight_increments_fall_back_on_double_defaults():
    # one giant step catches several reference defaults at once per path
    cfg = make_config(rho=0.5, n=3, lam=2.0, lam_party=0.1)
    grid = GridSpec(horizon=1.5, step_count=1)
    block = simulate_block(cfg, grid, SeedSpec(master_seed=7, block_size=16), 0)
    counts = ((block.taus[:, 2:] <= 1.5) & (block.taus[:, 2:] > 0)).sum(axis=1)
    assert (counts >= 2).any()
    got = weight_log_increments(cfg, block)
    for local in range(16):
        rec = block.record(local)
        want = log_weight_increment(cfg, rec.state_at(0), rec.state_at(1))
        assert got[local, 0] == pytest.approx(want, rel=1e-6, abs=1e-10)


def test_quadrature_policy_node_counts():
    quad = BatchQuadrature()
    assert quad.node_count(0.3) == 48
    assert quad.node_count(0.69) == 48
    assert quad.node_count(0.7) == 96
    assert quad.node_count(0.9) == 96


# ---------------------------------------------------------------------------
# compensator integrals
# ---------------------------------------------------------------------------


def engine_gamma_vector(cfg, state, kind):
    vals = []
    for name in cfg.names:
        if kind == "full":
            vals.append(intensity(cfg, state, name, Scope.FULL))
        elif name < 1:
            vals.append(np.nan if kind == "reference"
                        else intensity_reduction(cfg, state, name))
        elif kind == "reference":
            vals.append(intensity(cfg, state, name, Scope.REFERENCE))
        else:
            vals.append(intensity_reduction(cfg, state, name))
    return np.array(vals)


def engine_compensator(cfg, block, row, snapshots, kind):
    """Trapezoid integral with exact default splits, pointwise engine values."""
    names = cfg.names
    watch = [c for c, n in enumerate(names) if kind == "full" or n >= 1]
    taus = block.taus[row]
    acc = np.zeros(len(names))
    out = []

    def gamma(t, cols, m):
        defaults = {names[c]: float(taus[c]) for c in cols}
        residuals = {n: float(block.terminals[row, cfg.names.index(n)]) - m[n]
                     for n in defaults}
        state = PortfolioState(t=t, m=m, defaults=defaults, residuals=residuals)
        return engine_gamma_vector(cfg, state, kind)

    for k in range(len(block.times) - 1):
        t0, t1 = float(block.times[k]), float(block.times[k + 1])
        m_left = {n: float(block.factors[row, k, i]) for i, n in enumerate(names)}
        m_right = {n: float(block.factors[row, k + 1, i]) for i, n in enumerate(names)}
        events = sorted((float(taus[c]), c) for c in watch if t0 < taus[c] <= t1)
        left_cols = {c for c in range(len(names)) if taus[c] <= t0}
        left_t, left_val = t0, gamma(t0, left_cols, m_left)
        for tau_c, c in events:
            acc += 0.5 * (left_val + gamma(tau_c, left_cols, m_left)) * (tau_c - left_t)
            left_cols = left_cols | {c}
            left_t, left_val = tau_c, gamma(tau_c, left_cols, m_left)
        right_cols = {c for c in range(len(names)) if taus[c] <= t1}
        acc += 0.5 * (left_val + gamma(t1, right_cols, m_right)) * (t1 - left_t)
        if float(block.times[k + 1]) in snapshots:
            out.append(acc.copy())
    return np.stack(out, axis=0)


@pytest.mark.parametrize("kind", ["full", "reference", "reduction"])
def test_compensator_integrals_match_engine(kind):
    cfg = make_config(rho=0.5, n=2, lam=0.8, lam_party=0.5)
    grid = GridSpec(horizon=4.0, step_count=8)
    block = simulate_block(cfg, grid, SeedSpec(master_seed=11, block_size=24), 0)
    watch = [c for c, n in enumerate(cfg.names) if kind == "full" or n >= 1]
    per_step = ((block.taus[:, watch, None] > block.times[None, None, :-1])
                & (block.taus[:, watch, None] <= block.times[None, None, 1:]))
    assert (per_step.sum(axis=1) >= 2).any(), "want a multi-default step in the sample"
    snapshots = [1.0, 2.0, 4.0]
    got = compensator_integrals(cfg, block, kind, snapshots)
    for row in range(block.factors.shape[0]):
        want = engine_compensator(cfg, block, row, snapshots, kind)
        np.testing.assert_allclose(got[row], want, rtol=1e-6, atol=1e-12)


def test_compensator_integral_freezes_at_own_default():
    cfg = make_config(rho=0.4, n=1, lam=1.0, lam_party=0.2)
    grid = GridSpec(horizon=4.0, step_count=16)
    block = simulate_block(cfg, grid, SeedSpec(master_seed=3, block_size=32), 0)
    out = compensator_integrals(cfg, block, "full", [2.0, 4.0])
    col = cfg.names.index(1)
    early = np.nonzero(block.taus[:, col] <= 2.0)[0]
    assert early.size > 0
    np.testing.assert_array_equal(out[early, 0, col], out[early, 1, col])


def test_compensator_snapshots_must_be_grid_nodes():
    cfg = make_config(n=1)
    grid = GridSpec(horizon=2.0, step_count=4)
    block = simulate_block(cfg, grid, SeedSpec(master_seed=1, block_size=4), 0)
    with pytest.raises(ValueError):
        compensator_integrals(cfg, block, "full", [0.75])


# ---------------------------------------------------------------------------
# measure-change weights, drift identity, spikes
# ---------------------------------------------------------------------------


def test_measure_weight_matrix_matches_engine():
    cfg = make_config()
    block, section = busy_section(cfg)
    got = measure_weight_matrix(cfg, section)
    for row, state in enumerate(engine_states(block, 4)):
        want = measure_change_weights(cfg, state)
        for col, name in enumerate(cfg.names):
            assert got[row, col] == pytest.approx(want[name], rel=1e-6, abs=1e-10)


@pytest.mark.parametrize("rho", [0.0, 0.35, 0.7])
def test_jy_defect_is_machine_zero(rho):
    # the drift gap must equal the factor bracket with the measure-change
    # martingale exactly, whatever the default pattern
    cfg = make_config(rho=rho)
    block, _ = busy_section(cfg, width=32)
    for k in (0, 2, 4, 7):
        section = section_at(block, k)
        defect = jy_defect_matrix(cfg, section)
        assert np.abs(defect).max() < 1e-10


def test_spike_ratios_match_engine():
    cfg = make_config(rho=0.55, n=2, lam=0.6, lam_party=0.25)
    grid = GridSpec(horizon=5.0, step_count=10)
    block = simulate_block(cfg, grid, SeedSpec(master_seed=5, block_size=64), 0)
    rows, ratios = spike_ratios(cfg, block, ref_name=1)
    assert rows.size > 3
    times = block.times
    party_cols = [0, 1]
    col = cfg.names.index(1)
    for local, row in enumerate(rows):
        tau = float(block.taus[row, col])
        assert tau < min(block.taus[row, 0], block.taus[row, 1])
        k = int(np.searchsorted(times, tau, side="right")) - 1
        frac = (tau - times[k]) / (times[k + 1] - times[k])
        m_hat = block.factors[row, k] + frac * (block.factors[row, k + 1] - block.factors[row, k])
        m = {n: float(m_hat[i]) for i, n in enumerate(cfg.names)}
        pre_names = {cfg.names[c]: float(block.taus[row, c])
                     for c in range(len(cfg.names))
                     if block.taus[row, c] <= tau and c != col}
        post_names = dict(pre_names)
        post_names[1] = tau
        for party_idx, party in enumerate((-1, 0)):
            states = []
            for defaults in (pre_names, post_names):
                residuals = {n: float(block.terminals[row, cfg.names.index(n)]) - m[n]
                             for n in defaults}
                states.append(PortfolioState(t=tau, m=m, defaults=defaults,
                                             residuals=residuals))
            want = (intensity(cfg, states[1], party, Scope.FULL)
                    / intensity(cfg, states[0], party, Scope.FULL))
            assert ratios[local, party_idx] == pytest.approx(want, rel=1e-6)


def test_spike_ratios_are_unity_without_correlation():
    cfg = make_config(rho=0.0, n=1, lam=0.6, lam_party=0.25)
    grid = GridSpec(horizon=5.0, step_count=10)
    block = simulate_block(cfg, grid, SeedSpec(master_seed=9, block_size=128), 0)
    rows, ratios = spike_ratios(cfg, block, ref_name=1)
    assert rows.size > 10
    np.testing.assert_allclose(ratios, 1.0, rtol=1e-12, atol=0.0)


def test_spike_ratios_exceed_one_under_correlation():
    cfg = make_config(rho=0.6, n=1, lam=0.6, lam_party=0.25)
    grid = GridSpec(horizon=5.0, step_count=10)
    block = simulate_block(cfg, grid, SeedSpec(master_seed=9, block_size=128), 0)
    _, ratios = spike_ratios(cfg, block, ref_name=1)
    assert np.median(ratios, axis=0).min() > 1.0
