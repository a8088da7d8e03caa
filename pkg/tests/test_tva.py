import io

import numpy as np
import pytest

from dgc.batch import CrossSection
from dgc.engine import Scope, cds_clean_value, par_spread
from dgc.errors import ConfigError, NonConvergence
from dgc.model import PortfolioState, default_config
from dgc.simulate import GridSpec, SeedSpec, iter_blocks
from dgc import tva
from dgc.tva import (TVARunSpec, exposure_values, run_tva, tva_csv,
                     write_tva)


@pytest.fixture(scope="module")
def small_run():
    spec = TVARunSpec(rho_grid=(0.0, 0.4, 0.8), bank_hazards=(0.005, 0.02),
                      paths=4096, step_count=50, seed=0)
    return spec, run_tva(spec)


class TestRunSpec:
    def test_rho_outside_unit_interval_rejected(self):
        with pytest.raises(ConfigError):
            TVARunSpec(rho_grid=(0.0, 1.0))
        with pytest.raises(ConfigError):
            TVARunSpec(rho_grid=(-0.1,))

    def test_empty_grids_rejected(self):
        with pytest.raises(ConfigError):
            TVARunSpec(rho_grid=())
        with pytest.raises(ConfigError):
            TVARunSpec(bank_hazards=())

    def test_field_validation(self):
        with pytest.raises(ConfigError):
            TVARunSpec(paths=0)
        with pytest.raises(ConfigError):
            TVARunSpec(mode="TRUE")
        with pytest.raises(ConfigError):
            TVARunSpec(recovery=1.5)
        with pytest.raises(ConfigError):
            TVARunSpec(reference=0)
        with pytest.raises(ConfigError):
            TVARunSpec(spread=-0.01)
        with pytest.raises(ConfigError):
            TVARunSpec(seed=-1)

    def test_modes(self):
        assert TVARunSpec().modes == ("true", "fake")
        assert TVARunSpec(mode="fake").modes == ("fake",)


class TestExposureOracle:
    """The batched exposure must agree with the pointwise engine value."""

    def test_matches_engine_on_simulated_defaults(self):
        cfg = default_config(rho_copula=0.6)
        grid = GridSpec(10.0, 50)
        block = next(iter_blocks(cfg, grid, SeedSpec(3), 4096))
        times = grid.times
        bank = cfg.names.index(-1)
        cpty = cfg.names.index(0)
        tau = np.minimum(block.taus[:, bank], block.taus[:, cpty])
        rows = np.nonzero(tau < 10.0)[0]
        nodes = np.searchsorted(times, tau[rows], side="left")
        keep = nodes < 50
        rows, nodes = rows[keep], nodes[keep]
        spread = par_spread(cfg, 1, 10.0)
        checked = 0
        for r, k in zip(rows[:6], nodes[:6]):
            u = float(times[k])
            adj = np.where(block.taus[r] <= tau[r], block.taus[r], np.inf)
            section = CrossSection(times=np.array([u]),
                                   m=block.factors[r:r + 1, k, :],
                                   taus=adj[None, :],
                                   terminals=block.terminals[r:r + 1])
            m = {n: float(block.factors[r, k, j])
                 for j, n in enumerate(cfg.names)}
            defaults = {n: float(adj[j]) for j, n in enumerate(cfg.names)
                        if adj[j] <= u}
            residuals = {n: float(block.terminals[r, j]
                                  - block.factors[r, k, j])
                         for j, n in enumerate(cfg.names) if n in defaults}
            if 1 in defaults:
                continue
            state = PortfolioState(t=u, m=m, defaults=defaults,
                                   residuals=residuals)
            for kind, scope in (("full", Scope.FULL),
                                ("reference", Scope.REFERENCE)):
                got = exposure_values(cfg, section, 1, 10.0, spread,
                                      kind=kind)[0]
                want = cds_clean_value(cfg, state, 1, 10.0, spread,
                                       scope=scope)
                assert got == pytest.approx(want, rel=1e-8, abs=1e-12)
            checked += 1
        assert checked >= 3

    def test_extinguished_contract_is_worthless(self):
        cfg = default_config()
        section = CrossSection(times=np.array([2.0, 2.0]),
                               m=np.zeros((2, 3)),
                               taus=np.array([[np.inf, np.inf, 1.5],
                                              [np.inf, np.inf, np.inf]]),
                               terminals=np.zeros((2, 3)))
        values = exposure_values(cfg, section, 1, 10.0, 0.006)
        assert values[0] == 0.0
        assert values[1] != 0.0

    def test_mixed_valuation_times_rejected(self):
        cfg = default_config()
        section = CrossSection(times=np.array([1.0, 2.0]),
                               m=np.zeros((2, 3)),
                               taus=np.full((2, 3), np.inf),
                               terminals=np.zeros((2, 3)))
        with pytest.raises(ValueError):
            exposure_values(cfg, section, 1, 10.0, 0.006)


class TestRunTVA:
    def test_row_layout(self, small_run):
        spec, points = small_run
        assert len(points) == len(spec.rho_grid) * len(spec.bank_hazards) * 2
        head = points[0]
        assert (head.rho, head.lambda_bank, head.mode) == (0.0, 0.005, "true")
        assert all(p.se > 0.0 for p in points)

    def test_conventions_coincide_without_correlation(self, small_run):
        spec, points = small_run
        for lam in spec.bank_hazards:
            pair = {p.mode: p.tva for p in points
                    if p.rho == 0.0 and p.lambda_bank == lam}
            assert pair["true"] == pytest.approx(pair["fake"], rel=1e-12)

    def test_correlation_raises_true_adjustment(self, small_run):
        spec, points = small_run
        for lam in spec.bank_hazards:
            levels = [p.tva for p in points
                      if p.mode == "true" and p.lambda_bank == lam]
            assert levels == sorted(levels)

    def test_reference_only_convention_understates(self, small_run):
        _, points = small_run
        cell = {p.mode: p.tva for p in points
                if p.rho == 0.8 and p.lambda_bank == 0.02}
        assert cell["fake"] < 0.5 * cell["true"]

    def test_unknown_reference_rejected(self):
        with pytest.raises(ConfigError):
            run_tva(TVARunSpec(reference=7, paths=16, step_count=4))

    def test_non_finite_estimate_raises(self, monkeypatch):
        def poisoned(*args, **kwargs):
            return np.full(args[1].m.shape[0], np.nan)

        monkeypatch.setattr(tva, "exposure_values", poisoned)
        spec = TVARunSpec(rho_grid=(0.4,), bank_hazards=(0.02,),
                          paths=512, step_count=10)
        with pytest.raises(NonConvergence):
            run_tva(spec)


class TestCsvOutput:
    def test_round_trip_and_determinism(self, small_run):
        spec, points = small_run
        text = tva_csv(points)
        lines = text.strip().split("\n")
        assert lines[0] == "rho,lambda_bank,mode,tva,se"
        assert len(lines) == 1 + len(points)
        again = run_tva(spec)
        assert tva_csv(again) == text

    def test_write_targets_agree(self, small_run, tmp_path):
        _, points = small_run
        buffer = io.StringIO()
        write_tva(points, buffer)
        path = tmp_path / "tva.csv"
        write_tva(points, path)
        assert path.read_text() == buffer.getvalue()
