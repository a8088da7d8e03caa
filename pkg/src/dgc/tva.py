"""Counterparty valuation adjustment of a credit default swap.

The adjustment prices the loss at the first default among the two parties:
the discounted positive exposure of the swap at that moment, scaled by the
loss given default.  Two exposure conventions are computed from the same
paths.  The "true" one values the swap with every default known at the
party default time, including the defaulting party itself, so the contagion
spike the party death inflicts on the reference intensity is priced in.
The "fake" one values it against the reference names only, forgetting the
parties, which is the classical shortcut and misses that co-movement.

Factor paths do not depend on the hazard rates, only default times do, so
one simulation per correlation level serves every bank hazard level: the
bank column's default times are re-derived from the same terminal values.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .batch import BatchQuadrature, CrossSection, survival_curve
from .engine import cds_leg_value, cds_payment_grid, par_spread
from .errors import ConfigError, NonConvergence
from .model import ModelConfig, default_config, threshold_inverse
from .simulate import GridSpec, SeedSpec, iter_blocks

__all__ = ["TVARunSpec", "TVAPoint", "exposure_values", "run_tva",
           "tva_csv", "write_tva"]

_CSV_HEADER = "rho,lambda_bank,mode,tva,se"
_MODES = {"true": "full", "fake": "reference"}


@dataclass(frozen=True)
class TVARunSpec:
    """One wrong-way study: a grid of correlations and bank hazard levels.

    ``spread`` of ``None`` means the reference's par spread at time zero,
    which no correlation level moves, so every cell trades the same
    contract.  ``recovery`` is used both for the reference leg and for the
    loss given default of the defaulting party.
    """

    rho_grid: tuple[float, ...] = (0.0, 0.2, 0.4, 0.6, 0.8)
    bank_hazards: tuple[float, ...] = (0.005, 0.01, 0.02)
    reference: int = 1
    spread: float | None = None
    recovery: float = 0.4
    maturity: float = 10.0
    rate: float = 0.02
    mode: str = "both"
    paths: int = 50_000
    step_count: int = 200
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.rho_grid:
            raise ConfigError("rho_grid", "must not be empty")
        for rho in self.rho_grid:
            if not (isinstance(rho, (int, float)) and 0.0 <= rho < 1.0):
                raise ConfigError("rho_grid", "entries must lie in [0, 1)")
        if not self.bank_hazards:
            raise ConfigError("bank_hazards", "must not be empty")
        for lam in self.bank_hazards:
            if not (isinstance(lam, (int, float)) and lam > 0.0):
                raise ConfigError("bank_hazards", "entries must be positive")
        if not (isinstance(self.reference, int) and self.reference >= 1):
            raise ConfigError("reference", "must be a reference name (>= 1)")
        if self.spread is not None and not (
                isinstance(self.spread, (int, float)) and self.spread >= 0.0):
            raise ConfigError("spread", "must be nonnegative or None")
        if not (isinstance(self.recovery, (int, float))
                and 0.0 <= self.recovery <= 1.0):
            raise ConfigError("recovery", "must lie in [0, 1]")
        if not (isinstance(self.maturity, (int, float)) and self.maturity > 0.0):
            raise ConfigError("maturity", "must be positive")
        if not (isinstance(self.rate, (int, float)) and np.isfinite(self.rate)):
            raise ConfigError("rate", "must be a finite number")
        if self.mode not in ("true", "fake", "both"):
            raise ConfigError("mode", "must be 'true', 'fake' or 'both'")
        if not (isinstance(self.paths, int) and self.paths >= 1):
            raise ConfigError("paths", "must be a positive integer")
        if not (isinstance(self.step_count, int) and self.step_count >= 1):
            raise ConfigError("step_count", "must be a positive integer")
        if not (isinstance(self.seed, int) and self.seed >= 0):
            raise ConfigError("seed", "must be a nonnegative integer")

    @property
    def modes(self) -> tuple[str, ...]:
        return ("true", "fake") if self.mode == "both" else (self.mode,)


@dataclass(frozen=True)
class TVAPoint:
    """Adjustment estimate for one correlation and bank hazard cell."""

    rho: float
    lambda_bank: float
    mode: str
    tva: float
    se: float
    runtime: float


def exposure_values(config: ModelConfig, section: CrossSection, name: int,
                    maturity: float, spread: float, *, rate: float = 0.02,
                    recovery: float = 0.4, kind: str = "full",
                    quad: BatchQuadrature | None = None) -> np.ndarray:
    """Clean swap value on ``name`` for each section row.

    All rows must share one valuation time.  Rows where ``name`` has
    already defaulted value to zero: the swap is extinguished, not priced
    as an imminent default payment.
    """
    t0 = float(section.times[0])
    if np.any(section.times != t0):
        raise ValueError("section rows must share one valuation time")
    grid = cds_payment_grid(t0, maturity)
    col = config.names.index(name)
    values = np.zeros(section.m.shape[0])
    alive = ~(section.taus[:, col] <= t0)
    if not np.any(alive):
        return values
    live = CrossSection(times=section.times[alive], m=section.m[alive],
                        taus=section.taus[alive],
                        terminals=section.terminals[alive])
    q = survival_curve(config, live, name, grid, kind, quad)
    values[alive] = cds_leg_value(q, grid, t0, spread,
                                  rate=rate, recovery=recovery)
    return values


@dataclass
class _CellSums:
    total: float = 0.0
    square: float = 0.0


def _first_default_snapshots(block, times, bank_col: int, cpty_col: int,
                             bank_rate: float, maturity: float,
                             step_count: int):
    """Exposure inputs for the block's paths whose first party default
    lands before expiry, keyed by the first grid node at or after it."""
    bank_taus = threshold_inverse(block.terminals[:, bank_col], bank_rate)
    tau = np.minimum(bank_taus, block.taus[:, cpty_col])
    rows = np.nonzero(tau < maturity)[0]
    nodes = np.searchsorted(times, tau[rows], side="left")
    keep = nodes < step_count  # exposure at expiry itself is worthless
    rows, nodes = rows[keep], nodes[keep]
    taus = block.taus[rows].copy()
    taus[:, bank_col] = bank_taus[rows]
    # the valuation sees only defaults realized by the party default time
    taus = np.where(taus <= tau[rows, None], taus, np.inf)
    return {"tau": tau[rows], "node": nodes,
            "m": block.factors[rows, nodes, :], "taus": taus,
            "terminals": block.terminals[rows]}


def _accumulate_cell(config: ModelConfig, spec: TVARunSpec, snap: dict,
                     times: np.ndarray, spread: float, modes: tuple[str, ...],
                     quad: BatchQuadrature | None,
                     sums: dict[str, _CellSums]) -> None:
    order = np.argsort(snap["node"], kind="stable")
    loss = 1.0 - spec.recovery
    for node in np.unique(snap["node"]):
        sel = order[np.searchsorted(snap["node"], node, side="left",
                                    sorter=order):
                    np.searchsorted(snap["node"], node, side="right",
                                    sorter=order)]
        u = float(times[node])
        section = CrossSection(times=np.full(sel.size, u),
                               m=snap["m"][sel], taus=snap["taus"][sel],
                               terminals=snap["terminals"][sel])
        disc = np.exp(-spec.rate * snap["tau"][sel])
        for mode in modes:
            value = exposure_values(config, section, spec.reference,
                                    spec.maturity, spread, rate=spec.rate,
                                    recovery=spec.recovery,
                                    kind=_MODES[mode], quad=quad)
            payout = loss * disc * np.maximum(value, 0.0)
            sums[mode].total += float(payout.sum())
            sums[mode].square += float(np.square(payout).sum())


def run_tva(spec: TVARunSpec | None = None, config: ModelConfig | None = None,
            quad: BatchQuadrature | None = None) -> list[TVAPoint]:
    """Estimate the adjustment on every grid cell of the run.

    Paths are simulated once per correlation level and shared by every
    bank hazard level and both exposure conventions, so the cells are
    coupled and their contrasts carry far less noise than their levels.
    """
    spec = spec or TVARunSpec()
    config = config or default_config()
    if spec.reference not in config.names:
        raise ConfigError("reference", "is not a name of the model")
    bank_col = config.names.index(-1)
    cpty_col = config.names.index(0)
    grid = GridSpec(spec.maturity, spec.step_count)
    times = grid.times
    spread = spec.spread
    if spread is None:
        spread = par_spread(config, spec.reference, spec.maturity,
                            rate=spec.rate, recovery=spec.recovery)
    points: list[TVAPoint] = []
    for rho in spec.rho_grid:
        started = time.perf_counter()
        cfg_rho = replace(config, rho_copula=float(rho))
        sums = {lam: {mode: _CellSums() for mode in spec.modes}
                for lam in spec.bank_hazards}
        snaps = {lam: [] for lam in spec.bank_hazards}
        for block in iter_blocks(cfg_rho, grid, SeedSpec(spec.seed), spec.paths):
            for lam in spec.bank_hazards:
                snaps[lam].append(_first_default_snapshots(
                    block, times, bank_col, cpty_col, float(lam),
                    spec.maturity, spec.step_count))
        for lam in spec.bank_hazards:
            merged = {key: np.concatenate([s[key] for s in snaps[lam]])
                      for key in snaps[lam][0]}
            cfg_cell = replace(cfg_rho,
                               hazards={**cfg_rho.hazards, -1: float(lam)})
            _accumulate_cell(cfg_cell, spec, merged, times, spread,
                             spec.modes, quad, sums[lam])
        runtime = time.perf_counter() - started
        for lam in spec.bank_hazards:
            for mode in spec.modes:
                cell = sums[lam][mode]
                n = spec.paths
                mean = cell.total / n
                var = max(cell.square - cell.total ** 2 / n, 0.0) / (n - 1)
                se = float(np.sqrt(var / n))
                if not (np.isfinite(mean) and np.isfinite(se)):
                    raise NonConvergence(
                        f"adjustment at rho={rho:g}, bank hazard {lam:g}, "
                        f"mode {mode} is not finite")
                points.append(TVAPoint(rho=float(rho), lambda_bank=float(lam),
                                       mode=mode, tva=float(mean), se=se,
                                       runtime=runtime))
    return points


def tva_csv(points: list[TVAPoint]) -> str:
    """Machine-readable rows, one per cell and convention; runtimes are
    left out so equal runs serialize to equal bytes."""
    lines = [_CSV_HEADER]
    for p in points:
        lines.append(f"{p.rho!r},{p.lambda_bank!r},{p.mode},{p.tva!r},{p.se!r}")
    return "\n".join(lines) + "\n"


def write_tva(points: list[TVAPoint], out) -> None:
    text = tva_csv(points)
    if isinstance(out, (str, Path)):
        Path(out).write_text(text)
    else:
        out.write(text)
