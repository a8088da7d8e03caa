"""Exact simulation of factor paths and default times.

The factor of every name is Gaussian with independent increments on any
grid, and the default time is a deterministic transform of the terminal
factor value, so paths are sampled without discretisation error: one
normal draw per name per step plus one terminal draw per name.

Randomness comes from counter-based streams keyed by (master seed, block
index), so any block, and therefore any single path, can be regenerated
in isolation and in any order, on any number of workers, with the same
result.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .engine import log_weight_increment
from .errors import ConfigError
from .gaussian import QuadratureConfig
from .model import ModelConfig, PortfolioState, factor_decay, threshold_inverse


@dataclass(frozen=True)
class GridSpec:
    """Uniform time grid from zero to the horizon."""

    horizon: float
    step_count: int

    def __post_init__(self) -> None:
        if not (isinstance(self.horizon, (int, float)) and self.horizon > 0.0):
            raise ConfigError("horizon", "must be a positive number")
        if not (isinstance(self.step_count, int) and self.step_count >= 1):
            raise ConfigError("step_count", "must be a positive integer")

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, float(self.horizon), self.step_count + 1)


@dataclass(frozen=True)
class SeedSpec:
    """Master seed and block width of the counter-based random streams."""

    master_seed: int = 0
    block_size: int = 4096

    def __post_init__(self) -> None:
        if not (isinstance(self.master_seed, int) and 0 <= self.master_seed < 2**64):
            raise ConfigError("master_seed", "must be an integer in [0, 2**64)")
        if not (isinstance(self.block_size, int) and self.block_size >= 1):
            raise ConfigError("block_size", "must be a positive integer")


@dataclass(frozen=True)
class PathRecord:
    """One simulated path: factor levels per node plus terminal data.

    ``factors[k, i]`` is the running factor of ``names[i]`` at ``times[k]``,
    ``terminals[i]`` its limit value and ``taus[i]`` the (always finite)
    default time; a name is alive at the horizon when its tau exceeds it.
    """

    path_index: int
    times: np.ndarray
    names: tuple[int, ...]
    factors: np.ndarray
    terminals: np.ndarray
    taus: np.ndarray

    def tau(self, name: int) -> float:
        return float(self.taus[self.names.index(name)])

    def state_at(self, step_index: int) -> PortfolioState:
        """Portfolio state at a grid node, residuals kept in sync with m.

        The residual of a defaulted name is its (fixed) default threshold
        minus the current factor level; the threshold equals the terminal
        factor value by calibration, so no transform is needed here.
        """
        t = float(self.times[step_index])
        m = {name: float(self.factors[step_index, i])
             for i, name in enumerate(self.names)}
        defaults = {}
        residuals = {}
        for i, name in enumerate(self.names):
            if self.taus[i] <= t:
                defaults[name] = float(self.taus[i])
                residuals[name] = float(self.terminals[i] - self.factors[step_index, i])
        return PortfolioState(t=t, m=m, defaults=defaults, residuals=residuals)


@dataclass(frozen=True)
class SimulationBlock:
    """A contiguous block of paths sharing one random stream."""

    path_offset: int
    times: np.ndarray
    names: tuple[int, ...]
    factors: np.ndarray    # (paths, nodes, names)
    terminals: np.ndarray  # (paths, names)
    taus: np.ndarray       # (paths, names)

    def record(self, local_index: int) -> PathRecord:
        return PathRecord(path_index=self.path_offset + local_index,
                          times=self.times, names=self.names,
                          factors=self.factors[local_index],
                          terminals=self.terminals[local_index],
                          taus=self.taus[local_index])

    def trimmed(self, count: int) -> "SimulationBlock":
        if count >= self.factors.shape[0]:
            return self
        return SimulationBlock(path_offset=self.path_offset, times=self.times,
                               names=self.names, factors=self.factors[:count],
                               terminals=self.terminals[:count],
                               taus=self.taus[:count])


def simulate_block(config: ModelConfig, grid: GridSpec, seeds: SeedSpec,
                   block_index: int) -> SimulationBlock:
    """Simulate one block of paths from its dedicated random stream.

    Draw layout is part of the reproducibility contract: one array of
    standard normals with one row per grid step plus a terminal row, the
    first column driving the common factor and one column per name after
    it, a block of paths in the trailing axis.
    """
    if block_index < 0:
        raise ConfigError("block_index", "must be nonnegative")
    names = config.names
    times = grid.times
    steps = grid.step_count
    width = seeds.block_size
    rng = np.random.Generator(np.random.Philox(key=[seeds.master_seed, block_index]))
    draws = rng.standard_normal((steps + 1, len(names) + 1, width))

    srho = np.sqrt(config.rho_copula)
    sidio = np.sqrt(1.0 - config.rho_copula)
    mixed = srho * draws[:, :1, :] + sidio * draws[:, 1:, :]  # (steps+1, names, width)

    decay_sq = np.exp(-config.kappa * times)
    step_sd = np.sqrt(decay_sq[:-1] - decay_sq[1:])
    factors = np.zeros((width, steps + 1, len(names)))
    np.cumsum(step_sd[:, None, None] * mixed[:-1], axis=0,
              out=factors.transpose(1, 2, 0)[1:])

    tail_sd = float(factor_decay(grid.horizon, config.kappa))
    terminals = factors[:, steps, :] + tail_sd * mixed[steps].T
    taus = np.empty_like(terminals)
    for i, name in enumerate(names):
        taus[:, i] = threshold_inverse(terminals[:, i], config.hazards[name])
    return SimulationBlock(path_offset=block_index * width, times=times,
                           names=names, factors=factors, terminals=terminals,
                           taus=taus)


def iter_blocks(config: ModelConfig, grid: GridSpec, seeds: SeedSpec,
                path_count: int) -> Iterator[SimulationBlock]:
    """Yield blocks covering ``path_count`` paths, the last one trimmed."""
    if path_count < 1:
        raise ConfigError("path_count", "must be a positive integer")
    done = 0
    for block_index in range((path_count + seeds.block_size - 1) // seeds.block_size):
        block = simulate_block(config, grid, seeds, block_index)
        yield block.trimmed(path_count - done)
        done += seeds.block_size


def simulate_path(config: ModelConfig, grid: GridSpec, seeds: SeedSpec,
                  path_index: int) -> PathRecord:
    """Regenerate exactly one path, independent of any batch run."""
    if path_index < 0:
        raise ConfigError("path_index", "must be nonnegative")
    block = simulate_block(config, grid, seeds, path_index // seeds.block_size)
    return block.record(path_index % seeds.block_size)


def doleans_weight(config: ModelConfig, record: PathRecord,
                   quad_cfg: QuadratureConfig | None = None) -> np.ndarray:
    """Density process of the invariance measure along one path.

    Entry ``k`` is the weight at ``record.times[k]``, so the path starts at
    one and its last entry is the terminal density the path dump reports.
    Each step carries the first-order bias of the left-node integrator, so
    refine the grid rather than this function when more accuracy is needed.
    """
    log_steps = np.empty(len(record.times) - 1)
    for k in range(log_steps.size):
        log_steps[k] = log_weight_increment(config, record.state_at(k),
                                            record.state_at(k + 1), quad_cfg)
    return np.exp(np.concatenate([[0.0], np.cumsum(log_steps)]))
