"""Path-level simulation: subordinator skeletons, inversion to the random
clock, time-changed Brownian increments, and Poisson jump streams.

All generators are pure functions of a :class:`SeedSpec`; distinct stream
indices give statistically independent paths and identical specs reproduce
bit-identical output.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import HorizonError, ConfigurationError
from .levy_core import (LevyMeasure, Subordinator, JumpSampler,
                        make_jump_sampler)

__all__ = [
    "SamplePath",
    "JumpStream",
    "SeedSpec",
    "simulate_subordinator",
    "ensure_horizon",
    "invert_path",
    "invert_indices",
    "simulate_tc_brownian",
    "simulate_jump_stream",
    "OperationalNoise",
    "simulate_operational_noise",
    "inverse_ensemble",
]

# fixed sub-stream purposes so that the generators consumed by the four
# path operations stay independent even when fed the same SeedSpec
_PURPOSE_SUBORDINATOR = 0
_PURPOSE_BROWNIAN = 1
_PURPOSE_JUMPS = 2


@dataclass(frozen=True)
class SeedSpec:
    """Master seed plus a per-path stream index."""

    master: int
    stream: int = 0

    def rng(self, purpose: int = 0) -> np.random.Generator:
        ss = np.random.SeedSequence(
            entropy=self.master, spawn_key=(self.stream, purpose))
        return np.random.default_rng(ss)


@dataclass(frozen=True)
class SamplePath:
    """RCLL skeleton of a scalar process on a finite time grid."""

    grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)
        if grid.ndim != 1 or values.ndim != 1 or grid.size != values.size:
            raise ConfigurationError(
                "grid and values must be 1-d arrays of equal length")
        if grid.size == 0:
            raise ConfigurationError("empty sample path")
        if np.any(np.diff(grid) <= 0):
            raise ConfigurationError("grid must be strictly increasing")
        if grid[0] < 0:
            raise ConfigurationError("grid must start at a nonnegative time")
        if not np.all(np.isfinite(values)):
            raise ConfigurationError("path values must be finite")

    def __len__(self):
        return self.grid.size


@dataclass(frozen=True)
class JumpStream:
    """Realized jumps per integrator step, on the t-clock.

    ``counts[i]`` jumps fall in step i; their marks occupy
    ``marks[offsets[i]:offsets[i + 1]]``.  ``d_e`` is the clock increment
    attributed to each step, kept for compensator use.
    """

    grid: np.ndarray
    d_e: np.ndarray
    counts: np.ndarray
    times: np.ndarray
    marks: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "offsets",
            np.concatenate([[0], np.cumsum(self.counts)]).astype(int))
        if self.times.size and np.any(np.diff(self.times) < -1e-15):
            raise ConfigurationError("jump times must be nondecreasing")

    def marks_at(self, step: int) -> np.ndarray:
        return self.marks[self.offsets[step]:self.offsets[step + 1]]


def simulate_subordinator(spec: Subordinator, d_tau: float, t_op: float,
                          seed: SeedSpec) -> SamplePath:
    """Skeleton of D on the operational clock with step ``d_tau``."""
    if d_tau <= 0 or t_op <= 0:
        raise ConfigurationError("d_tau and t_op must be positive")
    n = max(1, int(np.ceil(t_op / d_tau)))
    rng = seed.rng(_PURPOSE_SUBORDINATOR)
    incr = spec.sample_increments(rng, d_tau, n)
    grid = d_tau * np.arange(n + 1)
    values = np.concatenate([[0.0], np.cumsum(incr)])
    return SamplePath(grid=grid, values=values)


def ensure_horizon(spec: Subordinator, d_tau: float, t_horizon: float,
                   seed: SeedSpec, max_doublings: int = 24) -> SamplePath:
    """Simulate D far enough that ``D(T_op) > t_horizon``.

    The operational horizon starts at ``t_horizon`` and doubles (reusing
    the already-drawn increments) until D exceeds the requested t-horizon
    or the hard cap is hit.
    """
    if d_tau <= 0 or t_horizon <= 0:
        raise ConfigurationError("d_tau and t_horizon must be positive")
    rng = seed.rng(_PURPOSE_SUBORDINATOR)
    n = max(1, int(np.ceil(t_horizon / d_tau)))
    incr = spec.sample_increments(rng, d_tau, n)
    doublings = 0
    while incr.sum() <= t_horizon:
        if doublings >= max_doublings:
            raise HorizonError(
                f"subordinator did not exceed t={t_horizon} after "
                f"{doublings} doublings of the operational horizon "
                f"(T_op={n * d_tau})")
        incr = np.concatenate(
            [incr, spec.sample_increments(rng, d_tau, n)])
        n *= 2
        doublings += 1
    grid = d_tau * np.arange(incr.size + 1)
    values = np.concatenate([[0.0], np.cumsum(incr)])
    return SamplePath(grid=grid, values=values)


def invert_indices(d_path: SamplePath, t_grid: np.ndarray) -> np.ndarray:
    """Index into ``d_path.grid`` of the first grid tau with D(tau) > t."""
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.size and t_grid.max() >= d_path.values[-1]:
        raise HorizonError(
            f"requested t-horizon {t_grid.max()} is not covered by the "
            f"operational horizon (D ends at {d_path.values[-1]})")
    return np.searchsorted(d_path.values, t_grid, side="right")


def invert_path(d_path: SamplePath, t_grid) -> SamplePath:
    """Grid-right estimate of the inverse process on ``t_grid``.

    Returns, for each t, the smallest grid tau with ``D(tau) > t``; flat
    across D's jumps and nondecreasing by construction.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    idx = invert_indices(d_path, t_grid)
    return SamplePath(grid=t_grid, values=d_path.grid[idx])


def simulate_tc_brownian(e_path: SamplePath, seed: SeedSpec) -> SamplePath:
    """Brownian motion read on the random clock: increments are centered
    Gaussians with variance ``dE`` and exactly 0 wherever the clock does
    not advance."""
    d_e = np.diff(e_path.values)
    if np.any(d_e < 0):
        raise ConfigurationError("clock path must be nondecreasing")
    rng = seed.rng(_PURPOSE_BROWNIAN)
    incr = np.sqrt(d_e) * rng.standard_normal(d_e.size)
    values = np.concatenate([[0.0], np.cumsum(incr)])
    return SamplePath(grid=e_path.grid, values=values)


def simulate_jump_stream(nu: LevyMeasure, e_path: SamplePath, seed: SeedSpec,
                         sampler: Optional[JumpSampler] = None) -> JumpStream:
    """Poisson jumps on the random clock, truncated at the small-jump
    cutoff; per step the count is Poisson(total mass * dE)."""
    if sampler is None:
        sampler = make_jump_sampler(nu)
    d_e = np.diff(e_path.values)
    if np.any(d_e < 0):
        raise ConfigurationError("clock path must be nondecreasing")
    rng = seed.rng(_PURPOSE_JUMPS)
    counts = rng.poisson(sampler.total_mass * d_e)
    total = int(counts.sum())
    step = np.repeat(np.arange(counts.size), counts)
    widths = np.diff(e_path.grid)
    times = e_path.grid[:-1][step] + rng.random(total) * widths[step]
    marks = sampler.sample(rng, total)
    order = np.lexsort((times, step))
    return JumpStream(grid=e_path.grid, d_e=d_e, counts=counts,
                      times=times[order], marks=marks[order])


# ---------------------------------------------------------------------------
# operational-clock noise for duality coupling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OperationalNoise:
    """All driving noise generated once on the operational clock.

    Both the direct integrator and the duality integrator consume this
    bundle, enabling pathwise comparison of the two schemes.
    """

    d_path: SamplePath
    d_tau: float
    db: np.ndarray            # Brownian increments per tau-step
    jump_counts: np.ndarray   # Poisson counts per tau-step
    jump_marks: np.ndarray
    jump_offsets: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(
            self, "jump_offsets",
            np.concatenate([[0], np.cumsum(self.jump_counts)]).astype(int))

    def marks_in_steps(self, lo: int, hi: int) -> np.ndarray:
        """Marks of jumps landing in tau-steps lo..hi-1."""
        return self.jump_marks[self.jump_offsets[lo]:self.jump_offsets[hi]]


def simulate_operational_noise(spec: Subordinator, nu: Optional[LevyMeasure],
                               d_tau: float, t_horizon: float, seed: SeedSpec,
                               sampler: Optional[JumpSampler] = None
                               ) -> OperationalNoise:
    d_path = ensure_horizon(spec, d_tau, t_horizon, seed)
    m = d_path.grid.size - 1
    rng_b = seed.rng(_PURPOSE_BROWNIAN)
    db = np.sqrt(d_tau) * rng_b.standard_normal(m)
    if nu is not None:
        if sampler is None:
            sampler = make_jump_sampler(nu)
        rng_j = seed.rng(_PURPOSE_JUMPS)
        counts = rng_j.poisson(sampler.total_mass * d_tau, m)
        marks = sampler.sample(rng_j, int(counts.sum()))
    else:
        counts = np.zeros(m, dtype=int)
        marks = np.empty(0)
    return OperationalNoise(d_path=d_path, d_tau=d_tau, db=db,
                            jump_counts=counts, jump_marks=marks)


# ---------------------------------------------------------------------------
# vectorised inverse-subordinator ensembles
# ---------------------------------------------------------------------------

def inverse_ensemble(spec: Subordinator, d_tau: float, t_points,
                     n_paths: int, master_seed: int,
                     chunk_size: int = 1024,
                     max_doublings: int = 24) -> np.ndarray:
    """Matrix of inverse-clock values E_t, shape (n_paths, len(t_points)).

    Chunked so the result is bit-identical regardless of how the work is
    scheduled; chunk k draws from the generator seeded by
    (master_seed, chunk index).
    """
    t_points = np.asarray(t_points, dtype=float)
    t_max = float(t_points.max())
    out = np.empty((n_paths, t_points.size))
    row = 0
    for chunk_idx in range(0, -(-n_paths // chunk_size)):
        k = min(chunk_size, n_paths - row)
        rng = np.random.default_rng(
            np.random.SeedSequence(master_seed, spawn_key=(chunk_idx,)))
        n = max(1, int(np.ceil(t_max / d_tau)))
        incr = spec.sample_increments(rng, d_tau, (k, n))
        d_vals = np.cumsum(incr, axis=1)
        doublings = 0
        while np.any(d_vals[:, -1] <= t_max):
            if doublings >= max_doublings:
                raise HorizonError(
                    "inverse ensemble: subordinator failed to cover the "
                    f"horizon t={t_max} within {doublings} doublings")
            extra = spec.sample_increments(rng, d_tau, (k, n))
            d_vals = np.concatenate(
                [d_vals, d_vals[:, -1:] + np.cumsum(extra, axis=1)], axis=1)
            n *= 2
            doublings += 1
        d_vals = np.concatenate([np.zeros((k, 1)), d_vals], axis=1)
        for i in range(k):
            idx = np.searchsorted(d_vals[i], t_points, side="right")
            out[row + i] = d_tau * idx
        row += k
    return out
