"""Euler integration of the time-changed SDE.

Two routes are provided: ``integrate_direct`` steps the time-changed
equation on the t-clock (compensated jumps, coefficients frozen at left
limits), and ``integrate_duality`` integrates the reduced equation on the
operational clock and composes with the inverse clock.  With coupled
noise the two can be compared pathwise.

``integrate_batch`` is the vectorised many-path driver used by the Monte
Carlo estimators; coefficient functions must broadcast over numpy arrays
in the state (and clock) argument.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional

import numpy as np

from .errors import (BlowUpError, ConfigurationError, EvaluationError)
from .levy_core import (LevyMeasure, QuadratureConfig, Subordinator,
                        compensator_rule, make_jump_sampler)
from .paths import (OperationalNoise, SamplePath, SeedSpec, ensure_horizon,
                    invert_indices, simulate_jump_stream,
                    simulate_operational_noise, simulate_tc_brownian,
                    invert_path)

__all__ = [
    "CoefficientSet",
    "TcSdeSpec",
    "IntegratorConfig",
    "PathResult",
    "BatchResult",
    "integrate_direct",
    "integrate_duality",
    "integrate_batch",
    "classical_euler_maruyama",
    "lipschitz_probe",
    "LipschitzProbeReport",
]


@dataclass(frozen=True)
class CoefficientSet:
    """The four coefficient functions of the SDE.

    ``f``, ``k``, ``g`` map (t1, t2, x) to a real; ``h`` maps
    (t1, t2, x, y) with |y| < c.  All must broadcast over arrays in x
    (and y for h).  ``h_state_linear`` and ``h_autonomous`` are optional
    declarations (h(t1,t2,x,y) = x * h(t1,t2,1,y), and h independent of
    t1, t2) that let the integrators cache the compensator integral.
    """

    f: Callable
    k: Callable
    g: Callable
    h: Callable
    lipschitz_K: Optional[float] = None
    h_state_linear: bool = False
    h_autonomous: bool = False


@dataclass(frozen=True)
class TcSdeSpec:
    coefficients: CoefficientSet
    c: float
    x0: float
    subordinator: Subordinator
    nu: Optional[LevyMeasure] = None

    def __post_init__(self):
        if not np.isfinite(self.x0):
            raise ConfigurationError("initial value x0 must be finite")
        if self.c <= 0:
            raise ConfigurationError("maximum jump size c must be positive")
        if self.nu is not None and self.nu.c != self.c:
            raise ConfigurationError(
                f"levy measure support bound ({self.nu.c}) must equal the "
                f"spec's maximum jump size ({self.c})")


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float
    horizon: float
    small_jump_cutoff: Optional[float] = None  # default: nu's cutoff
    blowup_bound: float = 1e12
    quadrature: QuadratureConfig = field(default_factory=QuadratureConfig)
    d_tau: Optional[float] = None    # operational step; default matched to dt
    compensator_panels: int = 8
    compensator_order: int = 6

    def __post_init__(self):
        if self.dt <= 0 or self.horizon <= 0:
            raise ConfigurationError("dt and horizon must be positive")
        if self.blowup_bound <= 0:
            raise ConfigurationError("blow-up bound must be positive")


@dataclass
class PathResult:
    """One integrated path plus the per-step increments that built it."""

    grid: np.ndarray
    x: np.ndarray
    e: np.ndarray
    d_e: np.ndarray
    d_b: np.ndarray
    jump_marks: List[np.ndarray]
    comp: np.ndarray   # compensator rate int h d(nu) at the left state

    @property
    def path(self) -> SamplePath:
        return SamplePath(grid=self.grid, values=self.x)

    @property
    def e_path(self) -> SamplePath:
        return SamplePath(grid=self.grid, values=self.e)


def _t_grid(cfg: IntegratorConfig) -> np.ndarray:
    n = max(1, int(round(cfg.horizon / cfg.dt)))
    return cfg.dt * np.arange(n + 1)


def _d_tau_for(spec: TcSdeSpec, cfg: IntegratorConfig) -> float:
    """Operational step matched to the t-resolution.

    Stable-type subordinators make increments of scale d_tau^(1/beta);
    matching that scale to dt keeps the clock increments per t-step small
    (at d_tau = dt the inverse clock would sweep O(1) chunks inside a
    single frozen Euler step).
    """
    if cfg.d_tau is not None:
        return cfg.d_tau
    beta = getattr(spec.subordinator, "beta", None)
    if beta is not None:
        return cfg.dt ** beta
    return cfg.dt


def _rule_for(spec: TcSdeSpec, cfg: IntegratorConfig):
    if spec.nu is None:
        return np.empty(0), np.empty(0)
    eps = cfg.small_jump_cutoff or spec.nu.small_jump_cutoff
    return compensator_rule(spec.nu, eps,
                            panels_per_side=cfg.compensator_panels,
                            order=cfg.compensator_order)


def _scalar(val, name, t):
    val = float(val)
    if not np.isfinite(val):
        raise EvaluationError(
            f"coefficient {name} evaluated to a non-finite value at t={t}")
    return val


def integrate_direct(spec: TcSdeSpec, cfg: IntegratorConfig, seed: SeedSpec,
                     noise: Optional[OperationalNoise] = None) -> PathResult:
    """Time-changed Euler-Maruyama on the t-clock.

    Per step: drift (dt and dE scales) and diffusion first, evaluated at
    the left-limit state, then the compensator correction, then realized
    jumps applied sequentially.  When ``noise`` is supplied the Brownian
    and Poisson increments are read off the shared operational-clock
    bundle instead of being drawn fresh.
    """
    t_grid = _t_grid(cfg)
    n = t_grid.size - 1
    co = spec.coefficients
    ys, ws = _rule_for(spec, cfg)

    if noise is not None:
        idx = invert_indices(noise.d_path, t_grid)
        e = noise.d_path.grid[idx]
        d_e = np.diff(e)
        d_b = np.array([noise.db[idx[i]:idx[i + 1]].sum() for i in range(n)])
        marks = [noise.marks_in_steps(idx[i], idx[i + 1]) for i in range(n)]
    else:
        d_tau = _d_tau_for(spec, cfg)
        d_path = ensure_horizon(spec.subordinator, d_tau, cfg.horizon, seed)
        e_path = invert_path(d_path, t_grid)
        e = e_path.values
        d_e = np.diff(e)
        d_b = np.diff(simulate_tc_brownian(e_path, seed).values)
        if spec.nu is not None:
            eps = cfg.small_jump_cutoff or spec.nu.small_jump_cutoff
            sampler = make_jump_sampler(spec.nu, eps)
            stream = simulate_jump_stream(spec.nu, e_path, seed, sampler)
            marks = [stream.marks_at(i) for i in range(n)]
        else:
            marks = [np.empty(0)] * n

    x = np.empty(n + 1)
    comp = np.zeros(n)
    x[0] = spec.x0
    d_t = np.diff(t_grid)
    for i in range(n):
        t, ei, xi = t_grid[i], e[i], x[i]
        fv = _scalar(co.f(t, ei, xi), "f", t)
        kv = _scalar(co.k(t, ei, xi), "k", t)
        gv = _scalar(co.g(t, ei, xi), "g", t)
        if ys.size:
            comp[i] = float(np.sum(ws * co.h(t, ei, xi, ys)))
        xn = xi + fv * d_t[i] + kv * d_e[i] + gv * d_b[i] - d_e[i] * comp[i]
        for y in marks[i]:
            xn = xn + _scalar(co.h(t, ei, xn, y), "h", t)
        if abs(xn) > cfg.blowup_bound:
            raise BlowUpError(
                f"path exceeded blow-up bound {cfg.blowup_bound} at "
                f"t={t_grid[i + 1]}", time=t_grid[i + 1])
        x[i + 1] = xn
    return PathResult(grid=t_grid, x=x, e=e, d_e=d_e, d_b=d_b,
                      jump_marks=list(marks), comp=comp)


def classical_euler_maruyama(co: CoefficientSet, x0: float,
                             grid: np.ndarray, d_b: np.ndarray,
                             jump_marks: List[np.ndarray],
                             rule=(np.empty(0), np.empty(0)),
                             blowup_bound: float = 1e12) -> np.ndarray:
    """Classical Euler-Maruyama with compensated jumps on a given grid.

    Coefficients are evaluated at (t, t, y); drift is ``f + k`` so the
    reduced (f = 0) equation matches the duality statement.  The step
    arithmetic mirrors ``integrate_direct`` exactly, which is what makes
    the deterministic-subordinator collapse bit-for-bit.
    """
    ys, ws = rule
    n = grid.size - 1
    d_t = np.diff(grid)
    x = np.empty(n + 1)
    x[0] = x0
    for i in range(n):
        t, xi = grid[i], x[i]
        fv = _scalar(co.f(t, t, xi), "f", t)
        kv = _scalar(co.k(t, t, xi), "k", t)
        gv = _scalar(co.g(t, t, xi), "g", t)
        comp = float(np.sum(ws * co.h(t, t, xi, ys))) if ys.size else 0.0
        xn = xi + fv * d_t[i] + kv * d_t[i] + gv * d_b[i] - d_t[i] * comp
        for y in jump_marks[i]:
            xn = xn + _scalar(co.h(t, t, xn, y), "h", t)
        if abs(xn) > blowup_bound:
            raise BlowUpError(
                f"path exceeded blow-up bound {blowup_bound} at t={grid[i+1]}",
                time=grid[i + 1])
        x[i + 1] = xn
    return x


def _probe_f_zero(co: CoefficientSet):
    ts = np.array([0.0, 0.3, 1.7])
    xs = np.array([-2.0, -0.1, 0.4, 3.0])
    for t1 in ts:
        for t2 in ts:
            if np.any(np.abs(np.asarray(co.f(t1, t2, xs), dtype=float))
                      > 0.0):
                raise ConfigurationError(
                    "duality integration requires the reduced SDE "
                    "(dt-drift f identically zero)")


def integrate_duality(spec: TcSdeSpec, cfg: IntegratorConfig, seed: SeedSpec,
                      noise: Optional[OperationalNoise] = None) -> PathResult:
    """Integrate the reduced SDE on the operational clock and compose
    with the inverse clock (the duality route).

    Y starts at the grid estimate of E at t=0 (one operational step, the
    skeleton's stand-in for E_0 = 0) so that X(0) = x0 holds exactly and
    the coupled comparison with ``integrate_direct`` consumes identical
    noise increments.
    """
    _probe_f_zero(spec.coefficients)
    t_grid = _t_grid(cfg)
    d_tau = _d_tau_for(spec, cfg)
    if noise is None:
        sampler = None
        if spec.nu is not None:
            eps = cfg.small_jump_cutoff or spec.nu.small_jump_cutoff
            sampler = make_jump_sampler(spec.nu, eps)
        noise = simulate_operational_noise(
            spec.subordinator, spec.nu, d_tau, cfg.horizon, seed, sampler)
    d_path = noise.d_path
    idx = invert_indices(d_path, t_grid)
    shift = int(idx[0])

    top = int(idx.max())
    tau_grid = d_path.grid[shift:top + 1]
    op_marks = [noise.marks_in_steps(j, j + 1) for j in range(shift, top)]
    ys_ws = _rule_for(spec, cfg)
    y_vals = classical_euler_maruyama(
        spec.coefficients, spec.x0, tau_grid, noise.db[shift:top], op_marks,
        rule=ys_ws, blowup_bound=cfg.blowup_bound)

    x = y_vals[idx - shift]
    e = d_path.grid[idx]
    n = t_grid.size - 1
    d_e = np.diff(e)
    d_b = np.array([noise.db[idx[i]:idx[i + 1]].sum() for i in range(n)])
    marks = [noise.marks_in_steps(idx[i], idx[i + 1]) for i in range(n)]
    return PathResult(grid=t_grid, x=x, e=e, d_e=d_e, d_b=d_b,
                      jump_marks=marks, comp=np.zeros(n))


# ---------------------------------------------------------------------------
# vectorised many-path integration
# ---------------------------------------------------------------------------

@dataclass
class BatchResult:
    record_times: np.ndarray
    x_at: np.ndarray       # (n_paths, n_record)
    e_at: np.ndarray
    sup_abs: np.ndarray    # running max of |X| over the full grid
    blown: np.ndarray      # bool mask of paths that hit the blow-up bound

    @property
    def n_paths(self) -> int:
        return self.x_at.shape[0]


def _resolve_threads(n_threads: Optional[int]) -> int:
    if n_threads is None:
        env = os.environ.get("TCSDE_THREADS")
        n_threads = int(env) if env else 1
    if n_threads == 0:
        n_threads = os.cpu_count() or 1
    return max(1, n_threads)


def integrate_batch(spec: TcSdeSpec, cfg: IntegratorConfig, n_paths: int,
                    master_seed: int, record_times,
                    chunk_size: int = 1024,
                    n_threads: Optional[int] = None) -> BatchResult:
    """Integrate an ensemble of paths, chunked and deterministically seeded.

    Chunk k draws from the generator seeded by (master_seed, k), and
    chunk boundaries are fixed by ``chunk_size`` alone, so results are
    bit-identical for any thread count (TCSDE_THREADS or ``n_threads``).
    """
    record_times = np.asarray(record_times, dtype=float)
    t_grid = _t_grid(cfg)
    rec_idx = np.searchsorted(t_grid, record_times)
    if not np.allclose(t_grid[rec_idx], record_times, atol=cfg.dt / 2):
        raise ConfigurationError(
            "record times must lie on the integration grid")
    n_chunks = -(-n_paths // chunk_size)
    x_at = np.empty((n_paths, record_times.size))
    e_at = np.empty((n_paths, record_times.size))
    sup_abs = np.empty(n_paths)
    blown = np.zeros(n_paths, dtype=bool)

    def run_chunk(ci):
        lo = ci * chunk_size
        hi = min(lo + chunk_size, n_paths)
        rng = np.random.default_rng(
            np.random.SeedSequence(master_seed, spawn_key=(ci,)))
        res = _integrate_chunk(spec, cfg, hi - lo, rng, t_grid, rec_idx)
        x_at[lo:hi], e_at[lo:hi], sup_abs[lo:hi], blown[lo:hi] = res

    threads = _resolve_threads(n_threads)
    if threads == 1:
        for ci in range(n_chunks):
            run_chunk(ci)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run_chunk, range(n_chunks)))
    return BatchResult(record_times=record_times, x_at=x_at, e_at=e_at,
                       sup_abs=sup_abs, blown=blown)


def _integrate_chunk(spec: TcSdeSpec, cfg: IntegratorConfig, k: int,
                     rng: np.random.Generator, t_grid: np.ndarray,
                     rec_idx: np.ndarray, max_doublings: int = 24):
    co = spec.coefficients
    n = t_grid.size - 1
    d_t = np.diff(t_grid)
    d_tau = _d_tau_for(spec, cfg)
    t_max = float(t_grid[-1])

    # subordinator skeletons, extended until every path covers the horizon
    m = max(1, int(np.ceil(t_max / d_tau)))
    d_vals = np.cumsum(spec.subordinator.sample_increments(rng, d_tau, (k, m)),
                       axis=1)
    doublings = 0
    while np.any(d_vals[:, -1] <= t_max):
        if doublings >= max_doublings:
            raise ConfigurationError(
                "batch integration: subordinator failed to cover the "
                f"horizon t={t_max} within {doublings} doublings")
        extra = spec.subordinator.sample_increments(rng, d_tau, (k, m))
        d_vals = np.concatenate(
            [d_vals, d_vals[:, -1:] + np.cumsum(extra, axis=1)], axis=1)
        m *= 2
        doublings += 1
    d_vals = np.concatenate([np.zeros((k, 1)), d_vals], axis=1)
    e = np.empty((k, n + 1))
    for i in range(k):
        e[i] = d_tau * np.searchsorted(d_vals[i], t_grid, side="right")
    d_e = np.diff(e, axis=1)

    d_b = np.sqrt(d_e) * rng.standard_normal((k, n))
    sampler = None
    counts = None
    if spec.nu is not None:
        eps = cfg.small_jump_cutoff or spec.nu.small_jump_cutoff
        sampler = make_jump_sampler(spec.nu, eps)
        counts = rng.poisson(sampler.total_mass * d_e)
    ys, ws = _rule_for(spec, cfg)
    comp_unit = None
    if ys.size and co.h_state_linear and co.h_autonomous:
        comp_unit = float(np.sum(ws * co.h(0.0, 0.0, 1.0, ys)))

    x = np.full(k, float(spec.x0))
    sup = np.full(k, abs(float(spec.x0)))
    blown = np.zeros(k, dtype=bool)
    alive = ~blown
    x_at = np.empty((k, rec_idx.size))
    e_at = np.empty((k, rec_idx.size))
    rec_map = {int(j): col for col, j in enumerate(rec_idx)}
    if 0 in rec_map:
        x_at[:, rec_map[0]] = x
        e_at[:, rec_map[0]] = e[:, 0]

    for i in range(n):
        t, ei = t_grid[i], e[:, i]
        fv = np.broadcast_to(np.asarray(co.f(t, ei, x), dtype=float), x.shape)
        kv = np.broadcast_to(np.asarray(co.k(t, ei, x), dtype=float), x.shape)
        gv = np.broadcast_to(np.asarray(co.g(t, ei, x), dtype=float), x.shape)
        if comp_unit is not None:
            comp = x * comp_unit
        elif ys.size:
            comp = np.sum(ws * co.h(t, ei[:, None], x[:, None], ys[None, :]),
                          axis=1)
        else:
            comp = 0.0
        xn = x + fv * d_t[i] + kv * d_e[:, i] + gv * d_b[:, i] \
            - d_e[:, i] * comp
        if counts is not None:
            ci = counts[:, i]
            for j in range(int(ci.max()) if ci.size else 0):
                sel = ci > j
                marks = sampler.sample(rng, int(sel.sum()))
                xn[sel] = xn[sel] + co.h(t, ei[sel], xn[sel], marks)
        bad = alive & (~np.isfinite(xn) | (np.abs(xn) > cfg.blowup_bound))
        if np.any(bad):
            xn[bad] = x[bad]   # freeze; excluded downstream via the mask
            blown |= bad
            alive = ~blown
        x = np.where(blown, x, xn)
        np.maximum(sup, np.where(alive, np.abs(x), sup), out=sup)
        col = rec_map.get(i + 1)
        if col is not None:
            x_at[:, col] = x
            e_at[:, col] = e[:, i + 1]
    return x_at, e_at, sup, blown


# ---------------------------------------------------------------------------
# Lipschitz probing
# ---------------------------------------------------------------------------

@dataclass
class LipschitzProbeReport:
    max_quotient: float
    declared_K: Optional[float]
    exceeds_declared: Optional[bool]
    unbounded_flag: bool
    gap_profile: list   # (gap, max quotient at that gap)


def lipschitz_probe(co: CoefficientSet, nu: Optional[LevyMeasure],
                    n_samples: int, state_range,
                    seed: int = 0,
                    q: QuadratureConfig = QuadratureConfig()
                    ) -> LipschitzProbeReport:
    """Sample the Lipschitz quotient of (f, k, g, h) over random state
    pairs and flag divergence across shrinking gaps (report-only)."""
    if n_samples < 1:
        raise ConfigurationError("n_samples must be >= 1")
    lo, hi = map(float, state_range)
    rng = np.random.default_rng(seed)

    def quotient(t1, t2, a, b):
        if a == b:
            return 0.0
        num = (float(co.f(t1, t2, a)) - float(co.f(t1, t2, b))) ** 2 \
            + (float(co.k(t1, t2, a)) - float(co.k(t1, t2, b))) ** 2 \
            + (float(co.g(t1, t2, a)) - float(co.g(t1, t2, b))) ** 2
        if nu is not None:
            from .levy_core import levy_integral
            num += levy_integral(
                nu, lambda z: (float(co.h(t1, t2, a, z))
                               - float(co.h(t1, t2, b, z))) ** 2, q)
        return num / (a - b) ** 2

    max_q = 0.0
    for _ in range(n_samples):
        t1, t2 = rng.uniform(0, 5, 2)
        a, b = rng.uniform(lo, hi, 2)
        if a == b:
            continue
        max_q = max(max_q, quotient(t1, t2, a, b))

    # shrinking-gap ladder to catch non-Lipschitz behaviour such as
    # square-root coefficients near the origin
    centers = list(rng.uniform(lo, hi, 5))
    centers.append(min(max(0.0, lo), hi))
    gaps = [10.0 ** (-j) for j in range(1, 7)]
    profile = []
    for gap in gaps:
        qs = [quotient(0.5, 0.5, c0, min(c0 + gap, hi))
              for c0 in centers if c0 + gap / 2 <= hi]
        profile.append((gap, max(qs) if qs else 0.0))
    vals = [v for _, v in profile if v > 0]
    unbounded = len(vals) >= 3 and vals[-1] > 100.0 * vals[0] \
        and all(b >= a for a, b in zip(vals, vals[1:]))
    max_q = max([max_q] + [v for _, v in profile]) if not unbounded \
        else max_q
    exceeds = None
    if co.lipschitz_K is not None:
        exceeds = bool(max_q > co.lipschitz_K) or unbounded
    return LipschitzProbeReport(
        max_quotient=max_q, declared_K=co.lipschitz_K,
        exceeds_declared=exceeds, unbounded_flag=bool(unbounded),
        gap_profile=profile)
