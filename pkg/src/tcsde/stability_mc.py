"""Monte Carlo estimation of the stability notions themselves.

Stay probabilities with Wilson intervals, moment decay with CLT intervals
and a median-of-means sidecar, exponential-decay fitting, martingale and
mean-bound checks for the random clock, and the coupled refinement studies
(direct-vs-composed integration, change-of-variables residual).

Every estimator is a deterministic function of (spec, config, master
seed); repeat runs are bit-identical regardless of thread count.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from .errors import ConfigurationError, DomainError, FitError
from .levy_core import (LevyMeasure, Subordinator, laplace_exponent,
                        make_jump_sampler)
from .lyapunov import LyapunovCandidate, ito_residual
from .paths import SeedSpec, inverse_ensemble, simulate_operational_noise
from .sde_engine import (IntegratorConfig, TcSdeSpec, integrate_batch,
                         integrate_direct, integrate_duality)

__all__ = [
    "McConfig",
    "StabilityReport",
    "estimate_stay_probability",
    "estimate_moment",
    "fit_exponential_decay",
    "estimate_laplace_Et",
    "martingale_check",
    "mean_Et_bound_check",
    "duality_gap_study",
    "ito_refinement_study",
]


@dataclass(frozen=True)
class McConfig:
    """Ensemble size, reporting grid, and reproducibility seed."""

    n_paths: int
    report_times: Sequence[float]
    confidence: float = 0.99
    master_seed: int = 0

    def __post_init__(self):
        if self.n_paths < 2:
            raise ConfigurationError("Monte Carlo needs at least 2 paths")
        times = np.asarray(self.report_times, dtype=float)
        object.__setattr__(self, "report_times", times)
        if times.size == 0 or np.any(np.diff(times) <= 0):
            raise ConfigurationError("report times must be increasing")
        if not 0 < self.confidence < 1:
            raise ConfigurationError("confidence must be in (0, 1)")

    @property
    def z(self) -> float:
        return float(stats.norm.ppf(0.5 * (1.0 + self.confidence)))


@dataclass
class StabilityReport:
    """Per-time estimates with confidence intervals and bound verdicts."""

    kind: str
    times: np.ndarray
    estimates: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    bound: Optional[np.ndarray] = None
    passes: Optional[np.ndarray] = None
    median_of_means: Optional[np.ndarray] = None
    n_paths: int = 0
    n_excluded: int = 0
    valid: bool = True
    decay_fit: Optional[Tuple[float, float, float]] = None
    notes: str = ""
    metadata: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.valid
                    and (self.passes is None or np.all(self.passes)))


def _median_of_means(samples: np.ndarray, n_blocks: int = 32) -> np.ndarray:
    """Median of block means along axis 0, blocks fixed by path index."""
    n = samples.shape[0]
    k = max(2, min(n_blocks, n // 2))
    usable = (n // k) * k
    blocks = samples[:usable].reshape(k, usable // k, *samples.shape[1:])
    return np.median(blocks.mean(axis=1), axis=0)


def _wilson(successes: int, n: int, z: float) -> Tuple[float, float, float]:
    phat = successes / n
    denom = 1.0 + z * z / n
    center = (phat + z * z / (2 * n)) / denom
    half = (z / denom) * np.sqrt(phat * (1 - phat) / n
                                 + z * z / (4 * n * n))
    return phat, max(0.0, center - half), min(1.0, center + half)


def estimate_stay_probability(spec: TcSdeSpec, cfg: McConfig,
                              icfg: IntegratorConfig, r: float,
                              n_threads: Optional[int] = None
                              ) -> StabilityReport:
    """Fraction of paths whose running sup of |X| stays below r up to the
    integration horizon, with a Wilson interval.

    A finite-horizon surrogate for the for-all-t definition; the horizon
    is recorded in the metadata.  Blown-up paths count as exits.
    """
    if r <= abs(spec.x0):
        raise DomainError(
            f"stay radius r={r} must exceed |x0|={abs(spec.x0)}")
    batch = integrate_batch(spec, icfg, cfg.n_paths, cfg.master_seed,
                            record_times=[icfg.horizon],
                            n_threads=n_threads)
    inside = int(np.sum((batch.sup_abs < r) & ~batch.blown))
    phat, lo, hi = _wilson(inside, cfg.n_paths, cfg.z)
    return StabilityReport(
        kind="stay_probability",
        times=np.array([icfg.horizon]),
        estimates=np.array([phat]),
        ci_lo=np.array([lo]), ci_hi=np.array([hi]),
        n_paths=cfg.n_paths,
        n_excluded=int(batch.blown.sum()),
        notes=f"P(sup |X| < {r} up to T={icfg.horizon}); finite-horizon "
              "surrogate for the for-all-t statement",
        metadata={"seed": cfg.master_seed, "dt": icfg.dt,
                  "horizon": icfg.horizon, "r": r})


def estimate_moment(spec: TcSdeSpec, cfg: McConfig, icfg: IntegratorConfig,
                    p: float,
                    bound: Optional[Callable[[np.ndarray], np.ndarray]] = None,
                    bound_slack: float = 0.0,
                    n_threads: Optional[int] = None) -> StabilityReport:
    """Sample mean of |X(t)|^p at each report time with a CLT interval
    and a median-of-means sidecar.

    Blown-up paths are excluded from the means but counted; more than 1%
    of them invalidates the estimate.  When ``bound`` is given, each time
    passes if estimate <= bound * (1 + CI half-width/estimate-scale +
    bound_slack).
    """
    if p <= 0:
        raise DomainError("moment order p must be positive")
    batch = integrate_batch(spec, icfg, cfg.n_paths, cfg.master_seed,
                            record_times=cfg.report_times,
                            n_threads=n_threads)
    ok = ~batch.blown
    n_ok = int(ok.sum())
    if n_ok < 2:
        raise ConfigurationError("fewer than 2 paths survived integration")
    samples = np.abs(batch.x_at[ok]) ** p
    est = samples.mean(axis=0)
    se = samples.std(axis=0, ddof=1) / np.sqrt(n_ok)
    hw = cfg.z * se
    mom = _median_of_means(samples)
    n_blown = cfg.n_paths - n_ok
    valid = n_blown <= 0.01 * cfg.n_paths
    bound_vals = passes = None
    if bound is not None:
        bound_vals = np.asarray(bound(cfg.report_times), dtype=float)
        passes = est <= bound_vals + hw + bound_slack * np.abs(bound_vals)
    return StabilityReport(
        kind="moment",
        times=cfg.report_times,
        estimates=est, ci_lo=est - hw, ci_hi=est + hw,
        bound=bound_vals, passes=passes,
        median_of_means=mom,
        n_paths=cfg.n_paths, n_excluded=n_blown, valid=valid,
        notes="" if valid else
        f"{n_blown} blown-up paths (> 1%): estimate invalid",
        metadata={"seed": cfg.master_seed, "p": p, "dt": icfg.dt,
                  "horizon": icfg.horizon})


def fit_exponential_decay(times, estimates) -> Tuple[float, float, float]:
    """Least-squares fit of C * exp(-lam * t) on log-estimates.

    Returns (C, lam, max relative residual).  Needs at least 3 strictly
    positive estimates.
    """
    times = np.asarray(times, dtype=float)
    est = np.asarray(estimates, dtype=float)
    if times.size < 3:
        raise FitError("decay fit needs at least 3 points")
    if np.any(est <= 0):
        raise FitError("decay fit needs strictly positive estimates")
    slope, intercept = np.polyfit(times, np.log(est), 1)
    c, lam = float(np.exp(intercept)), float(-slope)
    fitted = c * np.exp(-lam * times)
    resid = float(np.max(np.abs(fitted - est) / est))
    return c, lam, resid


# ---------------------------------------------------------------------------
# random-clock statistics
# ---------------------------------------------------------------------------

def estimate_laplace_Et(sub: Subordinator, cfg: McConfig, lam: float,
                        d_tau: float = 1e-3) -> StabilityReport:
    """MC estimate of E[exp(-lam * E_t)] at each report time."""
    if lam <= 0:
        raise DomainError("laplace argument lam must be positive")
    e = inverse_ensemble(sub, d_tau, cfg.report_times, cfg.n_paths,
                         cfg.master_seed)
    samples = np.exp(-lam * e)
    est = samples.mean(axis=0)
    hw = cfg.z * samples.std(axis=0, ddof=1) / np.sqrt(cfg.n_paths)
    return StabilityReport(
        kind="laplace_Et",
        times=cfg.report_times, estimates=est,
        ci_lo=est - hw, ci_hi=est + hw,
        n_paths=cfg.n_paths,
        metadata={"seed": cfg.master_seed, "lam": lam, "d_tau": d_tau})


def martingale_check(nu: LevyMeasure, sub: Subordinator, interval,
                     cfg: McConfig, t: float, d_tau: float = 1e-3,
                     compensated: bool = True) -> StabilityReport:
    """Mean of the (optionally compensated) jump count on the random
    clock over a mark set bounded away from 0.

    With compensation the count minus nu(A) * E_t should average 0
    within 3 standard errors; without it (the negative control) the mean
    sits near nu(A) * E[E_t] and the same test fails.
    """
    a, b = float(interval[0]), float(interval[1])
    if a >= b:
        raise DomainError("mark interval must satisfy a < b")
    if a < 0 < b or min(abs(a), abs(b)) < nu.small_jump_cutoff:
        raise DomainError("mark set must be bounded away from 0")
    mass = nu.mass_of_interval(a, b)
    e = inverse_ensemble(sub, d_tau, [t], cfg.n_paths,
                         cfg.master_seed)[:, 0]
    rng = np.random.default_rng(
        np.random.SeedSequence(cfg.master_seed, spawn_key=(987654321,)))
    counts = rng.poisson(mass * e).astype(float)
    samples = counts - mass * e if compensated else counts
    mean = float(samples.mean())
    se = float(samples.std(ddof=1) / np.sqrt(cfg.n_paths))
    notes = ""
    if mass == 0.0:
        notes = "degenerate mark set: nu(A) = 0, trivially passes"
    passed = abs(mean) <= 3 * se or (mass == 0.0 and t >= 0)
    return StabilityReport(
        kind="martingale_check",
        times=np.array([t]), estimates=np.array([mean]),
        ci_lo=np.array([mean - 3 * se]), ci_hi=np.array([mean + 3 * se]),
        passes=np.array([passed]),
        n_paths=cfg.n_paths, notes=notes,
        metadata={"seed": cfg.master_seed, "interval": (a, b),
                  "nu_mass": mass, "compensated": compensated,
                  "d_tau": d_tau})


def mean_Et_bound_check(sub: Subordinator, cfg: McConfig, t: float,
                        x_grid, d_tau: float = 1e-3) -> StabilityReport:
    """Checks the mean of the inverse clock against its transform bound
    E[E_t] <= min_x exp(x t) / phi(x) over the supplied x-grid."""
    x_grid = np.asarray(x_grid, dtype=float)
    if np.any(x_grid <= 0):
        raise DomainError("bound grid points x must be positive")
    e = inverse_ensemble(sub, d_tau, [t], cfg.n_paths,
                         cfg.master_seed)[:, 0]
    mean = float(e.mean())
    hw = cfg.z * float(e.std(ddof=1) / np.sqrt(cfg.n_paths))
    bounds = np.exp(x_grid * t) / np.asarray(
        [laplace_exponent(sub, x) for x in x_grid])
    best = float(bounds.min())
    return StabilityReport(
        kind="mean_Et_bound",
        times=np.array([t]), estimates=np.array([mean]),
        ci_lo=np.array([mean - hw]), ci_hi=np.array([mean + hw]),
        bound=np.array([best]),
        passes=np.array([mean - hw <= best]),
        n_paths=cfg.n_paths,
        metadata={"seed": cfg.master_seed, "x_grid": tuple(x_grid),
                  "d_tau": d_tau})


# ---------------------------------------------------------------------------
# coupled refinement studies
# ---------------------------------------------------------------------------

def _study_d_tau(spec: TcSdeSpec, dts, d_tau: Optional[float],
                 scale: float) -> float:
    """Shared operational step for refinement studies.

    One noise bundle serves every t-resolution, so the step is chosen
    from the finest dt (times a study-specific scale): coarse enough
    that single clock increments are resolved by the t-grid, fine enough
    to converge.  For stable-type subordinators, increments have scale
    d_tau^(1/beta), hence the beta power.
    """
    if d_tau is not None:
        return d_tau
    finest = float(min(dts))
    beta = getattr(spec.subordinator, "beta", None)
    if beta is not None:
        return (scale * finest) ** beta
    return finest


def duality_gap_study(spec: TcSdeSpec, dts: Sequence[float], n_paths: int,
                      master_seed: int, horizon: float,
                      d_tau: Optional[float] = None) -> dict:
    """Sup-norm gap between direct integration and the composed
    (operational-clock) route under shared noise, per t-resolution.

    The same operational noise bundle drives both integrators and every
    dt level, so the gap isolates the discretization difference; it must
    vanish under refinement for the two schemes to be consistent.
    Returns per-level mean/median/max gaps over the ensemble.
    """
    dts = sorted(float(d) for d in dts)[::-1]
    step = _study_d_tau(spec, dts, d_tau, scale=10.0)
    sampler = make_jump_sampler(spec.nu) if spec.nu is not None else None
    gaps = np.zeros((n_paths, len(dts)))
    for p in range(n_paths):
        sd = SeedSpec(master=master_seed, stream=p)
        noise = simulate_operational_noise(
            spec.subordinator, spec.nu, step, horizon, sd, sampler)
        for li, dt in enumerate(dts):
            icfg = IntegratorConfig(dt=dt, horizon=horizon, d_tau=step)
            direct = integrate_direct(spec, icfg, sd, noise=noise)
            composed = integrate_duality(spec, icfg, sd, noise=noise)
            gaps[p, li] = float(np.max(np.abs(direct.x - composed.x)))
    mean = gaps.mean(axis=0)
    return {
        "dts": np.asarray(dts),
        "mean": mean,
        "median": np.median(gaps, axis=0),
        "max": gaps.max(axis=0),
        "monotone": bool(np.all(np.diff(mean) < 0)),
        "d_tau": step,
        "n_paths": n_paths,
    }


def ito_refinement_study(vc: LyapunovCandidate, spec: TcSdeSpec,
                         dts: Sequence[float], n_paths: int,
                         master_seed: int, horizon: float,
                         d_tau: Optional[float] = None) -> dict:
    """Pathwise residual of the change-of-variables identity under step
    refinement on a shared noise realization.

    Returns the per-level median (and mean) of the max residual along
    each path; the median must decrease as dt shrinks.
    """
    dts = sorted(float(d) for d in dts)[::-1]
    step = _study_d_tau(spec, dts, d_tau, scale=1.0)
    sampler = make_jump_sampler(spec.nu) if spec.nu is not None else None
    res = np.zeros((n_paths, len(dts)))
    for p in range(n_paths):
        sd = SeedSpec(master=master_seed, stream=p)
        noise = simulate_operational_noise(
            spec.subordinator, spec.nu, step, horizon, sd, sampler)
        for li, dt in enumerate(dts):
            icfg = IntegratorConfig(dt=dt, horizon=horizon, d_tau=step)
            path = integrate_direct(spec, icfg, sd, noise=noise)
            res[p, li] = float(ito_residual(vc, spec, path).max())
    med = np.median(res, axis=0)
    return {
        "dts": np.asarray(dts),
        "median": med,
        "mean": res.mean(axis=0),
        "monotone": bool(np.all(np.diff(med) < 0)),
        "d_tau": step,
        "n_paths": n_paths,
    }
