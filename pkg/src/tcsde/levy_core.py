"""Levy measures, subordinator families and the jump quadrature engine.

The jump noise of the SDE lives on the truncated support ``{0 < |y| < c}``
and is described by a :class:`LevyMeasure` (a density plus finitely many
atoms).  Subordinator families provide closed-form Laplace exponents and
exact increment samplers; the closed forms are authoritative, the defining
integral is only used as a cross-check in the test-suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate

from .errors import DomainError, IntegrabilityError, ConfigurationError

__all__ = [
    "QuadratureConfig",
    "LevyMeasure",
    "LevyMeasureValidation",
    "levy_integral",
    "levy_integral_with_error",
    "levy_integral_truncated",
    "validate_levy_measure",
    "compensator_rule",
    "JumpSampler",
    "make_jump_sampler",
    "Subordinator",
    "StableSubordinator",
    "TemperedStableSubordinator",
    "GammaSubordinator",
    "CompoundPoissonSubordinator",
    "DeterministicSubordinator",
    "laplace_exponent",
    "one_sided_stable_sample",
    "uniform_levy_measure",
]


@dataclass(frozen=True)
class QuadratureConfig:
    """Tolerances and refinement limits for jump integrals."""

    rel_tol: float = 1e-9
    abs_tol: float = 1e-12
    max_subdivisions: int = 60

    def __post_init__(self):
        if self.rel_tol <= 0 or self.abs_tol <= 0:
            raise ConfigurationError("quadrature tolerances must be positive")
        if self.max_subdivisions < 1:
            raise ConfigurationError("max_subdivisions must be >= 1")


@dataclass(frozen=True)
class LevyMeasure:
    """Jump intensity on the truncated support ``{0 < |y| < c}``.

    ``density`` must be vectorised over numpy arrays and return the
    intensity per unit jump size (0 where the measure has no mass).
    ``atoms`` is a finite list of ``(location, mass)`` pairs strictly
    inside the support.  ``small_jump_cutoff`` is the simulation
    truncation level: jumps with ``|y| < cutoff`` are dropped and the
    compensator is restricted to ``{cutoff <= |y| < c}``.
    """

    c: float
    density: Optional[Callable[[np.ndarray], np.ndarray]] = None
    atoms: Tuple[Tuple[float, float], ...] = ()
    small_jump_cutoff: float = 1e-3

    def __post_init__(self):
        if self.c <= 0:
            raise ConfigurationError("maximum jump size c must be positive")
        if not 0 < self.small_jump_cutoff < self.c:
            raise ConfigurationError(
                "small_jump_cutoff must lie strictly inside (0, c)")
        object.__setattr__(self, "atoms", tuple(tuple(a) for a in self.atoms))
        for y, m in self.atoms:
            if not 0 < abs(y) < self.c:
                raise ConfigurationError(
                    f"atom at y={y} lies outside the open support (0 < |y| < c)")
            if m < 0:
                raise ConfigurationError(f"atom mass {m} is negative")

    # -- convenience -------------------------------------------------------

    def density_at(self, y):
        if self.density is None:
            return np.zeros_like(np.asarray(y, dtype=float))
        return np.asarray(self.density(np.asarray(y, dtype=float)), dtype=float)

    def mass_of_interval(self, a: float, b: float,
                         q: QuadratureConfig = QuadratureConfig()) -> float:
        """nu((a, b)): density mass plus atoms with a < y < b."""
        if b <= a:
            raise DomainError("interval must satisfy a < b")
        lo, hi = max(a, -self.c), min(b, self.c)
        total = 0.0
        if self.density is not None and hi > lo:
            val, _ = _quad_split(lambda y: self.density_at(y), lo, hi)
            total += val
        total += sum(m for y, m in self.atoms if a < y < b)
        return total


def uniform_levy_measure(c: float = 1.0, intensity: float = 1.0,
                         cutoff: float = 1e-3) -> LevyMeasure:
    """Constant density ``intensity`` on (-c, c); the workhorse test measure."""
    return LevyMeasure(
        c=c,
        density=lambda y: np.full_like(np.asarray(y, dtype=float), intensity),
        small_jump_cutoff=cutoff,
    )


def _quad_split(f, lo, hi, pieces: int = 2):
    """scipy quad over [lo, hi], split geometrically when 0 < lo < hi.

    Splitting keeps integrable endpoint singularities (e.g. |y|^-1.5 near
    the truncation level) well behaved.  Returns (value, error estimate).
    """
    if lo <= 0 or pieces <= 1:
        val, err = integrate.quad(f, lo, hi, limit=200)
        return val, err
    bounds = np.geomspace(lo, hi, pieces + 1)
    total, toterr = 0.0, 0.0
    for a, b in zip(bounds[:-1], bounds[1:]):
        val, err = integrate.quad(f, a, b, limit=200)
        total += val
        toterr += err
    return total, toterr


def levy_integral_with_error(nu: LevyMeasure,
                             integrand: Callable[[float], float],
                             q: QuadratureConfig = QuadratureConfig()):
    """Integral of ``integrand`` against nu over the full support.

    The density part is integrated side by side over dyadic panels
    ``[c 2^{-(k+1)}, c 2^{-k}]`` refined toward the origin until the
    panel contribution is below tolerance; the caller's integrand must be
    O(y^2) at the origin for this to converge.  Atoms are summed exactly.

    Returns ``(value, error_estimate)``.  Raises
    :class:`IntegrabilityError` (carrying the partial sum) when the
    refinement does not converge within ``q.max_subdivisions`` panels.
    """
    total = 0.0
    err_total = 0.0
    for y, m in nu.atoms:
        total += m * float(integrand(y))
    if nu.density is not None:
        for sign in (1.0, -1.0):
            def f(y, s=sign):
                return float(integrand(s * y)) * float(nu.density_at(s * y))

            side = 0.0
            small_streak = 0
            converged = False
            hi = nu.c
            for k in range(q.max_subdivisions):
                lo = hi / 2.0
                val, err = integrate.quad(f, lo, hi, limit=100)
                side += val
                err_total += err
                threshold = q.abs_tol + q.rel_tol * (abs(total) + abs(side))
                if abs(val) <= threshold:
                    small_streak += 1
                    if small_streak >= 2:
                        # bound the untouched tail by the last panel size
                        err_total += abs(val)
                        converged = True
                        break
                else:
                    small_streak = 0
                hi = lo
            if not converged:
                raise IntegrabilityError(
                    "jump integral did not converge under dyadic refinement "
                    f"toward 0 after {q.max_subdivisions} panels",
                    partial_sum=total + side,
                )
            total += side
    return total, err_total


def levy_integral(nu: LevyMeasure, integrand: Callable[[float], float],
                  q: QuadratureConfig = QuadratureConfig()) -> float:
    """See :func:`levy_integral_with_error`; returns only the value."""
    return levy_integral_with_error(nu, integrand, q)[0]


def levy_integral_truncated(nu: LevyMeasure,
                            integrand: Callable[[float], float],
                            eps: Optional[float] = None,
                            q: QuadratureConfig = QuadratureConfig()) -> float:
    """Integral of ``integrand`` against nu over ``{eps <= |y| < c}``."""
    if eps is None:
        eps = nu.small_jump_cutoff
    if not 0 < eps < nu.c:
        raise DomainError("truncation level must satisfy 0 < eps < c")
    total = 0.0
    for y, m in nu.atoms:
        if abs(y) >= eps:
            total += m * float(integrand(y))
    if nu.density is not None:
        for sign in (1.0, -1.0):
            def f(y, s=sign):
                return float(integrand(s * y)) * float(nu.density_at(s * y))

            val, _ = _quad_split(f, eps, nu.c, pieces=3)
            total += val
    return total


def truncated_mass(nu: LevyMeasure, eps: Optional[float] = None,
                   q: QuadratureConfig = QuadratureConfig()) -> float:
    return levy_integral_truncated(nu, lambda y: 1.0, eps, q)


@dataclass
class LevyMeasureValidation:
    """Per-check report from :func:`validate_levy_measure`."""

    checks: list

    @property
    def passed(self) -> bool:
        return all(ok for _, ok, _ in self.checks)

    def check(self, name: str) -> bool:
        for n, ok, _ in self.checks:
            if n == name:
                return ok
        raise KeyError(name)


def validate_levy_measure(nu: LevyMeasure,
                          q: QuadratureConfig = QuadratureConfig()
                          ) -> LevyMeasureValidation:
    """Numerically probe the defining integrability conditions.

    The second-moment condition is checked by monotone refinement of the
    truncation level: the increments of ``int_{eps <= |y| < c} y^2 nu(dy)``
    must form a Cauchy tail as eps halves.
    """
    checks = []

    atoms_ok = all(0 < abs(y) < nu.c and m >= 0 for y, m in nu.atoms)
    checks.append(("atoms_in_support", atoms_ok, f"{len(nu.atoms)} atoms"))

    # finiteness of nu({eps <= |y| < c}) on a ladder of truncations
    mass_ok, mass_detail = True, []
    for k in (2, 4, 6):
        eps = nu.c * 2.0 ** (-k)
        try:
            m = truncated_mass(nu, eps, q)
            mass_ok &= math.isfinite(m)
            mass_detail.append((eps, m))
        except Exception as exc:  # quad failure on a wild density
            mass_ok = False
            mass_detail.append((eps, repr(exc)))
    checks.append(("truncated_mass_finite", mass_ok, mass_detail))

    # second moment: Cauchy check of I(eps_k) under eps -> eps/2
    vals = []
    ok = True
    try:
        for k in range(1, 14):
            eps = nu.c * 2.0 ** (-k)
            vals.append(levy_integral_truncated(nu, lambda y: y * y, eps, q))
    except Exception:
        ok = False
    if ok and len(vals) >= 4:
        diffs = np.abs(np.diff(vals))
        tail = diffs[-5:]
        last = vals[-1]
        if tail[-1] <= q.abs_tol + 1e-8 * (1.0 + abs(last)):
            ok = True
        else:
            with np.errstate(divide="ignore", invalid="ignore"):
                ratios = tail[1:] / np.where(tail[:-1] > 0, tail[:-1], np.inf)
            ok = bool(np.median(ratios) <= 0.95)
    checks.append(("second_moment_finite", ok, vals))

    return LevyMeasureValidation(checks=checks)


# ---------------------------------------------------------------------------
# fixed-node compensator quadrature and mark sampling
# ---------------------------------------------------------------------------

def compensator_rule(nu: LevyMeasure, eps: Optional[float] = None,
                     panels_per_side: int = 16, order: int = 8):
    """Precomputed nodes/weights for ``h -> int_{eps<=|y|<c} h(y) nu(dy)``.

    Gauss-Legendre on geometric panels per side, with atoms appended as
    exact point masses.  Integrating smooth integrands against the rule
    (``(h(ys) * ws).sum()``) is what the SDE integrators use per step;
    unlike the adaptive path it vectorises over states.
    """
    if eps is None:
        eps = nu.small_jump_cutoff
    if not 0 < eps < nu.c:
        raise DomainError("truncation level must satisfy 0 < eps < c")
    gl_x, gl_w = np.polynomial.legendre.leggauss(order)
    ys, ws = [], []
    if nu.density is not None:
        bounds = np.geomspace(eps, nu.c, panels_per_side + 1)
        for sign in (1.0, -1.0):
            for a, b in zip(bounds[:-1], bounds[1:]):
                mid, half = 0.5 * (a + b), 0.5 * (b - a)
                nodes = sign * (mid + half * gl_x)
                ys.append(nodes)
                ws.append(half * gl_w * nu.density_at(nodes))
    for y, m in nu.atoms:
        if abs(y) >= eps:
            ys.append(np.array([y]))
            ws.append(np.array([m]))
    if not ys:
        return np.empty(0), np.empty(0)
    return np.concatenate(ys), np.concatenate(ws)


class JumpSampler:
    """Draws jump marks from nu restricted to ``{eps <= |y| < c}``.

    The density part is sampled by inverse CDF on a geometric grid per
    side; atoms by their exact masses.  ``total_mass`` (from adaptive
    quadrature) doubles as the Poisson intensity per unit of the random
    clock.
    """

    def __init__(self, nu: LevyMeasure, eps: Optional[float] = None,
                 grid_points: int = 2048,
                 q: QuadratureConfig = QuadratureConfig()):
        if eps is None:
            eps = nu.small_jump_cutoff
        if not 0 < eps < nu.c:
            raise DomainError("truncation level must satisfy 0 < eps < c")
        self.eps = eps
        self._components = []  # (mass, kind, payload)
        if nu.density is not None:
            for sign in (1.0, -1.0):
                grid = sign * np.geomspace(eps, nu.c, grid_points)
                dens = nu.density_at(grid)
                cdf = np.concatenate(
                    [[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1])
                                      * np.abs(np.diff(grid)))])
                side_mass, _ = _quad_split(
                    lambda y, s=sign: nu.density_at(s * y), eps, nu.c, pieces=3)
                if side_mass > 0 and cdf[-1] > 0:
                    self._components.append(
                        (side_mass, "density", (grid, cdf / cdf[-1])))
        for y, m in nu.atoms:
            if abs(y) >= eps and m > 0:
                self._components.append((m, "atom", y))
        self.total_mass = sum(m for m, _, _ in self._components)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if n == 0 or self.total_mass == 0.0:
            return np.empty(0)
        masses = np.array([m for m, _, _ in self._components])
        which = rng.choice(len(self._components), size=n,
                           p=masses / masses.sum())
        out = np.empty(n)
        for i, (_, kind, payload) in enumerate(self._components):
            sel = which == i
            k = int(sel.sum())
            if k == 0:
                continue
            if kind == "atom":
                out[sel] = payload
            else:
                grid, cdf = payload
                out[sel] = np.interp(rng.random(k), cdf, grid)
        return out


def make_jump_sampler(nu: LevyMeasure, eps: Optional[float] = None,
                      **kwargs) -> JumpSampler:
    return JumpSampler(nu, eps, **kwargs)


# ---------------------------------------------------------------------------
# subordinator families
# ---------------------------------------------------------------------------

def one_sided_stable_sample(rng: np.random.Generator, beta: float,
                            size) -> np.ndarray:
    """Exact one-sided stable variates with Laplace transform exp(-lam^beta).

    Kanter's exponential/uniform transform: ``S = (A(U)/W)^{(1-beta)/beta}``
    with U uniform on (0, pi) and W unit exponential; no density
    evaluation needed.
    """
    if not 0.0 < beta < 1.0:
        raise ConfigurationError("stable index beta must lie in (0, 1)")
    u = rng.uniform(0.0, np.pi, size)
    w = rng.standard_exponential(size)
    log_a = (beta * np.log(np.sin(beta * u)) - np.log(np.sin(u))) / (1.0 - beta) \
        + np.log(np.sin((1.0 - beta) * u))
    return np.exp((1.0 - beta) / beta * (log_a - np.log(w)))


class Subordinator:
    """Common interface for subordinator families.

    Subclasses provide the closed-form Laplace exponent and an exact
    sampler for increments over a step ``dt``; both are pure given the
    generator state.
    """

    family = "abstract"

    def laplace_exponent(self, lam):
        raise NotImplementedError

    def sample_increments(self, rng: np.random.Generator, dt: float, size):
        raise NotImplementedError

    # defining-integral cross check (tests only; closed forms are
    # authoritative for anything downstream)
    def laplace_exponent_by_quadrature(self, lam: float) -> float:
        dens = self.levy_density
        atoms = self.levy_atoms
        total = sum(m * (1.0 - math.exp(-lam * x)) for x, m in atoms)
        if dens is not None:
            def f(x):
                return (1.0 - math.exp(-lam * x)) * dens(x)
            val = 0.0
            for a, b in ((0.0, 1e-6), (1e-6, 1e-3), (1e-3, 1.0),
                         (1.0, np.inf)):
                v, _ = integrate.quad(f, a, b, limit=200)
                val += v
            total += val
        return total

    levy_density: Optional[Callable[[float], float]] = None
    levy_atoms: Sequence[Tuple[float, float]] = ()


@dataclass(frozen=True)
class StableSubordinator(Subordinator):
    beta: float
    family = "stable"

    def __post_init__(self):
        if not 0.0 < self.beta < 1.0:
            raise ConfigurationError("stable index beta must lie in (0, 1)")

    def laplace_exponent(self, lam):
        lam = _check_lambda(lam)
        return np.power(lam, self.beta)

    def sample_increments(self, rng, dt, size):
        return dt ** (1.0 / self.beta) * one_sided_stable_sample(
            rng, self.beta, size)

    @property
    def levy_density(self):
        b = self.beta
        coef = b / math.gamma(1.0 - b)
        return lambda x: coef * x ** (-1.0 - b)


@dataclass(frozen=True)
class TemperedStableSubordinator(Subordinator):
    beta: float
    tempering: float
    family = "tempered-stable"

    def __post_init__(self):
        if not 0.0 < self.beta < 1.0:
            raise ConfigurationError("stable index beta must lie in (0, 1)")
        if self.tempering <= 0:
            raise ConfigurationError("tempering parameter must be positive")

    def laplace_exponent(self, lam):
        lam = _check_lambda(lam)
        th, b = self.tempering, self.beta
        return np.power(lam + th, b) - th ** b

    def sample_increments(self, rng, dt, size, max_rounds: int = 1000):
        # exponential tilting by rejection from the stable increment;
        # acceptance rate exp(-dt * tempering^beta)
        shape = (size,) if np.isscalar(size) else tuple(size)
        flat = int(np.prod(shape))
        out = np.empty(flat)
        todo = np.ones(flat, dtype=bool)
        scale = dt ** (1.0 / self.beta)
        for _ in range(max_rounds):
            n = int(todo.sum())
            if n == 0:
                return out.reshape(shape)
            cand = scale * one_sided_stable_sample(rng, self.beta, n)
            acc = rng.random(n) <= np.exp(-self.tempering * cand)
            idx = np.flatnonzero(todo)[acc]
            out[idx] = cand[acc]
            todo[idx] = False
        raise ConfigurationError(
            "tempered-stable rejection sampler stalled; reduce the step "
            "size or the tempering parameter")

    @property
    def levy_density(self):
        b, th = self.beta, self.tempering
        coef = b / math.gamma(1.0 - b)
        return lambda x: coef * x ** (-1.0 - b) * math.exp(-th * x)


@dataclass(frozen=True)
class GammaSubordinator(Subordinator):
    shape: float
    rate: float
    family = "gamma"

    def __post_init__(self):
        if self.shape <= 0 or self.rate <= 0:
            raise ConfigurationError("gamma shape and rate must be positive")

    def laplace_exponent(self, lam):
        lam = _check_lambda(lam)
        return self.shape * np.log1p(lam / self.rate)

    def sample_increments(self, rng, dt, size):
        return rng.gamma(self.shape * dt, 1.0 / self.rate, size)

    @property
    def levy_density(self):
        a, b = self.shape, self.rate
        return lambda x: a * math.exp(-b * x) / x


@dataclass(frozen=True)
class CompoundPoissonSubordinator(Subordinator):
    """Compound Poisson subordinator; default jumps are the unit atom."""

    rate: float
    jump_sampler: Optional[Callable[[np.random.Generator, int], np.ndarray]] = None
    jump_laplace: Optional[Callable[[float], float]] = None
    family = "compound-poisson"

    def __post_init__(self):
        if self.rate <= 0:
            raise ConfigurationError("compound Poisson rate must be positive")
        if (self.jump_sampler is None) != (self.jump_laplace is None):
            raise ConfigurationError(
                "jump_sampler and jump_laplace must be supplied together")

    def laplace_exponent(self, lam):
        lam = _check_lambda(lam)
        jl = self.jump_laplace or (lambda l: np.exp(-l))
        return self.rate * (1.0 - jl(lam))

    def sample_increments(self, rng, dt, size):
        counts = rng.poisson(self.rate * dt, size)
        flat = counts.ravel()
        total = int(flat.sum())
        sampler = self.jump_sampler or (
            lambda r, n: np.ones(n))
        marks = np.asarray(sampler(rng, total), dtype=float)
        if np.any(marks <= 0):
            raise ConfigurationError(
                "compound Poisson jump sizes must be strictly positive")
        idx = np.repeat(np.arange(flat.size), flat)
        out = np.bincount(idx, weights=marks, minlength=flat.size)
        return out.reshape(counts.shape)

    @property
    def levy_atoms(self):
        if self.jump_sampler is None:
            return ((1.0, self.rate),)
        return ()


@dataclass(frozen=True)
class DeterministicSubordinator(Subordinator):
    slope: float
    family = "deterministic"

    def __post_init__(self):
        if self.slope <= 0:
            raise ConfigurationError("deterministic slope must be positive")

    def laplace_exponent(self, lam):
        lam = _check_lambda(lam)
        return self.slope * lam

    def sample_increments(self, rng, dt, size):
        return np.full(size, self.slope * dt)

    @property
    def levy_density(self):
        return None  # pure drift, no jump measure


def _check_lambda(lam):
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < 0):
        raise DomainError("Laplace exponent argument must be nonnegative")
    return lam


def laplace_exponent(spec: Subordinator, lam):
    """phi(lam) in closed form for the given family; phi(0) = 0."""
    return spec.laplace_exponent(lam)
