"""Generator evaluation and machine-checked stability certificates.

The two generators split the dynamics by clock: L1 collects the dt-scale
terms (ordinary drift), L2 the dE-scale terms (clock drift, diffusion read
on the random clock, and jump compensation).  The four checkers sweep a
candidate function V over user grids and emit certificates; a certificate
can only refute or support the pointwise conditions, never prove the
underlying for-all statement, and says so.

Sign conditions are tolerance-fenced: a value passes when it is below a
small positive fence even after adding the achieved quadrature error, fails
when it exceeds the fence by more than that error, and is reported
indeterminate in between -- a verdict is never allowed to rest on
quadrature noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import (ConfigurationError, CriteriaError, DomainError,
                     EvaluationError)
from .levy_core import (LevyMeasure, QuadratureConfig,
                        levy_integral_with_error)
from .sde_engine import CoefficientSet, PathResult, TcSdeSpec

__all__ = [
    "LyapunovCandidate",
    "abs_power_candidate",
    "absolute_value_candidate",
    "quadratic_candidate",
    "validate_candidate",
    "CheckGrid",
    "StabilityCriteria",
    "Certificate",
    "eval_L1",
    "eval_L2",
    "check_stochastic_stability",
    "check_asymptotic_stability",
    "check_global_stability",
    "check_pth_moment",
    "ito_residual",
]

# fence below which a sign condition counts as satisfied; scaled by |V|
_FENCE_SCALE = 1e-9


@dataclass(frozen=True)
class LyapunovCandidate:
    """Candidate function V(t1, t2, x) with analytic partial derivatives.

    ``mu`` is the class-K minorant used by the stochastic-stability
    theorem.  ``rho`` excludes a ball around the origin where a
    non-smooth V (|x|, |x|^alpha) has no classical derivatives; the
    checkers skip grid points inside it and the evaluators refuse them.
    """

    V: Callable
    V_t1: Callable
    V_t2: Callable
    V_x: Callable
    V_xx: Callable
    mu: Callable
    rho: float = 0.0
    name: str = "custom"

    def __post_init__(self):
        if self.rho < 0:
            raise ConfigurationError("exclusion radius rho must be >= 0")


def abs_power_candidate(alpha: float, rho: float = 1e-6) -> LyapunovCandidate:
    """V = |x|^alpha with mu(r) = r^alpha; requires 0 < alpha."""
    if alpha <= 0:
        raise ConfigurationError("abs-power candidate needs alpha > 0")
    return LyapunovCandidate(
        V=lambda t1, t2, x: np.abs(x) ** alpha,
        V_t1=lambda t1, t2, x: 0.0 * np.asarray(x, dtype=float),
        V_t2=lambda t1, t2, x: 0.0 * np.asarray(x, dtype=float),
        V_x=lambda t1, t2, x: alpha * np.sign(x) * np.abs(x) ** (alpha - 1),
        V_xx=lambda t1, t2, x: alpha * (alpha - 1) * np.abs(x) ** (alpha - 2),
        mu=lambda r: np.asarray(r, dtype=float) ** alpha,
        rho=rho,
        name=f"abs_power({alpha})",
    )


def absolute_value_candidate(rho: float = 1e-6) -> LyapunovCandidate:
    """V = |x| with mu(r) = r."""
    return LyapunovCandidate(
        V=lambda t1, t2, x: np.abs(x),
        V_t1=lambda t1, t2, x: 0.0 * np.asarray(x, dtype=float),
        V_t2=lambda t1, t2, x: 0.0 * np.asarray(x, dtype=float),
        V_x=lambda t1, t2, x: np.sign(x),
        V_xx=lambda t1, t2, x: 0.0 * np.asarray(x, dtype=float),
        mu=lambda r: np.asarray(r, dtype=float),
        rho=rho,
        name="absolute_value",
    )


def quadratic_candidate() -> LyapunovCandidate:
    """V = x^2; smooth everywhere, no exclusion ball."""
    return LyapunovCandidate(
        V=lambda t1, t2, x: np.asarray(x, dtype=float) ** 2,
        V_t1=lambda t1, t2, x: 0.0 * np.asarray(x, dtype=float),
        V_t2=lambda t1, t2, x: 0.0 * np.asarray(x, dtype=float),
        V_x=lambda t1, t2, x: 2.0 * np.asarray(x, dtype=float),
        V_xx=lambda t1, t2, x: 2.0 + 0.0 * np.asarray(x, dtype=float),
        mu=lambda r: np.asarray(r, dtype=float) ** 2,
        rho=0.0,
        name="quadratic",
    )


def validate_candidate(vc: LyapunovCandidate, n_points: int = 100,
                       seed: int = 0, fd_step: float = 1e-5,
                       rel_tol: float = 1e-4) -> List[Tuple[str, bool, str]]:
    """Structural checks on a candidate: V vanishes on the axis x=0, mu is
    class-K on a grid, and the supplied derivatives match central finite
    differences at random interior points.

    Returns (check name, passed, detail) triples; raises nothing.
    """
    out = []
    t_probe = np.array([0.0, 0.3, 1.0, 4.7])
    v0 = np.array([[float(vc.V(a, b, 0.0)) for b in t_probe] for a in t_probe])
    out.append(("V(t1,t2,0)=0", bool(np.all(np.abs(v0) < 1e-12)),
                f"max |V(.,0)| = {np.max(np.abs(v0)):.3g}"))

    r = np.linspace(0.0, 5.0, 51)
    mu = np.asarray([float(vc.mu(ri)) for ri in r])
    ok = (abs(mu[0]) < 1e-12 and np.all(np.diff(mu) >= -1e-12)
          and np.all(mu[1:] > 0))
    out.append(("mu class-K", bool(ok),
                f"mu(0)={mu[0]:.3g}, min diff={np.min(np.diff(mu)):.3g}"))

    rng = np.random.default_rng(seed)
    lo = max(vc.rho * 10, 1e-3)
    xs = rng.uniform(lo, 3.0, n_points) * rng.choice([-1.0, 1.0], n_points)
    t1 = rng.uniform(0.0, 2.0, n_points)
    t2 = rng.uniform(0.0, 2.0, n_points)
    worst_x, worst_xx = 0.0, 0.0
    for a, b, x in zip(t1, t2, xs):
        fd1 = (float(vc.V(a, b, x + fd_step))
               - float(vc.V(a, b, x - fd_step))) / (2 * fd_step)
        fd2 = (float(vc.V(a, b, x + fd_step)) - 2 * float(vc.V(a, b, x))
               + float(vc.V(a, b, x - fd_step))) / fd_step ** 2
        d1, d2 = float(vc.V_x(a, b, x)), float(vc.V_xx(a, b, x))
        worst_x = max(worst_x, abs(fd1 - d1) / (1.0 + abs(d1)))
        worst_xx = max(worst_xx, abs(fd2 - d2) / (1.0 + abs(d2)))
    out.append(("V_x matches finite differences", worst_x < rel_tol,
                f"worst relative error {worst_x:.3g}"))
    out.append(("V_xx matches finite differences", worst_xx < rel_tol,
                f"worst relative error {worst_xx:.3g}"))
    return out


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------

def _guard_point(vc: LyapunovCandidate, x: float):
    if vc.rho > 0 and abs(x) <= vc.rho:
        raise DomainError(
            f"evaluation at x={x} is inside the exclusion radius "
            f"rho={vc.rho} of candidate {vc.name}")


def eval_L1(vc: LyapunovCandidate, co: CoefficientSet,
            t1: float, t2: float, x: float) -> float:
    """dt-scale generator: V_t1 + V_x * f at (t1, t2, x)."""
    _guard_point(vc, x)
    val = (float(vc.V_t1(t1, t2, x))
           + float(vc.V_x(t1, t2, x)) * float(co.f(t1, t2, x)))
    if not np.isfinite(val):
        raise EvaluationError(f"L1V is not finite at ({t1}, {t2}, {x})")
    return val


def eval_L2_with_error(vc: LyapunovCandidate, co: CoefficientSet,
                       nu: Optional[LevyMeasure],
                       q: QuadratureConfig = QuadratureConfig(),
                       t1: float = 0.0, t2: float = 0.0,
                       x: float = 1.0) -> Tuple[float, float]:
    """dE-scale generator with the achieved quadrature error.

    Returns (L2V, error estimate); the error feeds the indeterminate
    fencing of the certificate checkers.
    """
    _guard_point(vc, x)
    g = float(co.g(t1, t2, x))
    val = (float(vc.V_t2(t1, t2, x))
           + float(vc.V_x(t1, t2, x)) * float(co.k(t1, t2, x))
           + 0.5 * g * g * float(vc.V_xx(t1, t2, x)))
    err = 0.0
    if nu is not None:
        v_here = float(vc.V(t1, t2, x))
        vx_here = float(vc.V_x(t1, t2, x))

        def integrand(y):
            hy = float(co.h(t1, t2, x, y))
            shifted = x + hy
            v_shift = float(vc.V(t1, t2, shifted))
            if not np.isfinite(v_shift):
                # only V values (not derivatives) are needed at the
                # shifted state, so a bare excursion into the exclusion
                # ball is fine; an unevaluable V there is not
                raise DomainError(
                    f"V is not evaluable at the jump-shifted state "
                    f"x+h={shifted} (y={y}, exclusion radius {vc.rho})")
            return v_shift - v_here - vx_here * hy

        jump, err = levy_integral_with_error(nu, integrand, q)
        val += jump
    if not np.isfinite(val):
        raise EvaluationError(f"L2V is not finite at ({t1}, {t2}, {x})")
    return val, err


def eval_L2(vc: LyapunovCandidate, co: CoefficientSet,
            nu: Optional[LevyMeasure],
            q: QuadratureConfig = QuadratureConfig(),
            t1: float = 0.0, t2: float = 0.0, x: float = 1.0) -> float:
    """dE-scale generator: V_t2 + V_x k + g^2 V_xx / 2 + jump integral."""
    return eval_L2_with_error(vc, co, nu, q, t1, t2, x)[0]


# ---------------------------------------------------------------------------
# criteria, grids, certificates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CheckGrid:
    """Tensor grid over (t1, t2, x), optionally extended by
    low-discrepancy scatter points inside the same bounding box."""

    t1_points: Sequence[float]
    t2_points: Sequence[float]
    x_points: Sequence[float]
    scatter: int = 0
    scatter_seed: int = 0

    def __post_init__(self):
        for nm in ("t1_points", "t2_points", "x_points"):
            arr = np.asarray(getattr(self, nm), dtype=float)
            object.__setattr__(self, nm, arr)
            if arr.size == 0:
                raise ConfigurationError(f"grid {nm} must be nonempty")
        if np.any(self.t1_points < 0) or np.any(self.t2_points < 0):
            raise ConfigurationError("time grids must be nonnegative")

    def points(self) -> np.ndarray:
        """All (t1, t2, x) check points, tensor part first, in grid order."""
        a, b, c = np.meshgrid(self.t1_points, self.t2_points, self.x_points,
                              indexing="ij")
        pts = np.column_stack([a.ravel(), b.ravel(), c.ravel()])
        if self.scatter > 0:
            from scipy.stats import qmc
            box_lo = [self.t1_points.min(), self.t2_points.min(),
                      self.x_points.min()]
            box_hi = [self.t1_points.max(), self.t2_points.max(),
                      self.x_points.max()]
            sampler = qmc.Halton(d=3, seed=self.scatter_seed)
            unit = sampler.random(self.scatter)
            lo = np.asarray(box_lo)
            hi = np.asarray(box_hi)
            # manual affine scaling so single-point dimensions collapse
            # instead of tripping qmc.scale's strict bounds check
            extra = lo + unit * (hi - lo)
            pts = np.vstack([pts, extra])
        return pts


@dataclass(frozen=True)
class StabilityCriteria:
    """Which theorem to check and its constants.

    ``h`` bounds the state domain S_h = {|x| < h} (must be >= 2c where the
    theorem demands it); ``alphas`` are the annulus radii swept by the
    asymptotic checks; ``gamma1``/``gamma2`` the annulus decay minorants;
    ``p``/``alpha1``/``alpha2``/``alpha3`` the moment-theorem constants.
    """

    theorem: str
    grid: CheckGrid
    h: float = np.inf
    p: Optional[float] = None
    alpha1: Optional[float] = None
    alpha2: Optional[float] = None
    alpha3: Optional[float] = None
    gamma1: Optional[Callable] = None
    gamma2: Optional[Callable] = None
    alphas: Sequence[float] = ()
    radial_ladder: Sequence[float] = (10.0, 1e3, 1e6)
    radial_levels: Sequence[float] = (1.0, 10.0, 100.0)

    _THEOREMS = ("stochastic", "asymptotic", "global", "pth-moment")

    def __post_init__(self):
        if self.theorem not in self._THEOREMS:
            raise CriteriaError(
                f"unknown theorem {self.theorem!r}; expected one of "
                f"{self._THEOREMS}")
        if self.h <= 0:
            raise CriteriaError("domain bound h must be positive")
        if self.theorem == "pth-moment":
            for nm in ("p", "alpha1", "alpha2", "alpha3"):
                v = getattr(self, nm)
                if v is None or v <= 0:
                    raise CriteriaError(
                        f"pth-moment theorem needs {nm} > 0 (got {v})")
        if self.theorem in ("asymptotic", "global"):
            if self.gamma1 is None or self.gamma2 is None:
                raise CriteriaError(
                    "asymptotic checks need gamma1 and gamma2 minorants")
            if len(self.alphas) == 0:
                raise CriteriaError(
                    "asymptotic checks need at least one annulus radius")


@dataclass
class Witness:
    condition: str
    t1: float
    t2: float
    x: float
    value: float


@dataclass
class Certificate:
    """Grid-supported verdict for one theorem's hypothesis set.

    ``verdict`` is "pass", "fail", or "indeterminate"; a fail always
    carries at least one witness.  The conditions are pointwise, so the
    certificate supports or refutes the theorem's for-all statement on
    the supplied grid only -- it cannot prove it.
    """

    theorem: str
    verdict: str
    conditions: List[Tuple[str, str]] = field(default_factory=list)
    witnesses: List[Witness] = field(default_factory=list)
    bound: Optional[str] = None
    bound_constants: Optional[dict] = None
    notes: str = ""

    def __post_init__(self):
        if self.verdict == "fail" and not self.witnesses:
            raise ConfigurationError("a failing certificate needs a witness")

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"


class _Checker:
    """Accumulates per-condition statuses and witnesses."""

    def __init__(self):
        self.status = {}
        self.witnesses = []

    def record(self, condition: str, ok: str, point=None, value=None):
        prev = self.status.get(condition, "pass")
        rank = {"pass": 0, "indeterminate": 1, "fail": 2}
        if rank[ok] > rank[prev]:
            self.status[condition] = ok
        else:
            self.status.setdefault(condition, prev)
        if ok != "pass" and point is not None:
            self.witnesses.append(Witness(condition, *point, value=value))

    def fenced_sign(self, condition: str, value: float, err: float,
                    point, bound: float = 0.0):
        """value <= bound, fenced by quadrature error."""
        fence = bound + _FENCE_SCALE * (1.0 + abs(value))
        if value + err <= fence:
            self.record(condition, "pass")
        elif value - err > fence:
            self.record(condition, "fail", point, value)
        else:
            self.record(condition, "indeterminate", point, value)

    def certificate(self, theorem: str, **kw) -> Certificate:
        order = {"pass": 0, "indeterminate": 1, "fail": 2}
        worst = max(self.status.values(), key=order.get, default="pass")
        conds = sorted(self.status.items())
        return Certificate(theorem=theorem, verdict=worst, conditions=conds,
                           witnesses=self.witnesses, **kw)


def _base_points(vc: LyapunovCandidate, crit: StabilityCriteria,
                 restrict_h: bool) -> np.ndarray:
    pts = crit.grid.points()
    keep = np.abs(pts[:, 2]) > vc.rho
    if restrict_h and np.isfinite(crit.h):
        keep &= np.abs(pts[:, 2]) < crit.h
    return pts[keep]


def _require_h(crit: StabilityCriteria, nu: Optional[LevyMeasure],
               c: Optional[float]):
    cc = c if c is not None else (nu.c if nu is not None else None)
    if cc is not None and np.isfinite(crit.h) and crit.h < 2 * cc:
        raise CriteriaError(
            f"domain bound h={crit.h} violates the theorem requirement "
            f"h >= 2c = {2 * cc}")


def _check_zero_and_minorant(vc: LyapunovCandidate, crit: StabilityCriteria,
                             chk: _Checker, pts: np.ndarray):
    for a in crit.grid.t1_points:
        for b in crit.grid.t2_points:
            v0 = float(vc.V(a, b, 0.0))
            if abs(v0) < 1e-12:
                chk.record("V(t1,t2,0)=0", "pass")
            else:
                chk.record("V(t1,t2,0)=0", "fail", (a, b, 0.0), v0)
    for a, b, x in pts:
        v = float(vc.V(a, b, x))
        m = float(vc.mu(abs(x)))
        if m <= v + 1e-12 * (1.0 + abs(v)):
            chk.record("mu(|x|) <= V", "pass")
        else:
            chk.record("mu(|x|) <= V", "fail", (a, b, x), v - m)


def check_stochastic_stability(vc: LyapunovCandidate, co: CoefficientSet,
                               nu: Optional[LevyMeasure],
                               crit: StabilityCriteria,
                               q: QuadratureConfig = QuadratureConfig(),
                               c: Optional[float] = None) -> Certificate:
    """Hypotheses for stability in probability: V vanishes at 0, is
    minorized by its class-K mu, and both generators are nonpositive on
    the grid restricted to S_h."""
    _require_h(crit, nu, c)
    chk = _Checker()
    pts = _base_points(vc, crit, restrict_h=True)
    _check_zero_and_minorant(vc, crit, chk, pts)
    for a, b, x in pts:
        chk.fenced_sign("L1V <= 0", eval_L1(vc, co, a, b, x), 0.0, (a, b, x))
        l2, err = eval_L2_with_error(vc, co, nu, q, a, b, x)
        chk.fenced_sign("L2V <= 0", l2, err, (a, b, x))
    return chk.certificate(
        "stochastic",
        notes=f"grid-supported on {pts.shape[0]} points with |x| < h")


def _annulus_conditions(vc: LyapunovCandidate, co: CoefficientSet,
                        nu: Optional[LevyMeasure], crit: StabilityCriteria,
                        q: QuadratureConfig, chk: _Checker,
                        pts: np.ndarray):
    for alpha in crit.alphas:
        g1 = float(crit.gamma1(alpha))
        g2 = float(crit.gamma2(alpha))
        if g1 < 0 or g2 < 0:
            raise CriteriaError(
                f"annulus minorants must be nonnegative (alpha={alpha})")
        if g1 == 0 and g2 == 0:
            raise CriteriaError(
                f"gamma1 and gamma2 are both zero at alpha={alpha}; the "
                "theorem forbids them vanishing simultaneously")
        ring = pts[np.abs(pts[:, 2]) > alpha]
        for a, b, x in ring:
            chk.fenced_sign(f"L1V <= -gamma1 on annulus a={alpha:g}",
                            eval_L1(vc, co, a, b, x), 0.0, (a, b, x),
                            bound=-g1)
            l2, err = eval_L2_with_error(vc, co, nu, q, a, b, x)
            chk.fenced_sign(f"L2V <= -gamma2 on annulus a={alpha:g}",
                            l2, err, (a, b, x), bound=-g2)


def check_asymptotic_stability(vc: LyapunovCandidate, co: CoefficientSet,
                               nu: Optional[LevyMeasure],
                               crit: StabilityCriteria,
                               q: QuadratureConfig = QuadratureConfig(),
                               c: Optional[float] = None) -> Certificate:
    """Stochastic hypotheses plus strict decay minorants on each annulus
    {alpha < |x| < h}."""
    _require_h(crit, nu, c)
    chk = _Checker()
    pts = _base_points(vc, crit, restrict_h=True)
    _check_zero_and_minorant(vc, crit, chk, pts)
    for a, b, x in pts:
        chk.fenced_sign("L1V <= 0", eval_L1(vc, co, a, b, x), 0.0, (a, b, x))
        l2, err = eval_L2_with_error(vc, co, nu, q, a, b, x)
        chk.fenced_sign("L2V <= 0", l2, err, (a, b, x))
    _annulus_conditions(vc, co, nu, crit, q, chk, pts)
    return chk.certificate(
        "asymptotic",
        notes=f"grid-supported on {pts.shape[0]} points with |x| < h")


def check_global_stability(vc: LyapunovCandidate, co: CoefficientSet,
                           nu: Optional[LevyMeasure],
                           crit: StabilityCriteria,
                           q: QuadratureConfig = QuadratureConfig(),
                           c: Optional[float] = None) -> Certificate:
    """Asymptotic hypotheses over the whole grid (no S_h restriction)
    plus a radial-unboundedness probe on a growing radius ladder."""
    _require_h(crit, nu, c)
    chk = _Checker()
    pts = _base_points(vc, crit, restrict_h=False)
    _check_zero_and_minorant(vc, crit, chk, pts)
    for a, b, x in pts:
        chk.fenced_sign("L1V <= 0", eval_L1(vc, co, a, b, x), 0.0, (a, b, x))
        l2, err = eval_L2_with_error(vc, co, nu, q, a, b, x)
        chk.fenced_sign("L2V <= 0", l2, err, (a, b, x))
    _annulus_conditions(vc, co, nu, crit, q, chk, pts)

    t_probe = [(a, b) for a in crit.grid.t1_points[:3]
               for b in crit.grid.t2_points[:3]]
    for radius, level in zip(crit.radial_ladder, crit.radial_levels):
        inf_v = min(float(vc.V(a, b, s * radius))
                    for a, b in t_probe for s in (-1.0, 1.0))
        cond = "radial unboundedness"
        if inf_v >= level:
            chk.record(cond, "pass")
        else:
            chk.record(cond, "fail", (0.0, 0.0, radius), inf_v)
    return chk.certificate(
        "global",
        notes=f"grid-supported on {pts.shape[0]} points; radial ladder "
              f"{tuple(crit.radial_ladder)}")


def check_pth_moment(vc: LyapunovCandidate, co: CoefficientSet,
                     nu: Optional[LevyMeasure], crit: StabilityCriteria,
                     q: QuadratureConfig = QuadratureConfig(),
                     c: Optional[float] = None) -> Certificate:
    """Hypotheses for pth-moment exponential decay; on pass the
    certificate carries E|X(t,x0)|^p <= (a2/a1) |x0|^p exp(-a3 t)."""
    if crit.theorem != "pth-moment":
        raise CriteriaError("criteria object is not for the pth-moment "
                            "theorem")
    p, a1, a2, a3 = crit.p, crit.alpha1, crit.alpha2, crit.alpha3
    chk = _Checker()
    pts = _base_points(vc, crit, restrict_h=False)
    for a in crit.grid.t1_points:
        for b in crit.grid.t2_points:
            v0 = float(vc.V(a, b, 0.0))
            if abs(v0) < 1e-12:
                chk.record("V(t1,t2,0)=0", "pass")
            else:
                chk.record("V(t1,t2,0)=0", "fail", (a, b, 0.0), v0)
    for a, b, x in pts:
        v = float(vc.V(a, b, x))
        lo, hi = a1 * abs(x) ** p, a2 * abs(x) ** p
        slack = 1e-12 * (1.0 + abs(v))
        if lo <= v + slack and v <= hi + slack:
            chk.record("a1|x|^p <= V <= a2|x|^p", "pass")
        else:
            chk.record("a1|x|^p <= V <= a2|x|^p", "fail", (a, b, x), v)
        l2, err = eval_L2_with_error(vc, co, nu, q, a, b, x)
        chk.fenced_sign("L2V <= 0", l2, err, (a, b, x))
        chk.fenced_sign("L1V <= -a3 V", eval_L1(vc, co, a, b, x), 0.0,
                        (a, b, x), bound=-a3 * v)
    cert = chk.certificate(
        "pth-moment",
        bound=f"E|X(t,x0)|^{p:g} <= {a2 / a1:g} |x0|^{p:g} exp(-{a3:g} t)",
        bound_constants={"prefactor": a2 / a1, "rate": a3, "p": p},
        notes=f"grid-supported on {pts.shape[0]} points")
    return cert


# ---------------------------------------------------------------------------
# pathwise consistency of the change-of-variables identity
# ---------------------------------------------------------------------------

def ito_residual(vc: LyapunovCandidate, spec: TcSdeSpec,
                 path: PathResult) -> np.ndarray:
    """Residual series of the change-of-variables identity along a path.

    V(t, E_t, X_t) - V(0, E_0, x0) is compared with the sum of the dt
    integral of L1V, the dE integral of L2V, the Brownian integral of
    V_x g, and the compensated jump sum -- every integral realized with
    the integrator's own increments, and the jump sum replaying the
    integrator's sequential intra-step states.  Returns |LHS - RHS| on
    the path grid (residual[0] = 0).
    """
    co = spec.coefficients
    t, x, e = path.grid, path.x, path.e
    d_t, d_e, d_b = np.diff(t), path.d_e, path.d_b
    n = d_t.size

    lhs = np.array([float(vc.V(t[i], e[i], x[i])) for i in range(n + 1)])
    lhs -= lhs[0]

    rhs = np.zeros(n + 1)
    acc = 0.0
    for i in range(n):
        a, b, xi = t[i], e[i], x[i]
        vx = float(vc.V_x(a, b, xi))
        g = float(co.g(a, b, xi))
        # continuous-scale terms of L1 and L2 plus the Brownian integral;
        # the jump-compensation part of L2 and the compensator of the
        # jump measure collapse to -dE * V_x * comp (comp recorded by the
        # integrator)
        acc += (float(vc.V_t1(a, b, xi)) * d_t[i]
                + vx * float(co.f(a, b, xi)) * d_t[i]
                + float(vc.V_t2(a, b, xi)) * d_e[i]
                + vx * float(co.k(a, b, xi)) * d_e[i]
                + 0.5 * g * g * float(vc.V_xx(a, b, xi)) * d_e[i]
                + vx * g * d_b[i])
        # the jump-compensation integral inside L2 and the compensator
        # of the jump measure differ by exactly the V_x*h term, so
        # together they contribute -dE * V_x * comp (comp is the
        # integrator's own per-step compensator value)
        comp = float(path.comp[i])
        acc -= d_e[i] * vx * comp
        # realized jumps: replay the integrator's sequential states
        xj = (xi + float(co.f(a, b, xi)) * d_t[i]
              + float(co.k(a, b, xi)) * d_e[i] + g * d_b[i]
              - d_e[i] * comp)
        for y in path.jump_marks[i]:
            hv = float(co.h(a, b, xj, y))
            acc += float(vc.V(a, b, xj + hv)) - float(vc.V(a, b, xj))
            xj = xj + hv
        rhs[i + 1] = acc
    return np.abs(lhs - rhs)
