"""Configuration-driven command line front end.

Experiments are described in a TOML-compatible subset (``key = value``
lines under dotted ``[section]`` headers); the runner writes CSV tables,
plain-text certificates whose first line is a YES/NO/INDETERMINATE
verdict, a key=value run manifest, and optional SVG plots.  All files are
written atomically (temp file then rename).

Exit codes: 0 when every check passes, 2 when a certificate or bound
check fails, 1 on execution errors.
"""

from __future__ import annotations

import argparse
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field, fields as dc_fields
from typing import Optional, Sequence, Tuple

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .errors import ConfigurationError, TcsdeError
from .levy_core import (CompoundPoissonSubordinator, DeterministicSubordinator,
                        GammaSubordinator, LevyMeasure, StableSubordinator,
                        Subordinator, TemperedStableSubordinator,
                        uniform_levy_measure)
from .lyapunov import (CheckGrid, LyapunovCandidate, StabilityCriteria,
                       abs_power_candidate, absolute_value_candidate,
                       check_asymptotic_stability, check_global_stability,
                       check_pth_moment, check_stochastic_stability,
                       quadratic_candidate)
from .sde_engine import (CoefficientSet, IntegratorConfig, TcSdeSpec,
                         integrate_direct)
from .paths import SeedSpec
from .stability_mc import (McConfig, duality_gap_study, estimate_moment,
                           estimate_stay_probability, fit_exponential_decay)

__all__ = ["ExperimentConfig", "parse_config", "emit_config",
           "run_experiment", "main"]

KINDS = ("simulate", "verify-lyapunov", "estimate-stability",
         "check-duality", "reproduce-example-1", "reproduce-example-2")

G_KINDS = ("state", "clock_state", "clock", "const", "none")
H_KINDS = ("scale_y", "y_squared_recenter", "none")
CANDIDATES = ("abs_power", "absolute_value", "quadratic")
THEOREMS = ("stochastic", "asymptotic", "global", "pth-moment")
SUB_FAMILIES = ("stable", "tempered", "gamma", "poisson", "deterministic")


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully validated, defaults-filled experiment description."""

    kind: str
    # sde
    x0: float = 1.0
    c: float = 1.0
    f_factor: float = -1.0
    k_factor: float = 0.0
    g_kind: str = "clock_state"
    g_factor: float = 1.0
    h_kind: str = "y_squared_recenter"
    h_factor: float = 1.0
    # levy measure
    nu_family: str = "uniform"
    nu_intensity: float = 1.0
    nu_cutoff: float = 1e-3
    # subordinator
    sub_family: str = "stable"
    sub_beta: float = 0.5
    sub_theta: float = 1.0
    sub_shape: float = 1.0
    sub_rate: float = 1.0
    sub_slope: float = 1.0
    # integrator
    dt: float = 1e-3
    horizon: float = 2.0
    d_tau: float = 0.0          # 0 means: matched to dt automatically
    blowup_bound: float = 1e12
    # monte carlo
    paths: int = 10000
    seed: int = 42
    confidence: float = 0.99
    report_times: Tuple[float, ...] = (0.5, 1.0, 2.0)
    # lyapunov
    candidate: str = "absolute_value"
    alpha: float = 0.5
    theorem: str = "pth-moment"
    h_domain: float = 2.0
    p: float = 1.0
    alpha1: float = 1.0
    alpha2: float = 1.0
    alpha3: float = 1.0
    gamma1_scale: float = 0.5
    gamma2_scale: float = 0.01
    gamma_power: float = 0.5
    annuli: Tuple[float, ...] = (0.25, 1.0)
    grid_t_points: Tuple[float, ...] = (0.0, 1.0, 5.0)
    grid_x_count: int = 8
    grid_scatter: int = 20
    # bound for estimate-stability / reproduce-example-2
    bound_kind: str = "exp"     # "exp" or "none"
    bound_prefactor: float = 1.0
    bound_rate: float = 1.0
    bound_slack: float = 0.10
    # stay probability
    stay_r: float = 0.5
    stay_threshold: float = 0.95
    # duality study
    duality_dts: Tuple[float, ...] = (4e-3, 2e-3, 1e-3)
    duality_paths: int = 100
    duality_horizon: float = 1.0
    duality_threshold: float = 0.05
    # output
    out_dir: str = "tcsde-out"
    svg: bool = False


# map config-file sections/keys to ExperimentConfig field names, with the
# expected type
_SCHEMA = {
    ("", "kind"): ("kind", str),
    ("sde", "x0"): ("x0", float),
    ("sde", "c"): ("c", float),
    ("sde", "f_factor"): ("f_factor", float),
    ("sde", "k_factor"): ("k_factor", float),
    ("sde", "g_kind"): ("g_kind", str),
    ("sde", "g_factor"): ("g_factor", float),
    ("sde", "h_kind"): ("h_kind", str),
    ("sde", "h_factor"): ("h_factor", float),
    ("sde.nu", "family"): ("nu_family", str),
    ("sde.nu", "intensity"): ("nu_intensity", float),
    ("sde.nu", "cutoff"): ("nu_cutoff", float),
    ("sde.nu", "c"): ("_nu_c", float),
    ("subordinator", "family"): ("sub_family", str),
    ("subordinator", "beta"): ("sub_beta", float),
    ("subordinator", "theta"): ("sub_theta", float),
    ("subordinator", "shape"): ("sub_shape", float),
    ("subordinator", "rate"): ("sub_rate", float),
    ("subordinator", "slope"): ("sub_slope", float),
    ("integrator", "dt"): ("dt", float),
    ("integrator", "horizon"): ("horizon", float),
    ("integrator", "d_tau"): ("d_tau", float),
    ("integrator", "blowup_bound"): ("blowup_bound", float),
    ("mc", "paths"): ("paths", int),
    ("mc", "seed"): ("seed", int),
    ("mc", "confidence"): ("confidence", float),
    ("mc", "report_times"): ("report_times", tuple),
    ("lyapunov", "candidate"): ("candidate", str),
    ("lyapunov", "alpha"): ("alpha", float),
    ("lyapunov", "theorem"): ("theorem", str),
    ("lyapunov", "h"): ("h_domain", float),
    ("lyapunov", "p"): ("p", float),
    ("lyapunov", "alpha1"): ("alpha1", float),
    ("lyapunov", "alpha2"): ("alpha2", float),
    ("lyapunov", "alpha3"): ("alpha3", float),
    ("lyapunov", "gamma1_scale"): ("gamma1_scale", float),
    ("lyapunov", "gamma2_scale"): ("gamma2_scale", float),
    ("lyapunov", "gamma_power"): ("gamma_power", float),
    ("lyapunov", "annuli"): ("annuli", tuple),
    ("lyapunov", "grid_t_points"): ("grid_t_points", tuple),
    ("lyapunov", "grid_x_count"): ("grid_x_count", int),
    ("lyapunov", "grid_scatter"): ("grid_scatter", int),
    ("bound", "kind"): ("bound_kind", str),
    ("bound", "prefactor"): ("bound_prefactor", float),
    ("bound", "rate"): ("bound_rate", float),
    ("bound", "slack"): ("bound_slack", float),
    ("stay", "r"): ("stay_r", float),
    ("stay", "threshold"): ("stay_threshold", float),
    ("duality", "dts"): ("duality_dts", tuple),
    ("duality", "paths"): ("duality_paths", int),
    ("duality", "horizon"): ("duality_horizon", float),
    ("duality", "threshold"): ("duality_threshold", float),
    ("output", "dir"): ("out_dir", str),
    ("output", "svg"): ("svg", bool),
}

# kind-specific default overlays so a minimal config reproduces the
# built-in example systems
_KIND_DEFAULTS = {
    "reproduce-example-1": {
        "x0": 0.01, "f_factor": -1.0, "k_factor": 0.25,
        "g_kind": "state", "g_factor": 1.0,
        "h_kind": "scale_y", "h_factor": 1.0,
        "candidate": "abs_power", "alpha": 0.5, "theorem": "global",
        "h_domain": 2.0, "dt": 1e-2, "horizon": 20.0,
        "report_times": (5.0, 10.0, 20.0), "bound_kind": "none",
    },
    "reproduce-example-2": {
        "x0": 1.0, "f_factor": -1.0, "k_factor": 0.0,
        "g_kind": "clock_state", "g_factor": 1.0,
        "h_kind": "y_squared_recenter",
        "candidate": "absolute_value", "theorem": "pth-moment",
        "p": 1.0, "alpha1": 1.0, "alpha2": 1.0, "alpha3": 1.0,
        "dt": 1e-3, "horizon": 2.0, "report_times": (0.5, 1.0, 2.0),
        "bound_kind": "exp", "bound_prefactor": 1.0, "bound_rate": 1.0,
    },
}


def _flatten(table: dict, prefix: str = "") -> dict:
    out = {}
    for key, val in table.items():
        if isinstance(val, dict):
            sub = f"{prefix}.{key}" if prefix else key
            out.update(_flatten(val, sub))
        else:
            out[(prefix, key)] = val
    return out


def parse_config(path: str, kind: Optional[str] = None,
                 overrides: Optional[dict] = None) -> ExperimentConfig:
    """Parse and validate a config file, collecting every error.

    ``kind`` (from the subcommand) wins over the file's ``kind`` key but
    must not contradict it.  ``overrides`` carry command-line flags.
    Raises :class:`ConfigurationError` listing all problems at once.
    """
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    flat = _flatten(raw)
    errors = []
    values = {}
    nu_c = None
    for loc, val in flat.items():
        spot = f"[{loc[0]}] {loc[1]}" if loc[0] else loc[1]
        if loc not in _SCHEMA:
            errors.append(f"unknown key {spot}")
            continue
        name, typ = _SCHEMA[loc]
        if typ is float and isinstance(val, (int, float)) \
                and not isinstance(val, bool):
            val = float(val)
        elif typ is int and isinstance(val, int) and not isinstance(val, bool):
            val = int(val)
        elif typ is tuple and isinstance(val, list):
            try:
                val = tuple(float(v) for v in val)
            except (TypeError, ValueError):
                errors.append(f"{spot}: expected a list of numbers")
                continue
        elif not isinstance(val, typ) or (typ is not bool
                                          and isinstance(val, bool)):
            errors.append(f"{spot}: expected {typ.__name__}, "
                          f"got {type(val).__name__}")
            continue
        if name == "_nu_c":
            nu_c = val
        else:
            values[name] = val

    file_kind = values.pop("kind", None)
    if kind is None:
        kind = file_kind
    elif file_kind is not None and file_kind != kind:
        errors.append(f"kind: config says {file_kind!r} but the "
                      f"subcommand is {kind!r}")
    if kind is None:
        errors.append("kind: missing (set it in the config or pick a "
                      "subcommand)")
    elif kind not in KINDS:
        errors.append(f"kind: unknown experiment {kind!r}")

    merged = dict(_KIND_DEFAULTS.get(kind, {}))
    merged.update(values)
    if overrides:
        merged.update(overrides)
    merged["kind"] = kind or "simulate"

    cfg_fields = {f.name for f in dc_fields(ExperimentConfig)}
    merged = {k: v for k, v in merged.items() if k in cfg_fields}
    cfg = ExperimentConfig(**merged)

    _validate(cfg, nu_c, errors)
    if errors:
        raise ConfigurationError(errors)
    return cfg


def _validate(cfg: ExperimentConfig, nu_c: Optional[float], errors: list):
    def rng(name, value, ok, expect):
        if not ok:
            errors.append(f"{name}: {expect} (got {value})")

    rng("[sde] c", cfg.c, cfg.c > 0, "must be positive")
    rng("[sde] g_kind", cfg.g_kind, cfg.g_kind in G_KINDS,
        f"must be one of {G_KINDS}")
    rng("[sde] h_kind", cfg.h_kind, cfg.h_kind in H_KINDS,
        f"must be one of {H_KINDS}")
    rng("[sde.nu] family", cfg.nu_family,
        cfg.nu_family in ("uniform", "none"), "must be uniform or none")
    rng("[sde.nu] intensity", cfg.nu_intensity, cfg.nu_intensity > 0,
        "must be positive")
    rng("[sde.nu] cutoff", cfg.nu_cutoff, 0 < cfg.nu_cutoff < cfg.c,
        "must lie strictly between 0 and [sde] c")
    if nu_c is not None and nu_c != cfg.c:
        errors.append(f"[sde.nu] c = {nu_c} is inconsistent with "
                      f"[sde] c = {cfg.c}; the measure support bound and "
                      "the maximum jump size must agree")
    rng("[subordinator] family", cfg.sub_family,
        cfg.sub_family in SUB_FAMILIES, f"must be one of {SUB_FAMILIES}")
    rng("[subordinator] beta", cfg.sub_beta, 0 < cfg.sub_beta < 1,
        "must lie in (0, 1)")
    rng("[integrator] dt", cfg.dt, cfg.dt > 0, "must be positive")
    rng("[integrator] horizon", cfg.horizon, cfg.horizon > 0,
        "must be positive")
    rng("[integrator] d_tau", cfg.d_tau, cfg.d_tau >= 0,
        "must be >= 0 (0 selects the automatic step)")
    rng("[mc] paths", cfg.paths, cfg.paths >= 2, "must be >= 2")
    rng("[mc] confidence", cfg.confidence, 0 < cfg.confidence < 1,
        "must lie in (0, 1)")
    rng("[mc] report_times", cfg.report_times,
        len(cfg.report_times) > 0
        and all(b > a for a, b in zip(cfg.report_times,
                                      cfg.report_times[1:]))
        and cfg.report_times[0] > 0
        and cfg.report_times[-1] <= cfg.horizon,
        "must be increasing, positive, and within the horizon")
    rng("[lyapunov] candidate", cfg.candidate,
        cfg.candidate in CANDIDATES, f"must be one of {CANDIDATES}")
    rng("[lyapunov] theorem", cfg.theorem, cfg.theorem in THEOREMS,
        f"must be one of {THEOREMS}")
    rng("[lyapunov] alpha", cfg.alpha, cfg.alpha > 0, "must be positive")
    rng("[bound] kind", cfg.bound_kind, cfg.bound_kind in ("exp", "none"),
        "must be exp or none")
    if cfg.kind == "reproduce-example-1":
        rng("[stay] r", cfg.stay_r, cfg.stay_r > abs(cfg.x0),
            "must exceed |x0|")
    rng("[duality] dts", cfg.duality_dts,
        len(cfg.duality_dts) >= 2 and all(d > 0 for d in cfg.duality_dts),
        "needs >= 2 positive steps")


def emit_config(cfg: ExperimentConfig) -> str:
    """Normalized config text; re-parsing it reproduces ``cfg``."""
    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, tuple):
            return "[" + ", ".join(fmt(x) for x in v) + "]"
        if isinstance(v, str):
            return f'"{v}"'
        return repr(v)

    by_section = {}
    for (section, key), (name, _typ) in _SCHEMA.items():
        if name == "_nu_c":
            continue
        by_section.setdefault(section, []).append((key, getattr(cfg, name)))
    lines = []
    for section in sorted(by_section, key=lambda s: (s != "", s)):
        if section:
            lines.append("")
            lines.append(f"[{section}]")
        for key, val in sorted(by_section[section]):
            lines.append(f"{key} = {fmt(val)}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------

def build_subordinator(cfg: ExperimentConfig) -> Subordinator:
    fam = cfg.sub_family
    if fam == "stable":
        return StableSubordinator(cfg.sub_beta)
    if fam == "tempered":
        return TemperedStableSubordinator(cfg.sub_beta, cfg.sub_theta)
    if fam == "gamma":
        return GammaSubordinator(cfg.sub_shape, cfg.sub_rate)
    if fam == "poisson":
        return CompoundPoissonSubordinator(cfg.sub_rate)
    return DeterministicSubordinator(cfg.sub_slope)


def build_levy_measure(cfg: ExperimentConfig) -> Optional[LevyMeasure]:
    if cfg.nu_family == "none":
        return None
    return uniform_levy_measure(c=cfg.c, intensity=cfg.nu_intensity,
                                cutoff=cfg.nu_cutoff)


def build_coefficients(cfg: ExperimentConfig) -> CoefficientSet:
    ff, kf, gf, hf = (cfg.f_factor, cfg.k_factor, cfg.g_factor,
                      cfg.h_factor)
    g = {
        "state": lambda t1, t2, x: gf * x,
        "clock_state": lambda t1, t2, x: gf * t2 * x,
        "clock": lambda t1, t2, x: gf * t2 + 0.0 * x,
        "const": lambda t1, t2, x: gf + 0.0 * x,
        "none": lambda t1, t2, x: 0.0 * x,
    }[cfg.g_kind]
    h = {
        "scale_y": lambda t1, t2, x, y: hf * y * x,
        "y_squared_recenter": lambda t1, t2, x, y: x * (y * y - 1.0),
        "none": lambda t1, t2, x, y: 0.0 * x * y,
    }[cfg.h_kind]
    return CoefficientSet(
        f=lambda t1, t2, x: ff * x,
        k=lambda t1, t2, x: kf * x,
        g=g, h=h,
        h_state_linear=True, h_autonomous=True)


def build_spec(cfg: ExperimentConfig) -> TcSdeSpec:
    return TcSdeSpec(coefficients=build_coefficients(cfg), c=cfg.c,
                     x0=cfg.x0, subordinator=build_subordinator(cfg),
                     nu=build_levy_measure(cfg))


def build_integrator_config(cfg: ExperimentConfig) -> IntegratorConfig:
    return IntegratorConfig(dt=cfg.dt, horizon=cfg.horizon,
                            d_tau=cfg.d_tau or None,
                            blowup_bound=cfg.blowup_bound)


def build_candidate(cfg: ExperimentConfig) -> LyapunovCandidate:
    if cfg.candidate == "abs_power":
        return abs_power_candidate(cfg.alpha)
    if cfg.candidate == "absolute_value":
        return absolute_value_candidate()
    return quadratic_candidate()


def build_criteria(cfg: ExperimentConfig) -> StabilityCriteria:
    x_hi = 0.95 * cfg.h_domain if np.isfinite(cfg.h_domain) else 3.0
    half = np.geomspace(1e-3, x_hi, cfg.grid_x_count)
    grid = CheckGrid(t1_points=cfg.grid_t_points,
                     t2_points=cfg.grid_t_points,
                     x_points=np.concatenate([-half[::-1], half]),
                     scatter=cfg.grid_scatter)
    kw = dict(theorem=cfg.theorem, grid=grid, h=cfg.h_domain)
    if cfg.theorem == "pth-moment":
        kw.update(p=cfg.p, alpha1=cfg.alpha1, alpha2=cfg.alpha2,
                  alpha3=cfg.alpha3, h=np.inf)
    if cfg.theorem in ("asymptotic", "global"):
        g1s, g2s, pw = cfg.gamma1_scale, cfg.gamma2_scale, cfg.gamma_power
        kw.update(gamma1=lambda a: g1s * a ** pw,
                  gamma2=lambda a: g2s * a ** pw,
                  alphas=cfg.annuli)
    return StabilityCriteria(**kw)


_CHECKERS = {
    "stochastic": check_stochastic_stability,
    "asymptotic": check_asymptotic_stability,
    "global": check_global_stability,
    "pth-moment": check_pth_moment,
}


# ---------------------------------------------------------------------------
# writers
# ---------------------------------------------------------------------------

def _atomic_write(path: str, data) -> None:
    """Write text or bytes to ``path`` via a temp file in the same
    directory and an atomic rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tcsde-tmp-")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path: str, header: Sequence[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for cell in row:
            if isinstance(cell, (bool, np.bool_)):
                cells.append("yes" if cell else "no")
            elif isinstance(cell, (float, np.floating)):
                cells.append(repr(float(cell)))
            else:
                cells.append(str(cell))
        lines.append(",".join(cells))
    _atomic_write(path, "\n".join(lines) + "\n")


def write_certificate(path: str, verdict: str, body_lines) -> None:
    head = {"pass": "YES", "fail": "NO",
            "indeterminate": "INDETERMINATE"}[verdict]
    _atomic_write(path, "\n".join([head, *body_lines]) + "\n")


def write_manifest(path: str, entries: dict) -> None:
    lines = [f"{k}={v}" for k, v in entries.items()]
    _atomic_write(path, "\n".join(lines) + "\n")


def render_decay_svg(path: str, times, estimates, ci_lo, ci_hi,
                     bound=None, title: str = "moment decay") -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.errorbar(times, estimates,
                yerr=[np.asarray(estimates) - np.asarray(ci_lo),
                      np.asarray(ci_hi) - np.asarray(estimates)],
                fmt="o-", capsize=3, label="MC estimate")
    if bound is not None:
        tt = np.linspace(0, max(times), 200)
        ax.plot(tt, np.interp(tt, times, bound), "--", label="bound")
    ax.set_xlabel("t")
    ax.set_ylabel("estimate")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    import io
    buf = io.BytesIO()
    fig.savefig(buf, format="svg")
    plt.close(fig)
    _atomic_write(path, buf.getvalue())


def render_path_svg(path: str, grid, x, e) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    fig, axes = plt.subplots(2, 1, figsize=(6, 5), sharex=True)
    axes[0].plot(grid, x, lw=0.8)
    axes[0].set_ylabel("X(t)")
    axes[1].plot(grid, e, lw=0.8, color="tab:orange")
    axes[1].set_ylabel("E_t")
    axes[1].set_xlabel("t")
    fig.tight_layout()
    import io
    buf = io.BytesIO()
    fig.savefig(buf, format="svg")
    plt.close(fig)
    _atomic_write(path, buf.getvalue())


# ---------------------------------------------------------------------------
# experiment runners
# ---------------------------------------------------------------------------

def _bound_fn(cfg: ExperimentConfig):
    if cfg.bound_kind == "none":
        return None
    pre, rate, x0, p = (cfg.bound_prefactor, cfg.bound_rate, cfg.x0, cfg.p)
    return lambda t: pre * abs(x0) ** p * np.exp(-rate * np.asarray(t))


def _run_simulate(cfg: ExperimentConfig, out: str) -> Tuple[int, dict]:
    spec = build_spec(cfg)
    res = integrate_direct(spec, build_integrator_config(cfg),
                           SeedSpec(master=cfg.seed, stream=0))
    write_csv(os.path.join(out, "path.csv"), ["t", "e", "x"],
              zip(res.grid, res.e, res.x))
    if cfg.svg:
        render_path_svg(os.path.join(out, "path.svg"), res.grid, res.x,
                        res.e)
    return 0, {"final_x": res.x[-1], "final_e": res.e[-1]}


def _run_verify(cfg: ExperimentConfig, out: str) -> Tuple[int, dict]:
    cert = _CHECKERS[cfg.theorem](build_candidate(cfg),
                                  build_coefficients(cfg),
                                  build_levy_measure(cfg),
                                  build_criteria(cfg), c=cfg.c)
    body = [f"theorem: {cert.theorem}", f"notes: {cert.notes}"]
    if cert.bound:
        body.append(f"bound: {cert.bound}")
    body += [f"condition: {name} = {status}"
             for name, status in cert.conditions]
    body += [f"witness: {w.condition} at (t1={w.t1:g}, t2={w.t2:g}, "
             f"x={w.x:g}) value={w.value:g}" for w in cert.witnesses]
    write_certificate(os.path.join(out, "certificate.txt"), cert.verdict,
                      body)
    return (0 if cert.passed else 2), {"verdict": cert.verdict}


def _moment_rows(report):
    bound = (report.bound if report.bound is not None
             else np.full(report.times.size, np.nan))
    passes = (report.passes if report.passes is not None
              else np.ones(report.times.size, dtype=bool))
    return zip(report.times, report.estimates, report.ci_lo, report.ci_hi,
               bound, passes)


def _run_estimate(cfg: ExperimentConfig, out: str) -> Tuple[int, dict]:
    spec = build_spec(cfg)
    mc = McConfig(n_paths=cfg.paths, report_times=cfg.report_times,
                  confidence=cfg.confidence, master_seed=cfg.seed)
    report = estimate_moment(spec, mc, build_integrator_config(cfg),
                             p=cfg.p, bound=_bound_fn(cfg),
                             bound_slack=cfg.bound_slack)
    write_csv(os.path.join(out, "moment.csv"),
              ["t", "estimate", "ci_lo", "ci_hi", "bound", "pass"],
              _moment_rows(report))
    extra = {"excluded_paths": report.n_excluded, "valid": report.valid}
    try:
        c_fit, lam, resid = fit_exponential_decay(report.times,
                                                  report.estimates)
        extra.update(fit_C=c_fit, fit_lambda=lam, fit_residual=resid)
    except TcsdeError:
        pass
    if cfg.svg:
        render_decay_svg(os.path.join(out, "moment.svg"), report.times,
                         report.estimates, report.ci_lo, report.ci_hi,
                         report.bound,
                         title=f"E|X(t)|^{cfg.p:g} vs bound")
    return (0 if report.passed else 2), extra


def _run_duality(cfg: ExperimentConfig, out: str) -> Tuple[int, dict]:
    spec = build_spec(cfg)
    if abs(cfg.f_factor) > 0:
        raise ConfigurationError(
            "[sde] f_factor must be 0 for check-duality (the composed "
            "route is defined for the reduced SDE only)")
    study = duality_gap_study(spec, cfg.duality_dts, cfg.duality_paths,
                              cfg.seed, cfg.duality_horizon,
                              d_tau=cfg.d_tau or None)
    write_csv(os.path.join(out, "duality.csv"),
              ["dt", "mean_gap", "median_gap", "max_gap"],
              zip(study["dts"], study["mean"], study["median"],
                  study["max"]))
    ok = study["monotone"] and study["mean"][-1] < cfg.duality_threshold
    body = [
        f"direct-vs-composed sup-norm gap, {study['n_paths']} coupled "
        f"paths, operational step {study['d_tau']:g}",
        f"monotone decrease: {'yes' if study['monotone'] else 'no'}",
        f"finest-step mean gap: {study['mean'][-1]:.6g} "
        f"(threshold {cfg.duality_threshold:g})",
    ]
    write_certificate(os.path.join(out, "duality.txt"),
                      "pass" if ok else "fail", body)
    return (0 if ok else 2), {"finest_mean_gap": study["mean"][-1],
                              "monotone": study["monotone"]}


def _run_example_1(cfg: ExperimentConfig, out: str) -> Tuple[int, dict]:
    code_cert, info = _run_verify(cfg, out)
    spec = build_spec(cfg)
    mc = McConfig(n_paths=cfg.paths, report_times=(cfg.horizon,),
                  confidence=cfg.confidence, master_seed=cfg.seed)
    stay = estimate_stay_probability(spec, mc, build_integrator_config(cfg),
                                     r=cfg.stay_r)
    ok = stay.estimates[0] >= cfg.stay_threshold
    write_csv(os.path.join(out, "stay.csv"),
              ["t", "estimate", "ci_lo", "ci_hi", "bound", "pass"],
              [(stay.times[0], stay.estimates[0], stay.ci_lo[0],
                stay.ci_hi[0], cfg.stay_threshold, ok)])
    info.update(stay_probability=stay.estimates[0],
                stay_threshold=cfg.stay_threshold)
    return (code_cert if code_cert else (0 if ok else 2)), info


def _run_example_2(cfg: ExperimentConfig, out: str) -> Tuple[int, dict]:
    code_cert, info = _run_verify(cfg, out)
    code_mom, extra = _run_estimate(cfg, out)
    info.update(extra)
    return (code_cert or code_mom), info


_RUNNERS = {
    "simulate": _run_simulate,
    "verify-lyapunov": _run_verify,
    "estimate-stability": _run_estimate,
    "check-duality": _run_duality,
    "reproduce-example-1": _run_example_1,
    "reproduce-example-2": _run_example_2,
}


def run_experiment(cfg: ExperimentConfig) -> int:
    """Run one experiment; writes artifacts and returns the exit code."""
    out = cfg.out_dir
    os.makedirs(out, exist_ok=True)
    started = time.time()
    code, extra = _RUNNERS[cfg.kind](cfg, out)
    _atomic_write(os.path.join(out, "config.normalized.toml"),
                  emit_config(cfg))
    manifest = {
        "tcsde_version": __version__,
        "numpy_version": np.__version__,
        "kind": cfg.kind,
        "seed": cfg.seed,
        "paths": cfg.paths,
        "dt": cfg.dt,
        "horizon": cfg.horizon,
        "d_tau": cfg.d_tau or "auto",
        "threads": os.environ.get("TCSDE_THREADS", "1"),
        "elapsed_seconds": round(time.time() - started, 3),
        "exit_code": code,
    }
    manifest.update({k: v for k, v in extra.items()})
    write_manifest(os.path.join(out, "manifest.txt"), manifest)
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="tcsde",
        description="Simulation and stability verification for SDEs "
                    "driven by time-changed Levy noise")
    sub = parser.add_subparsers(dest="command", required=True)
    for kind in KINDS:
        sp = sub.add_parser(kind)
        sp.add_argument("--config", required=True)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", default=None)
        sp.add_argument("--paths", type=int, default=None)
        sp.add_argument("--svg", action="store_true")
    args = parser.parse_args(argv)

    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out_dir"] = args.out
    if args.paths is not None:
        overrides["paths"] = args.paths
    if args.svg:
        overrides["svg"] = True

    try:
        cfg = parse_config(args.config, kind=args.command,
                           overrides=overrides)
        return run_experiment(cfg)
    except ConfigurationError as exc:
        for err in exc.errors:
            print(f"error kind=config message={err!r}", file=sys.stderr)
        return 1
    except TcsdeError as exc:
        print(f"error kind={type(exc).__name__} message={str(exc)!r}",
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
