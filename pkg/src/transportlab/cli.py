"""Batch driver: solve transport pairs, run bound checks, emit reports.

Subcommands
  verify    solve a pair and check the trace / Lipschitz / determinant /
            moment bounds
  geodesic  displacement interpolation: convex-integral monotonicity,
            majorization, entropy stability
  heatflow  semigroup interpolation flow and its volume contraction
  scenario  build a named instance and run its full check suite
  selftest  deterministic closed-form oracle battery

Common flags: --config (JSON document), --seed, --out, --format
(comma list from structured,tabular,plotdata), --epsilon-schedule,
--cache.  Reports are byte-stable for a fixed config and seed; anything
time-dependent goes to a sibling timings file (or stderr).  Exit status:
0 all checks pass, 1 any failure, 2 inconclusive without failures,
3 execution error.  No interactive mode, no plot rendering (plotdata is
the raw series), no network services.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import (brenier, calculus, heatflow, majorize, measures, polyexp,
               quadrature, scenarios, semigroup, verify)
from .errors import DomainError, TransportLabError
from .measures import TruncationBox
from .verify import (FAIL, INCONCLUSIVE, PASS, PASS_WITH_SLACK,
                     make_certificate, probe_points)

FORMATS = ("structured", "tabular", "plotdata")
COMMANDS = ("verify", "geodesic", "heatflow", "scenario", "selftest")
_DEFAULT_SCENARIO = {"verify": "gaussian", "geodesic": "wehrl",
                     "heatflow": "flow", "selftest": "selftest"}


@dataclass(frozen=True)
class RunConfig:
    """Resolved invocation: everything the run depends on, nothing else."""

    command: str
    scenario: str
    params: dict = field(default_factory=dict)
    seed: int = 0
    epsilon_schedule: tuple | None = None
    formats: tuple = ("structured",)
    out_dir: str | None = None
    cache_dir: str | None = None

    def canonical(self):
        """The determinism scope: config content that shapes the report."""
        return {
            "command": self.command,
            "scenario": self.scenario,
            "params": verify._jsonable(self.params),
            "seed": int(self.seed),
            "epsilon_schedule": (None if self.epsilon_schedule is None
                                 else [float(e) for e in self.epsilon_schedule]),
        }

    def content_hash(self):
        blob = json.dumps(self.canonical(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass
class RunReport:
    """Everything a run produced, ready for the three output formats."""

    config: dict
    config_hash: str
    certificates: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)
    series: dict = field(default_factory=dict)
    summaries: dict = field(default_factory=dict)
    errors: list = field(default_factory=list)

    def verdict_counts(self):
        counts = {PASS: 0, PASS_WITH_SLACK: 0, INCONCLUSIVE: 0, FAIL: 0}
        for cert in self.certificates:
            counts[cert["verdict"]] = counts.get(cert["verdict"], 0) + 1
        return counts

    def exit_code(self):
        if self.errors:
            return 3
        counts = self.verdict_counts()
        if counts.get(FAIL, 0):
            return 1
        if counts.get(INCONCLUSIVE, 0):
            return 2
        return 0

    def as_dict(self):
        return {
            "config": self.config,
            "config_hash": self.config_hash,
            "certificates": self.certificates,
            "tables": self.tables,
            "series": self.series,
            "summaries": self.summaries,
            "errors": self.errors,
            "verdicts": self.verdict_counts(),
            "exit_code": self.exit_code(),
        }

    def structured(self):
        return json.dumps(self.as_dict(), sort_keys=True, indent=2) + "\n"

    def tabular(self):
        lines = [f"# {self.config['command']} scenario={self.config['scenario']} "
                 f"seed={self.config['seed']}"]
        header = (f"{'check':34} {'bound':26} {'verdict':15} "
                  f"{'observed':>14} {'rhs':>14} {'slack':>8} {'atol':>10}")
        lines.append(header)
        lines.append("-" * len(header))
        for cert in self.certificates:
            lines.append(
                f"{cert['check']:34} {cert['bound_name']:26} "
                f"{cert['verdict']:15} {cert['observed']:>14.6e} "
                f"{cert['theoretical_rhs']:>14.6e} {cert['slack']:>8.3g} "
                f"{cert['atol']:>10.3g}")
        for key in sorted(self.summaries):
            lines.append(f"summary {key} = "
                         f"{json.dumps(self.summaries[key], sort_keys=True)}")
        for err in self.errors:
            lines.append(f"error {err['check']}: {err['error']}")
        counts = self.verdict_counts()
        lines.append("verdicts " + " ".join(
            f"{k}={counts[k]}" for k in (PASS, PASS_WITH_SLACK,
                                         INCONCLUSIVE, FAIL)))
        return "\n".join(lines) + "\n"

    def plotdata(self):
        return json.dumps({"config_hash": self.config_hash,
                           "series": self.series},
                          sort_keys=True, indent=2) + "\n"

    def render(self, fmt):
        if fmt == "structured":
            return self.structured()
        if fmt == "tabular":
            return self.tabular()
        if fmt == "plotdata":
            return self.plotdata()
        raise DomainError(f"unknown format {fmt!r}")


# ---------------------------------------------------------------------------
# check execution


def _run_checks(checks, report, timings):
    """Run (name, fn) pairs concurrently; assemble results by check name.

    Each fn returns a dict with optional keys certificates / tables /
    series / summaries.  A check that raises is recorded as an error and
    the run continues.
    """
    results = {}

    def wrap(name, fn):
        t0 = time.perf_counter()
        try:
            out = fn() or {}
            return name, out, None, time.perf_counter() - t0
        except Exception as exc:
            return (name, None, f"{type(exc).__name__}: {exc}",
                    time.perf_counter() - t0)

    with ThreadPoolExecutor(max_workers=min(8, max(1, len(checks)))) as pool:
        futures = [pool.submit(wrap, name, fn) for name, fn in checks]
        for fut in futures:
            name, out, err, dt = fut.result()
            timings["checks"][name] = dt
            results[name] = (out, err)

    for name in sorted(results):
        out, err = results[name]
        if err is not None:
            report.errors.append({"check": name, "error": err})
            continue
        for cert in out.get("certificates", ()):
            d = cert.to_dict() if hasattr(cert, "to_dict") else dict(cert)
            d["check"] = name
            report.certificates.append(d)
        report.tables.update(out.get("tables", {}))
        report.series.update(out.get("series", {}))
        report.summaries.update(out.get("summaries", {}))
    report.certificates.sort(key=lambda c: (c["check"], c["bound_name"]))
    report.errors.sort(key=lambda e: e["check"])


def _downgrade(cert, reason):
    """Weaken a passing certificate to inconclusive (sampler quality)."""
    d = cert.to_dict() if hasattr(cert, "to_dict") else dict(cert)
    if d["verdict"] in (PASS, PASS_WITH_SLACK):
        d["verdict"] = INCONCLUSIVE
        d["details"] = dict(d.get("details", {}))
        d["details"]["downgraded"] = reason
    return d


# ---------------------------------------------------------------------------
# transport solve helpers


def _box_for(cfg, mu, default_half):
    half = float(cfg.params.get("box_half", default_half))
    return TruncationBox(np.asarray(mu.center, dtype=float),
                         np.full(mu.dim, half))


def _schedule_for(cfg, default=(0.5, 0.1, 0.05)):
    if cfg.epsilon_schedule is not None:
        return [float(e) for e in cfg.epsilon_schedule]
    return [float(e) for e in cfg.params.get("epsilon_schedule", default)]


def _cache_path(cache_dir, scenario_hash, epsilon, side):
    key = hashlib.sha256(
        f"{scenario_hash}|{epsilon!r}|{side}".encode()).hexdigest()[:20]
    return os.path.join(cache_dir, f"gridmap-{key}.txt")


def _entropic_stage_maps(cfg, mu, nu, box, box_nu=None):
    """Schedule solve with optional on-disk reuse of each stage's lattice."""
    schedule = _schedule_for(cfg)
    side = int(cfg.params.get("side", 96))
    debias = bool(cfg.params.get("debias", True))
    scenario_hash = cfg.content_hash()
    if cfg.cache_dir:
        paths = [_cache_path(cfg.cache_dir, scenario_hash, eps, side)
                 for eps in schedule]
        if all(os.path.exists(p) for p in paths):
            return [brenier.load_grid_map(p) for p in paths], schedule
    maps = brenier.solve_entropic_schedule(mu, nu, schedule, box=box,
                                           box_nu=box_nu, side=side,
                                           debias=debias)
    if cfg.cache_dir:
        os.makedirs(cfg.cache_dir, exist_ok=True)
        for eps, tmap in zip(schedule, maps):
            brenier.save_grid_map(
                _cache_path(cfg.cache_dir, scenario_hash, eps, side), tmap)
    return maps, schedule


def _bound_suite(tmap, alpha, kappa, probes, mu=None, box=None,
                 epsilon_trend=None, lp_power=None):
    certs = [
        verify.check_trace_bound(tmap, alpha, kappa, probes,
                                 epsilon_trend=epsilon_trend),
        verify.check_lipschitz_bound(tmap, alpha, kappa, probes,
                                     epsilon_trend=epsilon_trend),
        verify.check_determinant_bound(tmap, alpha, kappa, probes,
                                       epsilon_trend=epsilon_trend),
    ]
    if lp_power is not None and mu is not None and box is not None:
        certs.append(verify.check_lp_moment_bound(
            tmap, alpha, kappa, lp_power, mu, box=box,
            epsilon_trend=epsilon_trend))
    return certs


def _pair_constants(mu, nu):
    alpha = mu.certificate.alpha if mu.certificate else None
    kappa = nu.certificate.kappa if nu.certificate else None
    if alpha is None or kappa is None:
        raise DomainError("pair lacks analytic convexity constants")
    return alpha, kappa


def _solve_closed_or_radial(cfg, mu, nu):
    solver = cfg.params.get("solver", "auto")
    if solver in ("auto", "closed_form") and mu.kind == "gaussian" \
            and nu.kind == "gaussian":
        return brenier.solve_gaussian(mu, nu)
    if solver in ("auto", "radial") and mu.radial_profile is not None \
            and nu.radial_profile is not None \
            and np.allclose(mu.center, nu.center):
        return brenier.solve_radial(
            mu, nu, r_max=float(cfg.params.get("r_max", 8.0)))
    raise DomainError(f"no closed or radial route for solver={solver!r} "
                      f"on kinds {mu.kind}/{nu.kind}")


# ---------------------------------------------------------------------------
# command implementations


def _direct_margin_check(instance, probes, name):
    out = instance.direct_check(probes)
    margins = np.asarray(out["log_margins"], dtype=float)
    finite = margins[np.isfinite(margins)]
    cert = make_certificate(
        f"{name}_growth_direct", 0.0, -float(finite.min()), 0.0,
        {"solver": "direct"}, int(finite.size),
        details={"negated_margin": True,
                 "median_margin": float(np.median(finite))})
    return cert


def _verify_gaussian(cfg, mu, nu):
    alpha, kappa = _pair_constants(mu, nu)
    tmap = _solve_closed_or_radial(cfg, mu, nu)
    box = _box_for(cfg, mu, 6.0)
    probes = probe_points(mu, box, seed=cfg.seed)
    certs = _bound_suite(tmap, alpha, kappa, probes, mu=mu, box=box,
                         lp_power=float(cfg.params.get("lp_power", 1.0)))
    res = brenier.monge_ampere_residual(tmap, mu, nu, probes)
    return {"certificates": certs,
            "summaries": {"monge_ampere_sup_residual": res.sup_abs}}


def _verify_anisotropic(cfg, built):
    certs, rows, gaps = [], [], []
    for eps, (mu, nu, alpha) in zip(built["epsilons"], built["pairs"]):
        tmap = brenier.solve_gaussian(mu, nu)
        box = TruncationBox.cube(mu.dim, 4.0)
        probes = probe_points(mu, box, grid_per_axis=9, random_count=200,
                              seed=cfg.seed)
        cert = verify.check_lipschitz_bound(tmap, alpha, 1.0, probes)
        certs.append(cert)
        gap = cert.theoretical_rhs - cert.observed
        rows.append([float(eps), cert.observed, cert.theoretical_rhs, gap])
        gaps.append(gap)
    monotone = bool(np.all(np.diff(gaps) <= 1e-12))
    return {
        "certificates": certs,
        "tables": {"lipschitz_gap": {
            "columns": ["epsilon", "observed", "rhs", "gap"], "rows": rows}},
        "series": {"lipschitz_gap_vs_epsilon":
                   [[r[0], r[3]] for r in rows]},
        "summaries": {"lipschitz_gap_monotone": monotone,
                      "lipschitz_gap_limit": gaps[-1] if gaps else None},
    }


def _entropic_bound_check(cfg, mu, nu, alpha, kappa):
    box = _box_for(cfg, mu, 2.6)
    half_nu = float(cfg.params.get("box_half_nu", box.half_widths[0]))
    box_nu = TruncationBox(np.asarray(nu.center, dtype=float),
                           np.full(nu.dim, half_nu))
    maps, schedule = _entropic_stage_maps(cfg, mu, nu, box, box_nu=box_nu)
    probes = probe_points(mu, box, grid_per_axis=13, random_count=400,
                          seed=cfg.seed)
    if mu.singular_tube is not None:
        probes = probes[~mu.singular_tube(probes)]
    trend = []
    for tmap in maps:
        stats = calculus.map_statistics(tmap, probes)
        trend.append(float(stats.determinant.max()))
    rhs = (alpha / kappa) ** (mu.dim / 2.0)
    cert = make_certificate(
        "determinant", rhs, trend[-1],
        float(cfg.params.get("slack", verify.slack_for("entropic_grid"))),
        {"solver": "entropic_grid", "epsilon": schedule[-1],
         "schedule": schedule}, probes.shape[0],
        epsilon_trend=trend,
        details={"alpha": alpha, "kappa": kappa})
    series = {"determinant_vs_epsilon": [[e, v]
                                         for e, v in zip(schedule, trend)]}
    return cert, series, maps, schedule


def _verify_wehrl(cfg, built):
    mu, nu = built["mu"], built["nu"]
    alpha, kappa = _pair_constants(mu, nu)
    if cfg.params.get("solver") == "entropic_grid" or \
            cfg.epsilon_schedule is not None:
        cert, series, _, _ = _entropic_bound_check(cfg, mu, nu, alpha, kappa)
        return {"certificates": [cert], "series": series}
    tmap = _solve_closed_or_radial(cfg, mu, nu)
    # box corners must stay inside the radial map's resolved radius
    box = _box_for(cfg, mu, 2.25)
    probes = probe_points(mu, box, seed=cfg.seed)
    if mu.singular_tube is not None:
        probes = probes[~mu.singular_tube(probes)]
    certs = _bound_suite(tmap, alpha, kappa, probes, mu=mu, box=box,
                         lp_power=1.0)
    return {"certificates": certs}


def _verify_coulomb(cfg, built):
    inst = built["instance"]
    mu = inst.mu
    rng = np.random.default_rng(cfg.seed)
    count = int(cfg.params.get("laplacian_probes", 1500))
    probes = inst.nu.sampler(rng, count)
    keep = ~mu.singular_tube(probes)
    lap = mu.potential_laplacian(probes[keep]) / mu.dim
    cert = make_certificate(
        "potential_laplacian", inst.certificate.alpha, float(lap.max()), 0.0,
        {"solver": "analytic"}, int(keep.sum()),
        details={"off_tube_fraction": float(keep.mean())})
    perm = np.arange(mu.dim).reshape(-1, 2)[::-1].reshape(-1)
    swap_err = float(np.abs(mu.logpdf(probes[keep])
                            - mu.logpdf(probes[keep][:, perm])).max())
    return {"certificates": [cert],
            "summaries": {"exchangeability_error": swap_err}}


def cmd_verify(cfg, report, timings):
    built = scenarios.SCENARIO_BUILDERS[cfg.scenario](cfg.params)
    kind = built["kind"]
    if kind == "gaussian":
        checks = [("bounds", lambda: _verify_gaussian(
            cfg, built["mu"], built["nu"]))]
    elif kind == "anisotropic":
        checks = [("lipschitz_limit", lambda: _verify_anisotropic(cfg, built))]
    elif kind == "wehrl":
        checks = [("bounds", lambda: _verify_wehrl(cfg, built))]
    elif kind in ("fock", "lsh"):
        inst = built["instance"]
        rng = np.random.default_rng(cfg.seed)
        probes = inst.nu.sampler(rng, int(cfg.params.get("probes", 1000)))
        checks = [("growth_direct", lambda: {
            "certificates": [_direct_margin_check(inst, probes, kind)]})]
    elif kind == "coulomb":
        checks = [("laplacian", lambda: _verify_coulomb(cfg, built))]
    else:
        raise DomainError(f"scenario kind {kind!r} has no verify suite; "
                          "use the heatflow command")
    _run_checks(checks, report, timings)


def _geodesic_suite(cfg, mu, nu, tmap, box):
    times = np.linspace(0.0, 1.0, int(cfg.params.get("time_points", 11)))
    geo = majorize.Geodesic(mu, tmap, box,
                            order=int(cfg.params.get("order", 48)))
    tol = float(cfg.params.get("monotonicity_tol", 1e-9))
    geo_report = majorize.geodesic_monotonicity_check(geo, times=times,
                                                      tol=tol)
    worst_drop = 0.0
    scale = 1.0
    series = {}
    for name, seq in sorted(geo_report.values.items()):
        drops = np.maximum(-np.diff(seq), 0.0)
        worst_drop = max(worst_drop, float(drops.max()))
        scale = max(scale, float(np.abs(seq).max()))
        series[f"convex_integral:{name}"] = [
            [float(t), float(v)] for t, v in zip(times, seq)]
    geo_cert = make_certificate(
        "geodesic_monotonicity", 0.0, worst_drop, 0.0,
        {"solver": tmap.provenance}, times.size, atol=tol * scale,
        details={"per_probe_monotone": geo_report.monotone})

    maj_atol = float(cfg.params.get("majorization_atol", 0.0))
    maj = majorize.majorization_from_densities(mu, nu, box, atol=maj_atol)
    maj_cert = make_certificate(
        "majorization", 0.0, maj.worst_margin, 0.0,
        {"solver": tmap.provenance},
        len(maj.margins), atol=maj_atol,
        details={"worst_probe": maj.worst_probe, "margins": maj.margins})

    ent = majorize.entropy_stability_check(mu, nu, tmap, box)
    series["entropy_along"] = [
        [float(t), float(geo.entropy_at(t))] for t in times]
    return {
        "certificates": [geo_cert, maj_cert, ent.certificate],
        "series": series,
        "summaries": {"entropy_source": ent.entropy_source,
                      "entropy_target": ent.entropy_target,
                      "entropy_gap": ent.gap},
    }


def cmd_geodesic(cfg, report, timings):
    built = scenarios.SCENARIO_BUILDERS[cfg.scenario](cfg.params)
    mu, nu = built["mu"], built["nu"]
    tmap = _solve_closed_or_radial(cfg, mu, nu)
    box = _box_for(cfg, mu, 2.25 if built["kind"] == "wehrl" else 6.0)
    checks = [("geodesic", lambda: _geodesic_suite(cfg, mu, nu, tmap, box))]
    _run_checks(checks, report, timings)


def _heatflow_suite(cfg, built):
    f, mu, alpha = built["weight"], built["mu"], built["alpha"]
    rng = np.random.default_rng(cfg.seed)
    count = int(cfg.params.get("particles", 400))
    particles = mu.sampler(rng, count)
    schedule = heatflow.FlowSchedule(
        t_max=float(cfg.params.get("t_max", 8.0)),
        steps=int(cfg.params.get("steps", 64)),
        stepper=cfg.params.get("stepper", "adaptive_rk45"))
    states = heatflow.integrate_flow(
        f, particles, schedule=schedule,
        record_every=int(cfg.params.get("record_every", 4)))
    # Gaussian weights achieve the contraction bound exactly, so the
    # certificate carries the integrator tolerance explicitly
    contraction = heatflow.check_km_contraction(
        states, alpha, f=f,
        atol=float(cfg.params.get("contraction_atol", 1e-6)))
    push = heatflow.km_pushforward_check(states, mu, f=f)
    certs = [contraction, push]
    series = {
        "sup_determinant_vs_t": [
            [float(st.t), float(st.determinants.max())] for st in states],
        "contraction_rhs_vs_t": [
            [float(st.t), heatflow.km_bound_rhs(alpha, st.t, mu.dim)]
            for st in states],
    }
    summaries = {
        "route_agreement": max(float(st.route_agreement()) for st in states),
        "terminal_sup_determinant":
            contraction.details["terminal_sup_det"],
        "tail_error_bar": contraction.details["tail_error_bar"],
    }
    out = {"certificates": certs, "series": series, "summaries": summaries}
    if cfg.params.get("include_table"):
        table = heatflow.flow_table(states)
        out["tables"] = {"flow": {
            "columns": ["t", "particle", *[f"x{i}" for i in range(mu.dim)],
                        "log_det"],
            "rows": table.tolist()}}
    return out


def cmd_heatflow(cfg, report, timings):
    built = scenarios.SCENARIO_BUILDERS[cfg.scenario](cfg.params)
    if built["kind"] != "flow":
        raise DomainError("heatflow needs a flow scenario")
    checks = [("contraction", lambda: _heatflow_suite(cfg, built))]
    _run_checks(checks, report, timings)


def _coulomb_sample_suite(cfg, built):
    inst = built["instance"]
    n = inst.mu.dim
    count = int(cfg.params.get("samples", 2000))
    xs, diag = inst.sample(count, seed=cfg.seed,
                           burn=int(cfg.params.get("burn", 1500)),
                           thin=int(cfg.params.get("thin", 3)))
    rng = np.random.default_rng(cfg.seed + 1)
    ys = inst.nu.sampler(rng, count)
    schedule = _schedule_for(cfg, default=(0.5, 0.2, 0.1))
    tmap = brenier.solve_entropic_sample(xs, ys, schedule[-1],
                                         schedule=schedule)
    queries = xs[:int(cfg.params.get("fit_points", 600))]
    jac, ok = brenier.local_affine_jacobians(
        xs, tmap(xs), queries,
        k=int(cfg.params.get("fit_k", 4 * n + 56)))
    div = np.einsum("mii->m", jac[ok])
    q95 = float(np.quantile(div, 0.95))
    cert = make_certificate(
        "sample_divergence", float(n), q95, None,
        {"solver": "entropic_sample", "epsilon": schedule[-1]},
        int(ok.sum()),
        details={"divergence_mean": float(div.mean()),
                 "fit_ok_fraction": float(ok.mean()),
                 "sampler": diag})
    certs = [cert]
    if diag.get("quality_warning"):
        certs = [_downgrade(cert, diag.get("note", "sampler mixing"))]

    h_nu = -0.5 * n * math.log(
        2.0 * math.pi * math.e / (inst.spec.beta * inst.spec.particles))
    h_mu, ci = majorize.entropy_knn(xs, bootstrap=24, seed=cfg.seed)
    return {
        "certificates": certs,
        "summaries": {
            "entropy_gap_estimate": {
                "value": h_nu - h_mu, "ci": ci,
                "target_entropy": h_nu, "source_entropy_estimate": h_mu,
                "note": "reported as estimate only; no verdict attached"},
            "sampler_diagnostics": diag,
        },
    }


def cmd_scenario(cfg, report, timings):
    built = scenarios.SCENARIO_BUILDERS[cfg.scenario](cfg.params)
    kind = built["kind"]
    checks = []
    if kind == "gaussian":
        mu, nu = built["mu"], built["nu"]
        checks.append(("bounds", lambda: _verify_gaussian(cfg, mu, nu)))
        tmap = brenier.solve_gaussian(mu, nu)
        box = _box_for(cfg, mu, 6.0)
        alpha, kappa = _pair_constants(mu, nu)
        if alpha <= kappa:
            checks.append(("geodesic",
                           lambda: _geodesic_suite(cfg, mu, nu, tmap, box)))
    elif kind == "anisotropic":
        checks.append(("lipschitz_limit",
                       lambda: _verify_anisotropic(cfg, built)))
    elif kind == "wehrl":
        mu, nu = built["mu"], built["nu"]
        checks.append(("bounds", lambda: _verify_wehrl(cfg, built)))
        if not (cfg.params.get("solver") == "entropic_grid"
                or cfg.epsilon_schedule is not None):
            tmap = _solve_closed_or_radial(cfg, mu, nu)
            box = _box_for(cfg, mu, 2.25)
            checks.append(("geodesic",
                           lambda: _geodesic_suite(cfg, mu, nu, tmap, box)))
        else:
            box = _box_for(cfg, mu, 2.6)
            maj_atol = float(cfg.params.get("majorization_atol", 1e-3))
            checks.append(("majorization", lambda: {
                "certificates": [make_certificate(
                    "majorization", 0.0,
                    majorize.majorization_from_densities(
                        mu, nu, box, atol=maj_atol).worst_margin,
                    0.0, {"solver": "quadrature"}, 7, atol=maj_atol)]}))
    elif kind == "coulomb":
        checks.append(("laplacian", lambda: _verify_coulomb(cfg, built)))
        if cfg.params.get("sample_route", True):
            checks.append(("sample_route",
                           lambda: _coulomb_sample_suite(cfg, built)))
    elif kind in ("fock", "lsh"):
        inst = built["instance"]
        rng = np.random.default_rng(cfg.seed)
        probes = inst.nu.sampler(rng, int(cfg.params.get("probes", 1000)))
        checks.append(("growth_direct", lambda: {
            "certificates": [_direct_margin_check(inst, probes, kind)]}))
    elif kind == "flow":
        checks.append(("contraction", lambda: _heatflow_suite(cfg, built)))
    else:
        raise DomainError(f"no suite for scenario kind {kind!r}")
    _run_checks(checks, report, timings)


# ---------------------------------------------------------------------------
# selftest battery


def _selftest_gaussian():
    mu, nu = scenarios.gaussian_pair(2.0, 1.0)
    tmap = brenier.solve_gaussian(mu, nu)
    A = tmap.details["matrix"]
    trace_cert = make_certificate(
        "trace", 1.0, float(np.trace(A)), 0.0,
        {"solver": "closed_form_gaussian"}, 1,
        details={"sharp": True, "gap": abs(float(np.trace(A)) - 1.0)})
    det_cert = make_certificate(
        "determinant", 0.25, float(np.linalg.det(A)), 0.0,
        {"solver": "closed_form_gaussian"}, 1,
        details={"sharp": True, "gap": abs(float(np.linalg.det(A)) - 0.25)})
    return {"certificates": [trace_cert, det_cert]}


def _selftest_anisotropic(seed):
    mu, nu, alpha = scenarios.anisotropic_pair(0.1)
    tmap = brenier.solve_gaussian(mu, nu)
    box = TruncationBox.cube(2, 4.0)
    probes = probe_points(mu, box, grid_per_axis=9, random_count=100,
                          seed=seed)
    cert = verify.check_lipschitz_bound(tmap, alpha, 1.0, probes)
    return {"certificates": [cert]}


def _selftest_quantile():
    mu = measures.gaussian(np.zeros(1), 4.0 * np.eye(1))
    nu = measures.gaussian(np.zeros(1), np.eye(1))
    box = TruncationBox.cube(1, 12.0)
    tmap = brenier.solve_quantile_1d(mu, nu, box, box)
    xs = np.linspace(-3.0, 3.0, 61)[:, None]
    err = float(np.abs(tmap(xs)[:, 0] - xs[:, 0] / 2.0).max())
    cert = make_certificate("quantile_map_error", 1e-4, err, 0.0,
                            {"solver": "quantile_1d"}, xs.shape[0])
    return {"certificates": [cert]}


def _selftest_semigroup(seed):
    msq = polyexp.modulus_squared_poly(scenarios.fock_coefficients(1))
    fam = polyexp.PolyExp.poly_times_gaussian(
        2, msq, B=2.0 * math.pi * np.eye(2))
    rng = np.random.default_rng(seed)
    xs = rng.standard_normal((40, 2))
    closed = semigroup.apply("ornstein_uhlenbeck", fam, 0.7, xs,
                             method="closed_form")
    quad = semigroup.apply("ornstein_uhlenbeck", fam, 0.7, xs,
                           method="gauss_hermite")
    err = float(np.abs(closed.value - quad.value).max())
    cert = make_certificate("semigroup_closed_form_error", 1e-8, err, 0.0,
                            {"solver": "gauss_hermite"}, xs.shape[0])
    return {"certificates": [cert]}


def _selftest_sphere_rule(seed):
    rule = calculus.SphereRule.make(2, angles=32)
    x = np.array([0.3, -0.7])

    def f(p):
        return (p[:, 0] ** 4 + 0.5 * p[:, 0] ** 2 * p[:, 1] ** 2
                + p[:, 1] ** 4)

    def lap(p):
        return 13.0 * (p[:, 0] ** 2 + p[:, 1] ** 2)

    check = calculus.delta_epsilon_limit_check(
        f, float(lap(x[None])[0]), x, [0.4, 0.2, 0.1, 0.05], rule)
    cert = make_certificate(
        "sphere_mean_limit_order", -1.9, -float(check.fitted_order), 0.0,
        {"solver": "sphere_rule"}, 4,
        details={"negated_lower_bound": True,
                 "order": float(check.fitted_order)})
    return {"certificates": [cert]}


def _selftest_wehrl(seed):
    built = scenarios.SCENARIO_BUILDERS["wehrl"]({"degrees": [1]})
    mu, nu = built["mu"], built["nu"]
    tmap = brenier.solve_radial(mu, nu, r_max=8.0)
    box = TruncationBox.cube(2, 2.2)
    probes = probe_points(mu, box, grid_per_axis=13, random_count=200,
                          seed=seed)
    probes = probes[~mu.singular_tube(probes)]
    cert = verify.check_trace_bound(tmap, 2.0 * math.pi, 2.0 * math.pi,
                                    probes)
    return {"certificates": [cert]}


def _selftest_heatflow():
    f, mu, alpha = scenarios.flow_gaussian_weight(0.5)
    grid = TruncationBox.cube(2, 1.5).grid(7)
    schedule = heatflow.FlowSchedule(t_max=6.0, steps=64)
    states = heatflow.integrate_flow(f, grid, schedule=schedule,
                                     record_every=8)
    cert = heatflow.check_km_contraction(states, alpha, f=f, atol=1e-6)
    return {"certificates": [cert]}


def cmd_selftest(cfg, report, timings):
    seed = cfg.seed
    checks = [
        ("a_gaussian_sharpness", _selftest_gaussian),
        ("b_anisotropic", lambda: _selftest_anisotropic(seed)),
        ("c_quantile", _selftest_quantile),
        ("d_semigroup", lambda: _selftest_semigroup(seed)),
        ("e_sphere_rule", lambda: _selftest_sphere_rule(seed)),
        ("f_wehrl_radial", lambda: _selftest_wehrl(seed)),
        ("g_heatflow", _selftest_heatflow),
    ]
    _run_checks(checks, report, timings)


# ---------------------------------------------------------------------------
# driver


_COMMAND_FNS = {
    "verify": cmd_verify,
    "geodesic": cmd_geodesic,
    "heatflow": cmd_heatflow,
    "scenario": cmd_scenario,
    "selftest": cmd_selftest,
}


def run(cfg):
    """Execute a resolved config; returns (RunReport, timings dict)."""
    timings = {"checks": {}}
    t0 = time.perf_counter()
    report = RunReport(config=cfg.canonical(), config_hash=cfg.content_hash())
    _COMMAND_FNS[cfg.command](cfg, report, timings)
    timings["total_s"] = time.perf_counter() - t0
    return report, timings


def emit(report, timings, cfg):
    """Write or print the requested formats; timings never enter a report."""
    if cfg.out_dir:
        os.makedirs(cfg.out_dir, exist_ok=True)
        names = {"structured": "report.json", "tabular": "report.txt",
                 "plotdata": "plotdata.json"}
        for fmt in cfg.formats:
            path = os.path.join(cfg.out_dir, names[fmt])
            with open(path, "w") as fh:
                fh.write(report.render(fmt))
        with open(os.path.join(cfg.out_dir, "timings.json"), "w") as fh:
            json.dump(timings, fh, sort_keys=True, indent=2)
            fh.write("\n")
    else:
        for fmt in cfg.formats:
            sys.stdout.write(report.render(fmt))
        sys.stderr.write(f"timings total_s={timings['total_s']:.3f}\n")


def _parse_args(argv):
    parser = argparse.ArgumentParser(
        prog="transportlab",
        description="transport bound verification runner")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        if name != "selftest":
            p.add_argument("name", nargs="?", default=None,
                           help="registered scenario name")
        p.add_argument("--config", default=None,
                       help="JSON config document")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--format", default=None,
                       help="comma list from structured,tabular,plotdata")
        p.add_argument("--epsilon-schedule", default=None,
                       help="comma list of decreasing epsilons")
        p.add_argument("--cache", default=None,
                       help="directory for grid-map lattice reuse")
    return parser.parse_args(argv)


def _resolve_config(args):
    doc = {}
    if args.config:
        with open(args.config) as fh:
            doc = json.load(fh)
        if not isinstance(doc, dict):
            raise DomainError("config document must be a JSON object")
    scenario = getattr(args, "name", None) or doc.get("scenario") \
        or _DEFAULT_SCENARIO.get(args.command)
    if scenario is None:
        raise DomainError("scenario name required (positional or config)")
    if args.command != "selftest" \
            and scenario not in scenarios.SCENARIO_BUILDERS:
        raise DomainError(f"unknown scenario {scenario!r}; known: "
                          f"{sorted(scenarios.SCENARIO_BUILDERS)}")
    seed = args.seed if args.seed is not None else int(doc.get("seed", 0))
    schedule = None
    if args.epsilon_schedule:
        schedule = tuple(float(v) for v in args.epsilon_schedule.split(","))
    elif doc.get("epsilon_schedule"):
        schedule = tuple(float(v) for v in doc["epsilon_schedule"])
    fmt_spec = args.format or doc.get("format", "structured")
    formats = (tuple(fmt_spec.split(",")) if isinstance(fmt_spec, str)
               else tuple(fmt_spec))
    for fmt in formats:
        if fmt not in FORMATS:
            raise DomainError(f"unknown format {fmt!r}")
    return RunConfig(command=args.command, scenario=scenario,
                     params=dict(doc.get("params", {})), seed=seed,
                     epsilon_schedule=schedule, formats=formats,
                     out_dir=args.out, cache_dir=args.cache)


def main(argv=None):
    try:
        args = _parse_args(argv)
    except SystemExit as exc:
        # argparse exits with status 2 on usage errors, but 2 is reserved
        # for inconclusive runs; report usage problems as execution errors.
        return 0 if exc.code in (0, None) else 3
    try:
        cfg = _resolve_config(args)
        report, timings = run(cfg)
        emit(report, timings, cfg)
        return report.exit_code()
    except Exception as exc:
        sys.stderr.write(f"error: {type(exc).__name__}: {exc}\n")
        return 3


if __name__ == "__main__":
    sys.exit(main())
