"""Bound certificates for transport maps.

Every check produces a BoundCertificate comparing an observed statistic
against a theoretical right-hand side. The verdict rule is directional:

    pass             observed <= rhs + 1e-9 |rhs| + atol
    pass_with_slack  observed <= rhs + slack |rhs| + atol, and the epsilon
                     trend (when present) is non-increasing
    inconclusive     neither, but the provenance is entropic and the trend
                     is decreasing (refining the regularization helps)
    fail             otherwise

Lower-bound theorems are recorded with both sides negated so this single
rule applies; such certificates say so in their details. Checks whose
contract includes an additive tolerance carry it in `atol`, printed next
to the comparison in reports.

Slack defaults by map provenance: exact routes (closed-form, quantile,
radial) get 0, entropic grid maps 5%, entropic sample maps 10%.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import quadrature
from .calculus import map_statistics
from .errors import ConvexityViolationError, DomainError

PASS = "pass"
PASS_WITH_SLACK = "pass_with_slack"
FAIL = "fail"
INCONCLUSIVE = "inconclusive"

DEFAULT_SLACK = {
    "closed_form_gaussian": 0.0,
    "quantile_1d": 0.0,
    "radial": 0.0,
    "entropic_grid": 0.05,
    "entropic_sample": 0.10,
}


def slack_for(provenance):
    return DEFAULT_SLACK.get(provenance, 0.0)


def trend_non_increasing(trend, rtol=1e-9):
    t = np.asarray(trend, dtype=float)
    if t.size < 2:
        return True
    scale = max(1.0, float(np.abs(t).max()))
    return bool(np.all(np.diff(t) <= rtol * scale))


def trend_decreasing(trend, rtol=1e-9):
    t = np.asarray(trend, dtype=float)
    if t.size < 2:
        return False
    scale = max(1.0, float(np.abs(t).max()))
    return bool(t[-1] < t[0] - rtol * scale)


@dataclass(frozen=True)
class BoundCertificate:
    bound_name: str
    theoretical_rhs: float
    observed: float
    slack: float
    verdict: str
    provenance: dict
    probe_count: int
    atol: float = 0.0
    details: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "bound_name": self.bound_name,
            "theoretical_rhs": self.theoretical_rhs,
            "observed": self.observed,
            "slack": self.slack,
            "atol": self.atol,
            "verdict": self.verdict,
            "provenance": _jsonable(self.provenance),
            "probe_count": self.probe_count,
            "details": _jsonable(self.details),
        }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def make_certificate(bound_name, rhs, observed, slack, provenance,
                     probe_count, atol=0.0, epsilon_trend=None, details=None):
    """Assemble a certificate, applying the verdict rule."""
    rhs = float(rhs)
    observed = float(observed)
    details = dict(details or {})
    prov = dict(provenance or {})
    if slack is None:
        slack = slack_for(prov.get("solver", ""))
    if epsilon_trend is not None:
        prov["epsilon_trend"] = [float(v) for v in epsilon_trend]
    entropic = str(prov.get("solver", "")).startswith("entropic")
    trend_ok = epsilon_trend is None or trend_non_increasing(epsilon_trend,
                                                             rtol=1e-6)
    if observed <= rhs + 1e-9 * abs(rhs) + atol:
        verdict = PASS
    elif observed <= rhs + slack * abs(rhs) + atol and trend_ok:
        verdict = PASS_WITH_SLACK
    elif entropic and epsilon_trend is not None and \
            trend_decreasing(epsilon_trend, rtol=1e-6):
        verdict = INCONCLUSIVE
    else:
        verdict = FAIL
    return BoundCertificate(bound_name=bound_name, theoretical_rhs=rhs,
                            observed=observed, slack=float(slack),
                            verdict=verdict, provenance=prov,
                            probe_count=int(probe_count), atol=float(atol),
                            details=details)


# ---------------------------------------------------------------------------
# probe sets


def probe_points(mu, box, grid_per_axis=17, random_count=1000, seed=1234,
                 margin_cells=1):
    """Interior tensor grid plus seeded mu-distributed random points."""
    parts = [box.interior_grid(grid_per_axis, margin_cells=margin_cells)]
    if random_count > 0:
        rng = np.random.default_rng(seed)
        if mu is not None and mu.sampler is not None:
            draws = mu.sampler(rng, random_count)
        elif mu is not None and mu.dim <= 2:
            draws = _grid_multinomial(mu, box, random_count, rng)
        else:
            draws = box.sample_uniform(random_count, rng)
        draws = draws[box.contains(draws)]
        parts.append(draws)
    pts = np.concatenate(parts, axis=0)
    if mu is not None and mu.singular_tube is not None:
        pts = pts[~mu.singular_tube(pts)]
    return pts


def _grid_multinomial(mu, box, count, rng, side=96):
    nodes = box.grid(side)
    w = np.exp(mu.logpdf(nodes))
    w = w / w.sum()
    idx = rng.choice(nodes.shape[0], size=count, p=w)
    cell = 2.0 * box.half_widths / (side - 1)
    return nodes[idx] + (rng.random((count, box.dim)) - 0.5) * cell


# ---------------------------------------------------------------------------
# pair bounds for a transport map between certified densities


def _pair_rhs(alpha, kappa, dim, power):
    if alpha is None or kappa is None:
        raise DomainError("both alpha and kappa are needed for pair bounds")
    if alpha <= 0 or kappa <= 0:
        raise DomainError("alpha and kappa must be positive")
    return float(dim ** power[0] * (alpha / kappa) ** power[1])


def _map_provenance(transport_map):
    prov = {"solver": getattr(transport_map, "provenance", "unknown")}
    eps = getattr(transport_map, "entropic_epsilon", None)
    if eps is not None:
        prov["entropic_epsilon"] = float(eps)
    return prov


def _stats_or_raise(transport_map, probes):
    stats = map_statistics(transport_map, probes)
    if np.any(stats.determinant <= 0):
        bad = int(np.argmax(stats.determinant <= 0))
        raise ConvexityViolationError(
            "transport Jacobian determinant is not positive at a probe",
            probe=np.atleast_2d(probes)[bad])
    return stats


def check_trace_bound(transport_map, alpha, kappa, probes, slack=None,
                      epsilon_trend=None, extra_provenance=None):
    """sup of the map's Jacobian trace against n sqrt(alpha/kappa)."""
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    n = probes.shape[1]
    stats = _stats_or_raise(transport_map, probes)
    rhs = n * np.sqrt(alpha / kappa)
    prov = {**_map_provenance(transport_map), **(extra_provenance or {})}
    if slack is None:
        slack = slack_for(prov["solver"])
    return make_certificate(
        "trace", rhs, float(stats.trace.max()), slack, prov, probes.shape[0],
        epsilon_trend=epsilon_trend,
        details={"alpha": alpha, "kappa": kappa,
                 "max_asymmetry": float(stats.asymmetry.max())})


def check_lipschitz_bound(transport_map, alpha, kappa, probes, slack=None,
                          epsilon_trend=None, extra_provenance=None):
    """sup of the Jacobian operator norm against n sqrt(alpha/kappa)."""
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    n = probes.shape[1]
    stats = _stats_or_raise(transport_map, probes)
    rhs = n * np.sqrt(alpha / kappa)
    prov = {**_map_provenance(transport_map), **(extra_provenance or {})}
    if slack is None:
        slack = slack_for(prov["solver"])
    return make_certificate(
        "lipschitz", rhs, float(stats.operator_norm.max()), slack, prov,
        probes.shape[0], epsilon_trend=epsilon_trend,
        details={"alpha": alpha, "kappa": kappa,
                 "max_asymmetry": float(stats.asymmetry.max())})


def check_determinant_bound(transport_map, alpha, kappa, probes, slack=None,
                            epsilon_trend=None, extra_provenance=None):
    """sup of the Jacobian determinant against (alpha/kappa)^(n/2)."""
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    n = probes.shape[1]
    stats = _stats_or_raise(transport_map, probes)
    rhs = (alpha / kappa) ** (n / 2.0)
    prov = {**_map_provenance(transport_map), **(extra_provenance or {})}
    if slack is None:
        slack = slack_for(prov["solver"])
    return make_certificate(
        "determinant", rhs, float(stats.determinant.max()), slack, prov,
        probes.shape[0], epsilon_trend=epsilon_trend,
        details={"alpha": alpha, "kappa": kappa,
                 "max_asymmetry": float(stats.asymmetry.max())})


def check_lp_moment_bound(transport_map, alpha, kappa, p, mu, box=None,
                          quad_points=None, quad_weights=None, order=32,
                          panels=4, samples=None, slack=None,
                          epsilon_trend=None, extra_provenance=None):
    """L^(p+1)(mu) norm of (trace J)^2 against n^2 alpha / kappa.

    Integrates against mu with a tensor Gauss-Legendre rule on the box for
    dim <= 2; above that the caller supplies mu-distributed samples and the
    integral becomes a sample mean.
    """
    if p <= 0:
        raise DomainError("p must be positive")
    if quad_points is None:
        if samples is not None:
            quad_points = np.atleast_2d(np.asarray(samples, dtype=float))
            quad_weights = np.full(quad_points.shape[0],
                                   1.0 / quad_points.shape[0])
        elif box is not None and mu.dim <= 2:
            pts, w = quadrature.box_gauss_legendre(box, order=order,
                                                   panels=panels)
            dens = np.exp(mu.logpdf(pts))
            quad_points, quad_weights = pts, w * dens
        else:
            raise DomainError("need a box (dim <= 2) or mu samples")
    n = quad_points.shape[1]
    stats = _stats_or_raise(transport_map, quad_points)
    integrand = stats.trace ** (2.0 * (p + 1.0))
    total_mass = float(np.sum(quad_weights))
    moment = float(np.dot(quad_weights, integrand)) / total_mass
    observed = moment ** (1.0 / (p + 1.0))
    rhs = n ** 2 * alpha / kappa
    prov = {**_map_provenance(transport_map), **(extra_provenance or {})}
    if slack is None:
        slack = slack_for(prov["solver"])
    return make_certificate(
        "lp_moment", rhs, observed, slack, prov, quad_points.shape[0],
        epsilon_trend=epsilon_trend,
        details={"alpha": alpha, "kappa": kappa, "p": p,
                 "quadrature_mass": total_mass})
