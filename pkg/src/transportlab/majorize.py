"""Majorization tests, displacement geodesics, and entropy comparisons.

h majorizes g when int phi(g) <= int phi(h) for every convex phi on the
nonnegative reals with phi(0) = 0. We test a finite family of convex probes
(power laws, x log x, hinge functions scaled to the density's range); a pass
is evidence, a failure with positive margin is a disproof up to quadrature
error.

Displacement interpolation rho_t = ((1-t) Id + t T)_# mu is evaluated in
source coordinates: with J_t = (1-t) Id + t DT,

    int phi(rho_t) dx = int phi(rho_mu(x) / det J_t(x)) det J_t(x) dx,

so no inversion of the interpolated map is needed. Entropy is int rho log
rho (the negative differential entropy), computed by quadrature for grid
densities and by nearest-neighbor spacing estimates for samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import digamma

from . import quadrature
from .errors import ConvexityViolationError, DomainError
from .verify import make_certificate


# ---------------------------------------------------------------------------
# convex test family


@dataclass(frozen=True)
class ConvexProbe:
    name: str
    fn: object

    def __call__(self, x):
        return self.fn(np.asarray(x, dtype=float))


def _xlogx(x):
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = x[pos] * np.log(x[pos])
    return out


def default_convex_family(scale=1.0):
    """Convex probes phi with phi(0) = 0, hinges scaled to the density sup."""
    probes = [
        ConvexProbe("xlogx", _xlogx),
        ConvexProbe("square", lambda x: x ** 2),
        ConvexProbe("p32", lambda x: x ** 1.5),
        ConvexProbe("excess_sq", lambda x: np.maximum(x - 1.0, 0.0) ** 2),
    ]
    for c in (0.1, 0.5, 1.0):
        thr = c * scale
        probes.append(ConvexProbe(f"hinge_{c:g}",
                                  lambda x, t=thr: np.maximum(x - t, 0.0)))
    return probes


def _assert_midpoint_convex(probe, lo=0.0, hi=4.0, count=64, seed=0):
    rng = np.random.default_rng(seed)
    a = rng.uniform(lo, hi, count)
    b = rng.uniform(lo, hi, count)
    mid = probe(0.5 * (a + b))
    avg = 0.5 * (probe(a) + probe(b))
    slack = 1e-12 * max(1.0, float(np.abs(avg).max()))
    if np.any(mid > avg + slack):
        raise ConvexityViolationError(
            f"probe {probe.name!r} is not convex on [{lo}, {hi}]")


def convex_integral(probe, density_values, weights):
    """int phi(rho) against the quadrature weights of the probes' locations."""
    return float(np.dot(weights, probe(np.asarray(density_values, float))))


# ---------------------------------------------------------------------------
# majorization check


@dataclass(frozen=True)
class MajorizationReport:
    passed: bool
    margins: dict
    worst_probe: str
    worst_margin: float
    atol: float

    def to_dict(self):
        return {"passed": bool(self.passed), "margins": dict(self.margins),
                "worst_probe": self.worst_probe,
                "worst_margin": self.worst_margin, "atol": self.atol}


def majorization_check(g_values, h_values, weights_g, weights_h, family=None,
                       atol=0.0, check_convexity=True):
    """Test int phi(g) <= int phi(h) + atol over the probe family.

    Values are density evaluations at quadrature nodes carrying `weights_*`
    (Lebesgue weights, not probability weights). Margins are the signed
    violations int phi(g) - int phi(h); all must be <= atol to pass.
    """
    if family is None:
        scale = float(max(np.max(g_values), np.max(h_values)))
        family = default_convex_family(scale)
    margins = {}
    for probe in family:
        if check_convexity:
            _assert_midpoint_convex(probe)
        lhs = convex_integral(probe, g_values, weights_g)
        rhs = convex_integral(probe, h_values, weights_h)
        margins[probe.name] = lhs - rhs
    worst = max(margins, key=lambda k: margins[k])
    return MajorizationReport(passed=bool(margins[worst] <= atol),
                              margins=margins, worst_probe=worst,
                              worst_margin=float(margins[worst]), atol=atol)


def majorization_from_densities(g, h, box, order=48, panels=2, family=None,
                                atol=0.0):
    """Majorization test for two normalized densities on a common box."""
    pts, w = quadrature.box_gauss_legendre(box, order=order, panels=panels)
    return majorization_check(g.pdf(pts), h.pdf(pts), w, w, family=family,
                              atol=atol)


# ---------------------------------------------------------------------------
# displacement geodesics


class Geodesic:
    """Displacement interpolation along a transport map.

    All functionals are pushforward integrals in source coordinates; the
    interpolant's Jacobian is J_t = (1-t) Id + t DT at the source point.
    """

    def __init__(self, mu, transport_map, box, order=48, panels=2):
        if not mu.normalized:
            raise DomainError("geodesics need a normalized source density")
        self.mu = mu
        self.map = transport_map
        self.box = box
        self.points, self.weights = quadrature.box_gauss_legendre(
            box, order=order, panels=panels)
        self.rho_mu = mu.pdf(self.points)
        self.J = transport_map.jacobian(self.points)
        self.J = 0.5 * (self.J + np.swapaxes(self.J, -1, -2))
        self.eye = np.eye(mu.dim)

    def _det_jt(self, t):
        Jt = (1.0 - t) * self.eye + t * self.J
        det = np.linalg.det(Jt)
        if np.any(det <= 0):
            bad = int(np.argmax(det <= 0))
            raise ConvexityViolationError(
                f"interpolant Jacobian is singular at t={t}",
                probe=self.points[bad])
        return det

    def density_along(self, t):
        """rho_t at the displaced points ((1-t) x + t T x), source order."""
        det = self._det_jt(t)
        return self.rho_mu / det

    def convex_integral_at(self, probe, t):
        """int phi(rho_t) via the source-coordinate change of variables."""
        det = self._det_jt(t)
        vals = probe(self.rho_mu / det)
        return float(np.dot(self.weights, vals * det))

    def entropy_at(self, t):
        """int rho_t log rho_t (negative differential entropy)."""
        det = self._det_jt(t)
        mask = self.rho_mu > 0
        ratio = self.rho_mu[mask] / det[mask]
        return float(np.dot(self.weights[mask] * det[mask],
                            _xlogx_vals(ratio)))

    def sup_density(self, t):
        return float(self.density_along(t).max())


def _xlogx_vals(x):
    return x * np.log(x)


@dataclass(frozen=True)
class GeodesicReport:
    times: np.ndarray
    values: dict
    monotone: dict
    passed: bool
    tolerance: float

    def to_dict(self):
        return {"times": [float(t) for t in self.times],
                "values": {k: [float(v) for v in vv]
                           for k, vv in self.values.items()},
                "monotone": {k: bool(v) for k, v in self.monotone.items()},
                "passed": bool(self.passed),
                "tolerance": self.tolerance}


def geodesic_monotonicity_check(geodesic, times=None, family=None, tol=1e-9):
    """Convex functionals along the geodesic must be monotone in t.

    When the endpoint map satisfies the trace bound trace DT <= n (so every
    intermediate-to-later map is volume contracting), each int phi(rho_t)
    is non-decreasing from source to target. Monotone here means
    non-decreasing up to `tol` relative wiggle.
    """
    if times is None:
        times = np.linspace(0.0, 1.0, 11)
    times = np.asarray(times, dtype=float)
    if family is None:
        scale = geodesic.sup_density(0.0)
        family = default_convex_family(scale)
    values = {}
    monotone = {}
    for probe in family:
        seq = np.array([geodesic.convex_integral_at(probe, t) for t in times])
        values[probe.name] = seq
        slack = tol * max(1.0, float(np.abs(seq).max()))
        monotone[probe.name] = bool(np.all(np.diff(seq) >= -slack))
    passed = all(monotone.values())
    return GeodesicReport(times=times, values=values, monotone=monotone,
                          passed=passed, tolerance=tol)


# ---------------------------------------------------------------------------
# entropy


def entropy_quadrature(density, box, order=48, panels=2):
    """int rho log rho over the box (negative differential entropy)."""
    pts, w = quadrature.box_gauss_legendre(box, order=order, panels=panels)
    rho = density.pdf(pts)
    mask = rho > 0
    return float(np.dot(w[mask], rho[mask] * np.log(rho[mask])))


def entropy_knn(samples, k=4, bootstrap=0, seed=0):
    """Nearest-neighbor estimate of int rho log rho from samples.

    Kozachenko-Leonenko differential entropy h, returned negated to match
    the quadrature convention. With bootstrap > 0, returns (value, half_ci)
    using resampled standard error times 1.96.
    """
    samples = np.asarray(samples, dtype=float)
    m, n = samples.shape

    def estimate(pts):
        cnt = pts.shape[0]
        tree = cKDTree(pts)
        d, _ = tree.query(pts, k=k + 1)
        r = d[:, k]
        r = np.maximum(r, 1e-300)
        vol_unit = math.pi ** (n / 2) / math.gamma(n / 2 + 1)
        h = (n * np.mean(np.log(r)) + np.log(vol_unit)
             + digamma(cnt) - digamma(k))
        return -h

    value = estimate(samples)
    if bootstrap <= 0:
        return value
    rng = np.random.default_rng(seed)
    # resampling with replacement duplicates points, which zeroes the
    # k-th neighbor distance and wrecks the log; subsample without
    # replacement and rescale the spread back to the full sample size
    sub = max(k + 2, m // 2)
    reps = np.array([estimate(samples[rng.choice(m, sub, replace=False)])
                     for _ in range(bootstrap)])
    half_ci = 1.96 * float(reps.std(ddof=1)) * math.sqrt(sub / m)
    return value, half_ci


@dataclass(frozen=True)
class EntropyReport:
    entropy_source: float
    entropy_target: float
    gap: float
    stability_rhs: float
    certificate: object = None
    details: dict = field(default_factory=dict)

    def to_dict(self):
        out = {"entropy_source": self.entropy_source,
               "entropy_target": self.entropy_target,
               "gap": self.gap, "stability_rhs": self.stability_rhs,
               "details": dict(self.details)}
        if self.certificate is not None:
            out["certificate"] = self.certificate.to_dict()
        return out


def entropy_stability_check(mu, nu, transport_map, box, box_nu=None, order=48,
                            panels=2, probes=None, slack=None,
                            provenance=None):
    """Entropy gap against the quantitative stability lower bound.

    int rho_nu log rho_nu - int rho_mu log rho_mu
        >= (1 / 2 n^2) int |DT - Id|_F^2 dmu.

    The certificate records the negated inequality (lower bounds are stored
    as upper bounds on the negation): observed = -gap, rhs = -stability_rhs.
    """
    n = mu.dim
    h_mu = entropy_quadrature(mu, box, order=order, panels=panels)
    h_nu = entropy_quadrature(nu, box if box_nu is None else box_nu,
                              order=order, panels=panels)
    pts, w = quadrature.box_gauss_legendre(box, order=order, panels=panels)
    wmu = w * mu.pdf(pts)
    wmu = wmu / wmu.sum()
    if probes is not None:
        pts = np.atleast_2d(np.asarray(probes, dtype=float))
        wmu = np.full(pts.shape[0], 1.0 / pts.shape[0])
    J = transport_map.jacobian(pts)
    frob = ((J - np.eye(n)) ** 2).sum(axis=(1, 2))
    rhs = float(np.dot(wmu, frob)) / (2.0 * n * n)
    gap = h_nu - h_mu
    prov = provenance or {"solver": transport_map.provenance}
    cert = make_certificate("entropy_stability", rhs=-rhs, observed=-gap,
                            slack=slack, provenance=prov,
                            probe_count=pts.shape[0],
                            details={"negated_lower_bound": True,
                                     "entropy_source": h_mu,
                                     "entropy_target": h_nu})
    return EntropyReport(entropy_source=h_mu, entropy_target=h_nu, gap=gap,
                         stability_rhs=rhs, certificate=cert,
                         details={"dim": n})
