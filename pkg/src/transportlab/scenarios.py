"""Worked instances: entire-function growth, log-subharmonic weights,
phase-space Husimi states, and 2-D Coulomb gases.

Each builder assembles a (source, target) density pair whose convexity
certificate is analytic, plus whatever transport-free direct check the
construction admits.  Builders reject inputs that break the standing
hypotheses (non-orthonormal state vectors, weights that are not
log-subharmonic at probe points, coinciding Coulomb particles) rather
than silently producing a pair the theorems do not cover.

Conventions fixed here:
  * entire-function p-norm: ||f||^p = (p / (2 pi s)) * integral of
    (|f(z)| exp(-|z|^2 / (2 s)))^p over C, so ||1|| = 1 for every p, s.
  * Husimi density of a mixed state with Bargmann vectors ft_j:
    rho(q, p) = 2^(-1/2) * sum_j w_j |ft_j(q + i p)|^2 * exp(-pi (q^2 + p^2)),
    one degree of freedom, h = 1.
  * Coulomb gas on C^N, coordinates (Re z_1, Im z_1, ..., Re z_N, Im z_N):
    log density = -beta N sum_j Q(z_j) + beta sum_{i<j} log|z_i - z_j| - log Z.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import measures, polyexp, quadrature
from .errors import (AccuracyError, CertificateConflictError, ConvergenceError,
                     DomainError)
from .measures import ConvexityCertificate, Density, TruncationBox
from .polyexp import PolyExp

__all__ = [
    "FockInstance", "build_fock_instance", "fock_norm",
    "LshInstance", "build_lsh_instance",
    "WehrlState", "fock_coefficients", "gram_matrix", "build_wehrl_instance",
    "glauber_entropy",
    "CoulombSpec", "CoulombInstance", "build_coulomb_instance", "split_rhat",
    "gaussian_pair", "anisotropic_pair", "flow_gaussian_weight",
    "SCENARIO_BUILDERS",
]


# ---------------------------------------------------------------------------
# entire-function growth


def fock_norm(coeffs, p, sigma, order=48, panels=4):
    """p-norm of the entire polynomial sum_k coeffs[k] z^k.

    Monomials get the closed form |c|^p Gamma(m p / 2 + 1) (2 s / p)^(m p / 2);
    everything else falls back to tensor quadrature on a box wide enough that
    the Gaussian tail is negligible at the polynomial's degree.
    """
    c = np.asarray(coeffs, dtype=complex)
    if p <= 0 or sigma <= 0:
        raise DomainError("p and sigma must be positive")
    nz = np.nonzero(c)[0]
    if nz.size == 0:
        raise DomainError("zero entire function has no normalization")
    if nz.size == 1:
        m = int(nz[0])
        amp = abs(c[m]) ** p
        val = amp * math.gamma(m * p / 2.0 + 1.0) * (2.0 * sigma / p) ** (m * p / 2.0)
        return val ** (1.0 / p)
    deg = int(nz[-1])
    half = math.sqrt(sigma) * (math.sqrt(2.0 * deg + 1.0) + 8.0 / math.sqrt(p))
    box = TruncationBox.cube(2, half)
    pts, wts = quadrature.box_gauss_legendre(box, order=order, panels=panels)
    z = pts[:, 0] + 1j * pts[:, 1]
    vals = np.abs(np.polynomial.polynomial.polyval(z, c))
    integrand = vals ** p * np.exp(-p * (pts ** 2).sum(axis=1) / (2.0 * sigma))
    total = p / (2.0 * math.pi * sigma) * float(wts @ integrand)
    return total ** (1.0 / p)


@dataclass(frozen=True)
class FockInstance:
    """Growth-bound pair for an entire polynomial of unit p-norm."""

    p: float
    sigma: float
    coeffs: tuple
    mu: Density
    nu: Density
    certificate: ConvexityCertificate

    def direct_check(self, z):
        """Bound |f(z)| <= exp(|z|^2 / (2 sigma)) without any transport.

        Accepts complex points or an (m, 2) real array; returns log-scale
        margins |z|^2/(2 sigma) - log|f(z)| (never negative when the bound
        holds; +inf at zeros of f).
        """
        z = np.asarray(z)
        if z.ndim == 2 and z.shape[1] == 2 and not np.iscomplexobj(z):
            z = z[:, 0] + 1j * z[:, 1]
        z = np.atleast_1d(z).astype(complex)
        fvals = np.abs(np.polynomial.polynomial.polyval(z, np.asarray(self.coeffs)))
        with np.errstate(divide="ignore"):
            logf = np.log(fvals)
        margins = np.abs(z) ** 2 / (2.0 * self.sigma) - logf
        return {
            "points": z,
            "log_margins": margins,
            "min_margin": float(margins.min()),
            "passed": bool(margins.min() >= -1e-9),
        }

    def equality_points(self):
        """Points where the growth bound is tight (origin for f = 1)."""
        c = np.asarray(self.coeffs)
        if np.count_nonzero(c) == 1 and c[0] != 0:
            return np.array([0.0 + 0.0j])
        return np.array([], dtype=complex)


def build_fock_instance(p, sigma, entire_poly, normalize=True):
    """Pair (|f|^p gamma_{sigma/p}, gamma_{sigma/p}) for a unit-norm entire f.

    The source potential has Laplacian exactly 2 p / sigma away from the
    zeros of f (log|f| is harmonic there), so alpha = kappa = p / sigma and
    the growth bound |f| <= exp(|z|^2 / (2 sigma)) is the transport
    determinant bound specialized to this pair.
    """
    p = float(p)
    sigma = float(sigma)
    coeffs = np.asarray(entire_poly, dtype=complex)
    if not np.any(coeffs):
        raise DomainError("zero entire function rejected")
    if normalize:
        coeffs = coeffs / fock_norm(coeffs, p, sigma)
    else:
        norm = fock_norm(coeffs, p, sigma)
        if abs(norm - 1.0) > 1e-8:
            raise DomainError(f"entire function has norm {norm:.6g}, expected 1")
    coeffs.setflags(write=False)

    gam = p / sigma          # inverse variance of gamma_{sigma/p}
    cert = ConvexityCertificate(alpha=gam, kappa=gam, provenance="analytic")
    nu = measures.gaussian(np.zeros(2), (sigma / p) * np.eye(2))

    log_gauss_const = -math.log(2.0 * math.pi * sigma / p)

    def log_density(x):
        z = x[:, 0] + 1j * x[:, 1]
        fvals = np.abs(np.polynomial.polynomial.polyval(z, coeffs))
        with np.errstate(divide="ignore"):
            logf = np.where(fvals > 0, np.log(np.maximum(fvals, 1e-300)), -np.inf)
        return (p * logf - gam * (x ** 2).sum(axis=1) / 2.0 + log_gauss_const)

    def grad_log(x):
        z = x[:, 0] + 1j * x[:, 1]
        _, g, _ = polyexp.holomorphic_log_derivs(coeffs, z, power=p)
        return g - gam * x

    def hess_log(x):
        z = x[:, 0] + 1j * x[:, 1]
        _, _, h = polyexp.holomorphic_log_derivs(coeffs, z, power=p)
        return h - gam * np.eye(2)[None, :, :]

    scale = float(np.abs(coeffs).max())

    def singular_tube(x):
        z = x[:, 0] + 1j * x[:, 1]
        fvals = np.abs(np.polynomial.polynomial.polyval(z, coeffs))
        return fvals <= 1e-6 * scale

    family = None
    if abs(p - round(p)) < 1e-12 and int(round(p)) % 2 == 0:
        # |f|^p is itself a polynomial for even integer p
        msq = polyexp.modulus_squared_poly(coeffs)
        fam = PolyExp.poly_times_gaussian(2, msq, B=gam * np.eye(2),
                                          c=log_gauss_const)
        for _ in range(int(round(p)) // 2 - 1):
            fam = fam.multiply(PolyExp.poly_times_gaussian(2, msq))
        family = fam

    mu = Density(2, log_density, grad_log=grad_log, hess_log=hess_log,
                 normalized=True, support_note="vanishes_at_zeros_of_f",
                 certificate=cert, singular_tube=singular_tube,
                 kind="fock_growth",
                 params={"p": p, "sigma": sigma,
                         "coeffs_re": coeffs.real.tolist(),
                         "coeffs_im": coeffs.imag.tolist()},
                 family=family)
    return FockInstance(p=p, sigma=sigma, coeffs=tuple(coeffs), mu=mu, nu=nu,
                        certificate=cert)


# ---------------------------------------------------------------------------
# log-subharmonic weights


@dataclass(frozen=True)
class LshInstance:
    """Growth-bound pair for a log-subharmonic weight of unit gamma-mass."""

    beta: float
    dim: int
    mu: Density
    nu: Density
    certificate: ConvexityCertificate
    log_weight: object = field(repr=False)

    def direct_check(self, x):
        """Bound f(x) <= (beta + 1)^(n/2) exp(|x|^2 / 2), transport-free."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        margins = (0.5 * self.dim * math.log(self.beta + 1.0)
                   + 0.5 * (x ** 2).sum(axis=1) - self.log_weight(x))
        return {
            "points": x,
            "log_margins": margins,
            "min_margin": float(np.min(margins)),
            "passed": bool(np.min(margins) >= -1e-9),
        }


def _probe_subharmonicity(density, beta, dim, probes, seed, tol=1e-8):
    rng = np.random.default_rng(seed)
    pts = rng.standard_normal((probes, dim)) * 1.5
    if density.singular_tube is not None:
        pts = pts[~density.singular_tube(pts)]
    # Delta log f = Delta log rho + n  (rho = f * gamma)
    lap = np.trace(density.hess_log(pts), axis1=-2, axis2=-1) + dim
    worst = float(lap.min())
    if worst < -beta * dim - tol * max(1.0, abs(beta * dim)):
        raise CertificateConflictError(
            f"weight fails (-beta n)-log-subharmonicity: Delta log f = "
            f"{worst:.6g} < {-beta * dim:.6g} at a probe point")
    return worst


def build_lsh_instance(weight, beta=0.0, dim=2, probes=256, seed=717,
                       singular_tube=None):
    """Pair (f gamma, gamma) for f >= 0 with gamma-mass 1 and
    Delta log f >= -beta n.

    `weight` is either a PolyExp (normalized exactly through Gaussian moment
    integrals) or a pair (log_f, mass) of a vectorized log-weight and its
    known gamma-mass.  Subharmonicity is probed at `probes` Gaussian points;
    violations raise rather than producing an uncovered instance.
    """
    beta = float(beta)
    if beta < 0:
        raise DomainError("beta must be nonnegative")
    dim = int(dim)
    gauss_const = -0.5 * dim * math.log(2.0 * math.pi)

    if isinstance(weight, PolyExp):
        if weight.dim != dim:
            raise DomainError("weight dimension disagrees with dim")
        unit_poly = {(0,) * dim: 1.0}
        mass = float(weight.gamma_weighted_expectations([unit_poly])[0])
        if not (mass > 0 and np.isfinite(mass)):
            raise DomainError("weight has nonpositive gamma-mass")
        fam = weight.scaled(1.0 / mass)
        gamma_part = PolyExp.quadratic_exponent(dim, beta=1.0, c=gauss_const)
        family = fam.multiply(gamma_part)

        def log_weight(x):
            x = np.atleast_2d(np.asarray(x, dtype=float))
            val, _, _ = fam.log_derivs(x)
            return val

        def log_density(x):
            val, _, _ = family.log_derivs(x)
            return val

        def grad_log(x):
            _, g, _ = family.log_derivs(x)
            return g

        def hess_log(x):
            _, _, h = family.log_derivs(x)
            return h
    else:
        log_f, mass = weight
        log_mass = math.log(float(mass))
        family = None

        def log_weight(x):
            x = np.atleast_2d(np.asarray(x, dtype=float))
            return np.asarray(log_f(x), dtype=float) - log_mass

        def log_density(x):
            return log_weight(x) - 0.5 * (x ** 2).sum(axis=1) + gauss_const

        grad_log = None
        hess_log = None

    cert = ConvexityCertificate(alpha=beta + 1.0, kappa=1.0,
                                provenance="analytic")
    mu = Density(dim, log_density, grad_log=grad_log, hess_log=hess_log,
                 normalized=True, certificate=cert,
                 singular_tube=singular_tube, kind="lsh_growth",
                 params={"beta": beta}, family=family)
    nu = measures.gaussian(np.zeros(dim), np.eye(dim))
    _probe_subharmonicity(mu, beta, dim, probes, seed)
    return LshInstance(beta=beta, dim=dim, mu=mu, nu=nu, certificate=cert,
                       log_weight=log_weight)


# ---------------------------------------------------------------------------
# Husimi densities of finite-rank states


@dataclass(frozen=True)
class WehrlState:
    """Finite-rank mixed state given by Bargmann-side polynomial vectors.

    components[j] is the coefficient tuple of the j-th vector's monomial
    expansion ft_j(z) = sum_m c_m z^m; weights are the mixture weights.
    center = (q0, p0) displaces the state in phase space.
    """

    weights: tuple
    components: tuple
    center: tuple = (0.0, 0.0)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or w.size == 0:
            raise DomainError("weights must be a nonempty vector")
        if np.any(w < -1e-15):
            raise DomainError("mixture weights must be nonnegative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise DomainError(f"mixture weights sum to {w.sum():.12g}, not 1")
        if len(self.components) != w.size:
            raise DomainError("weights and components disagree in length")
        for c in self.components:
            if not np.any(np.asarray(c, dtype=complex)):
                raise DomainError("zero state vector rejected")
        if len(self.center) != 2:
            raise DomainError("only one degree of freedom is supported")

    def max_degree(self):
        return max(len(c) - 1 for c in self.components)


def fock_coefficients(m):
    """Bargmann coefficients of the m-th number state: one monomial with
    c_m = 2^(1/4) pi^(m/2) / sqrt(m!)."""
    if m < 0:
        raise DomainError("number state index must be nonnegative")
    c = np.zeros(int(m) + 1, dtype=complex)
    c[m] = 2.0 ** 0.25 * math.pi ** (m / 2.0) / math.sqrt(math.factorial(int(m)))
    return c


def gram_matrix(state):
    """Exact pairwise overlaps of the state vectors.

    Monomial moments give G_jk = 2^(-1/2) sum_a conj(c_k[a]) c_j[a] a!/pi^a;
    the vectors are admissible only when G is the identity.
    """
    comps = [np.asarray(c, dtype=complex) for c in state.components]
    r = len(comps)
    G = np.zeros((r, r), dtype=complex)
    for j in range(r):
        for k in range(r):
            amax = min(comps[j].size, comps[k].size)
            a = np.arange(amax)
            moments = np.array([math.factorial(int(i)) / math.pi ** int(i)
                                for i in a])
            G[j, k] = (2.0 ** -0.5
                       * np.sum(np.conjugate(comps[k][:amax]) * comps[j][:amax]
                                * moments))
    return G


def glauber_entropy(d=1):
    """Differential entropy integral rho log rho of a coherent-state
    Husimi density with d degrees of freedom (h = 1)."""
    return -float(d)


def build_wehrl_instance(state, probe_grid=64, mass_tol=1e-6):
    """Husimi density pair (rho_state, displaced Gaussian) with
    alpha = kappa = 2 pi.

    Rejects non-orthonormal component vectors (Gram off-identity beyond
    1e-8) and densities whose Husimi values exceed 1 at probe points; checks
    the total mass by quadrature before trusting the analytic normalization.
    """
    if not isinstance(state, WehrlState):
        raise DomainError("expected a WehrlState")
    G = gram_matrix(state)
    dev = float(np.abs(G - np.eye(G.shape[0])).max())
    if dev > 1e-8:
        raise DomainError(
            f"state vectors are not orthonormal (Gram deviation {dev:.3e})")

    weights = np.asarray(state.weights, dtype=float)
    comps = [np.asarray(c, dtype=complex) for c in state.components]
    center = np.array([state.center[0], -state.center[1]])
    centered = bool(np.all(center == 0.0))

    parts = [PolyExp.poly_times_gaussian(
        2, polyexp.modulus_squared_poly(c), B=2.0 * math.pi * np.eye(2))
        for c in comps]
    keep = weights > 0
    fam = PolyExp.mixture([p for p, k in zip(parts, keep) if k],
                          (2.0 ** -0.5) * weights[keep])

    if centered:
        log_density = lambda x: fam.log_derivs(x)[0]
        grad_log = lambda x: fam.log_derivs(x)[1]
        hess_log = lambda x: fam.log_derivs(x)[2]
        family = fam
    else:
        def log_density(x):
            return fam.log_derivs(x - center)[0]

        def grad_log(x):
            return fam.log_derivs(x - center)[1]

        def hess_log(x):
            return fam.log_derivs(x - center)[2]

        family = None

    # mass and pointwise-bound probes on a box covering the state
    half = math.sqrt((state.max_degree() + 4.0) / math.pi) + 1.5
    box = TruncationBox(center, np.full(2, half))
    pts, wts = quadrature.box_gauss_legendre(box, order=48, panels=3)
    vals = np.exp(log_density(pts))
    mass = float(wts @ vals)
    if abs(mass - 1.0) > mass_tol:
        raise AccuracyError(
            f"Husimi mass {mass:.8f} deviates from 1 beyond {mass_tol}",
            estimate=abs(mass - 1.0))
    grid = box.grid(probe_grid)
    peak = float(np.exp(log_density(grid)).max())
    if peak > 1.0 + 1e-9:
        raise DomainError(
            f"Husimi density exceeds 1 at a probe point (max {peak:.6g})")

    radial_profile = None
    if centered and all(np.count_nonzero(c) == 1 for c in comps):
        degs = [int(np.nonzero(c)[0][0]) for c in comps]
        amps = [abs(c[d]) ** 2 for c, d in zip(comps, degs)]

        def radial_profile(r, _w=weights, _d=degs, _a=amps):
            r = np.asarray(r, dtype=float)
            out = np.zeros_like(r)
            for w, d, a in zip(_w, _d, _a):
                out = out + w * (2.0 ** -0.5) * a * r ** (2 * d)
            return out * np.exp(-math.pi * r ** 2)

    poly_scale = max(float(np.abs(c).max()) ** 2 for c in comps)

    def singular_tube(x):
        u = x - center
        z = u[:, 0] + 1j * u[:, 1]
        tot = np.zeros(z.shape[0])
        for w, c in zip(weights, comps):
            tot += w * np.abs(np.polynomial.polynomial.polyval(z, c)) ** 2
        return tot <= 1e-10 * poly_scale

    cert = ConvexityCertificate(alpha=2.0 * math.pi, kappa=2.0 * math.pi,
                                provenance="analytic")
    mu = Density(2, log_density, grad_log=grad_log, hess_log=hess_log,
                 normalized=True, certificate=cert,
                 singular_tube=singular_tube, radial_profile=radial_profile,
                 center=center, kind="husimi",
                 params={"weights": weights.tolist(),
                         "degrees": [len(c) - 1 for c in comps],
                         "center": list(state.center)},
                 family=family)
    nu = measures.gaussian(center, np.eye(2) / (2.0 * math.pi))
    return mu, nu, cert


# ---------------------------------------------------------------------------
# 2-D Coulomb gas


@dataclass(frozen=True)
class CoulombSpec:
    """N particles in C with confinement Q and inverse temperature beta.

    confinement is "quadratic" (Q(z) = |z|^2 / 2) or a coefficient sequence
    (a_1, a_2, ...) for Q(z) = sum_k a_k |z|^(2k); kappa2 is the declared
    lower bound on the Hessian of Q.
    """

    particles: int
    beta: float = 1.0
    confinement: object = "quadratic"
    kappa2: float = 1.0

    def __post_init__(self):
        if self.particles < 1:
            raise DomainError("need at least one particle")
        if self.particles > 3:
            raise DomainError("only N <= 3 is supported")
        if self.beta <= 0:
            raise DomainError("beta must be positive")
        if self.kappa2 <= 0:
            raise DomainError("kappa2 must be positive")

    @property
    def dim(self):
        return 2 * self.particles


def _confinement_derivs(spec, pts2d):
    """Q, grad Q, hess Q per 2-D particle position."""
    s = (pts2d ** 2).sum(axis=1)
    if isinstance(spec.confinement, str):
        if spec.confinement != "quadratic":
            raise DomainError(f"unknown confinement {spec.confinement!r}")
        q = 0.5 * s
        grad = pts2d
        hess = np.broadcast_to(np.eye(2), (pts2d.shape[0], 2, 2)).copy()
        return q, grad, hess
    a = np.asarray(spec.confinement, dtype=float)
    ks = np.arange(1, a.size + 1)
    powers = s[:, None] ** (ks - 1)
    q = (a * powers * s[:, None]).sum(axis=1)
    g1 = (a * ks * powers).sum(axis=1)                       # dQ/ds
    g2 = (a[1:] * ks[1:] * (ks[1:] - 1)
          * s[:, None] ** (ks[1:] - 2)).sum(axis=1) if a.size > 1 else 0.0
    grad = 2.0 * g1[:, None] * pts2d
    outer = np.einsum("mi,mj->mij", pts2d, pts2d)
    hess = 2.0 * g1[:, None, None] * np.eye(2) + 4.0 * np.atleast_1d(g2)[:, None, None] * outer
    return q, grad, hess


class CoulombInstance:
    """Gas law pair with analytic derivatives and a chain sampler.

    The source certificate only carries alpha: the pairwise interaction is
    harmonic away from collisions, so the potential Laplacian equals
    n * kappa2 * beta * N exactly off the diagonal tube, while its Hessian
    has no useful lower bound there.
    """

    def __init__(self, spec, diag_width=1e-6):
        self.spec = spec
        self.diag_width = float(diag_width)
        N, beta = spec.particles, spec.beta
        n = spec.dim
        strength = spec.kappa2 * beta * N

        self.certificate = ConvexityCertificate(
            alpha=strength, kappa=None, provenance="analytic")
        self.target_certificate = ConvexityCertificate(
            alpha=(strength if spec.confinement == "quadratic" else None),
            kappa=strength, provenance="analytic")

        self.mu = Density(
            n, self._log_density, grad_log=self._grad_log,
            hess_log=self._hess_log, normalized=False,
            support_note="vanishes_on_particle_diagonal",
            certificate=self.certificate, singular_tube=self._singular_tube,
            kind="coulomb_gas",
            params={"particles": N, "beta": beta, "kappa2": spec.kappa2})
        self.mu.sampler = self._density_sampler

        if spec.confinement == "quadratic":
            self.nu = measures.gaussian(np.zeros(n), np.eye(n) / (beta * N))
        else:
            self.nu = Density(
                n, self._target_log_density, normalized=False,
                certificate=self.target_certificate, kind="coulomb_target",
                params={"particles": N, "beta": beta})
            self.nu = self.nu.normalized_on(
                TruncationBox.cube(n, 6.0 / math.sqrt(beta * N)))
        self.last_diagnostics = None

    # density pieces --------------------------------------------------------

    def _split(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return x.reshape(x.shape[0], self.spec.particles, 2)

    def _pair_indices(self):
        N = self.spec.particles
        return [(i, j) for i in range(N) for j in range(i + 1, N)]

    def _target_log_density(self, x):
        pts = self._split(x)
        N, beta = self.spec.particles, self.spec.beta
        flat = pts.reshape(-1, 2)
        q, _, _ = _confinement_derivs(self.spec, flat)
        return -beta * N * q.reshape(-1, N).sum(axis=1)

    def _log_density(self, x):
        pts = self._split(x)
        beta = self.spec.beta
        out = self._target_log_density(x)
        for i, j in self._pair_indices():
            d = pts[:, i, :] - pts[:, j, :]
            r2 = (d ** 2).sum(axis=1)
            with np.errstate(divide="ignore"):
                out = out + 0.5 * beta * np.log(r2)
        return out

    def _grad_log(self, x):
        pts = self._split(x)
        N, beta = self.spec.particles, self.spec.beta
        flat = pts.reshape(-1, 2)
        _, gq, _ = _confinement_derivs(self.spec, flat)
        grad = -beta * N * gq.reshape(pts.shape)
        for i, j in self._pair_indices():
            d = pts[:, i, :] - pts[:, j, :]
            r2 = (d ** 2).sum(axis=1, keepdims=True)
            grad[:, i, :] += beta * d / r2
            grad[:, j, :] -= beta * d / r2
        return grad.reshape(x.shape[0] if x.ndim == 2 else 1, -1)

    def _hess_log(self, x):
        pts = self._split(x)
        m = pts.shape[0]
        N, beta = self.spec.particles, self.spec.beta
        n = self.spec.dim
        flat = pts.reshape(-1, 2)
        _, _, hq = _confinement_derivs(self.spec, flat)
        H = np.zeros((m, n, n))
        for jp in range(N):
            H[:, 2 * jp:2 * jp + 2, 2 * jp:2 * jp + 2] = \
                -beta * N * hq.reshape(m, N, 2, 2)[:, jp]
        for i, j in self._pair_indices():
            d = pts[:, i, :] - pts[:, j, :]
            r2 = (d ** 2).sum(axis=1)[:, None, None]
            outer = np.einsum("mi,mj->mij", d, d)
            blk = beta * (np.eye(2) / r2 - 2.0 * outer / r2 ** 2)
            si, sj = slice(2 * i, 2 * i + 2), slice(2 * j, 2 * j + 2)
            H[:, si, si] += blk
            H[:, sj, sj] += blk
            H[:, si, sj] -= blk
            H[:, sj, si] -= blk
        return H

    def _min_pair_distance(self, x):
        pts = self._split(x)
        if self.spec.particles == 1:
            return np.full(pts.shape[0], np.inf)
        dists = [np.sqrt(((pts[:, i, :] - pts[:, j, :]) ** 2).sum(axis=1))
                 for i, j in self._pair_indices()]
        return np.min(dists, axis=0)

    def _singular_tube(self, x):
        return self._min_pair_distance(np.atleast_2d(x)) < self.diag_width

    # sampling ----------------------------------------------------------------

    def sample(self, size, seed=0, chains=4, burn=1500, thin=3, step=None,
               rhat_limit=1.1):
        """Random-walk chain draws from the gas; returns (samples, diagnostics).

        diagnostics carry the split-chain mixing statistic and acceptance
        rate; rhat above `rhat_limit` sets quality_warning instead of
        raising, so downstream checks can downgrade to inconclusive.
        """
        rng = np.random.default_rng(seed)
        spec = self.spec
        n = spec.dim
        scale = 1.0 / math.sqrt(spec.beta * spec.particles)
        if step is None:
            step = 0.45 * scale
        per_chain = -(-int(size) // chains)
        state = 1.5 * scale * rng.standard_normal((chains, n))
        bad = self._min_pair_distance(state) < 1e-6
        while np.any(bad):
            state[bad] = 1.5 * scale * rng.standard_normal((int(bad.sum()), n))
            bad = self._min_pair_distance(state) < 1e-6
        logp = self._log_density(state)
        draws = np.empty((chains, per_chain, n))
        accepted = 0
        total = 0
        for it in range(burn + per_chain * thin):
            prop = state + step * rng.standard_normal((chains, n))
            ok = self._min_pair_distance(prop) >= 1e-8
            logp_prop = np.where(ok, self._log_density(prop), -np.inf)
            take = np.log(rng.random(chains)) < logp_prop - logp
            state = np.where(take[:, None], prop, state)
            logp = np.where(take, logp_prop, logp)
            accepted += int(take.sum())
            total += chains
            if it >= burn and (it - burn) % thin == 0:
                draws[:, (it - burn) // thin, :] = state
        rhat = split_rhat(draws)
        diagnostics = {
            "rhat": float(rhat),
            "acceptance": accepted / total,
            "chains": chains,
            "per_chain": per_chain,
            "quality_warning": bool(rhat > rhat_limit),
        }
        if diagnostics["quality_warning"]:
            diagnostics["note"] = (
                f"split-chain statistic {rhat:.3f} exceeds {rhat_limit}; "
                "treat sampled conclusions as inconclusive")
        self.last_diagnostics = diagnostics
        samples = draws.reshape(-1, n)
        rng.shuffle(samples)
        return samples[:int(size)], diagnostics

    def _density_sampler(self, rng, size):
        seed = int(rng.integers(0, 2 ** 63 - 1))
        samples, _ = self.sample(size, seed=seed)
        return samples


def split_rhat(draws):
    """Split-chain mixing statistic, maximized over coordinates.

    draws has shape (chains, length, dim); each chain is halved, and the
    statistic compares between-sequence to within-sequence variance.
    """
    chains, length, dim = draws.shape
    if length < 4:
        raise DomainError("need at least 4 draws per chain")
    half = length // 2
    seqs = np.concatenate([draws[:, :half, :], draws[:, half:2 * half, :]],
                          axis=0)
    means = seqs.mean(axis=1)
    variances = seqs.var(axis=1, ddof=1)
    W = variances.mean(axis=0)
    B = half * means.var(axis=0, ddof=1)
    var_plus = (half - 1) / half * W + B / half
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.sqrt(var_plus / W)
    r = np.where(W <= 0, 1.0, r)
    return float(np.max(r))


def build_coulomb_instance(spec, diag_width=1e-6):
    if not isinstance(spec, CoulombSpec):
        spec = CoulombSpec(**dict(spec))
    return CoulombInstance(spec, diag_width=diag_width)


# ---------------------------------------------------------------------------
# closed-form pairs for sharpness and limit studies


def gaussian_pair(sigma_source, sigma_target, dim=2):
    """Isotropic pair N(0, s0^2 I) -> N(0, s1^2 I); the transport trace and
    determinant bounds are equalities for every such pair."""
    mu = measures.gaussian(np.zeros(dim), sigma_source ** 2 * np.eye(dim))
    nu = measures.gaussian(np.zeros(dim), sigma_target ** 2 * np.eye(dim))
    return mu, nu


def anisotropic_pair(epsilon, dim=2):
    """Pair N(0, S^2) -> N(0, I) with S = diag(1/n, 1/eps, ..., 1/eps).

    The transport map is x -> S^(-1) x with operator norm exactly n, while
    the Lipschitz bound evaluates to n sqrt(alpha) with
    alpha = (n^2 + (n-1) eps^2) / n; the gap shrinks as eps decreases but
    never closes, which is the sense in which the bound's dimensional factor
    is asymptotically tight.
    """
    if epsilon <= 0:
        raise DomainError("epsilon must be positive")
    n = int(dim)
    diag = np.full(n, 1.0 / epsilon)
    diag[0] = 1.0 / n
    mu = measures.gaussian(np.zeros(n), np.diag(diag ** 2))
    nu = measures.gaussian(np.zeros(n), np.eye(n))
    alpha = (n ** 2 + (n - 1) * epsilon ** 2) / n
    mu.certificate = ConvexityCertificate(alpha=alpha, kappa=None,
                                          provenance="analytic")
    return mu, nu, alpha


def flow_gaussian_weight(sigma, dim=2):
    """Gaussian-to-Gaussian interpolation data: the weight f = d mu / d gamma
    for mu = N(0, sigma^2 I), as an exact quadratic-exponent family."""
    if sigma <= 0:
        raise DomainError("sigma must be positive")
    beta = 1.0 / sigma ** 2 - 1.0
    f = PolyExp.quadratic_exponent(dim, beta=beta, c=-dim * math.log(sigma))
    mu = measures.gaussian(np.zeros(dim), sigma ** 2 * np.eye(dim))
    alpha = 1.0 / sigma ** 2
    return f, mu, alpha


# ---------------------------------------------------------------------------
# registry used by the command line driver


def _scenario_gaussian(params):
    mu, nu = gaussian_pair(params.get("sigma_source", 2.0),
                           params.get("sigma_target", 1.0),
                           dim=params.get("dim", 2))
    return {"kind": "gaussian", "mu": mu, "nu": nu}


def _scenario_anisotropic(params):
    eps_list = params.get("epsilons", [1.0, 0.1, 0.01])
    rows = [anisotropic_pair(e, dim=params.get("dim", 2)) for e in eps_list]
    return {"kind": "anisotropic", "epsilons": list(eps_list), "pairs": rows}


def _scenario_wehrl(params):
    weights = params.get("weights", [1.0])
    degrees = params.get("degrees", [1])
    state = WehrlState(tuple(weights),
                       tuple(tuple(fock_coefficients(d)) for d in degrees),
                       center=tuple(params.get("center", (0.0, 0.0))))
    mu, nu, cert = build_wehrl_instance(state)
    return {"kind": "wehrl", "state": state, "mu": mu, "nu": nu,
            "certificate": cert}


def _scenario_coulomb(params):
    spec = CoulombSpec(particles=params.get("particles", 2),
                       beta=params.get("beta", 1.0),
                       confinement=params.get("confinement", "quadratic"),
                       kappa2=params.get("kappa2", 1.0))
    inst = build_coulomb_instance(spec)
    return {"kind": "coulomb", "instance": inst, "mu": inst.mu, "nu": inst.nu}


def _scenario_fock(params):
    inst = build_fock_instance(params.get("p", 2.0), params.get("sigma", 1.0),
                               params.get("coefficients", [0.0, 1.0]))
    return {"kind": "fock", "instance": inst, "mu": inst.mu, "nu": inst.nu}


def _scenario_lsh(params):
    dim = params.get("dim", 2)
    poly = params.get("poly")
    if poly is None:
        poly = {(2, 0): 1.0 / dim, (0, 2): 1.0 / dim}
    else:
        poly = {tuple(int(k) for k in key.split(",")): float(v)
                for key, v in poly.items()}
    weight = PolyExp.poly_times_gaussian(dim, poly)
    inst = build_lsh_instance(weight, beta=params.get("beta", 0.0), dim=dim)
    return {"kind": "lsh", "instance": inst, "mu": inst.mu, "nu": inst.nu}


def _scenario_flow(params):
    f, mu, alpha = flow_gaussian_weight(params.get("sigma", 0.5),
                                        dim=params.get("dim", 2))
    return {"kind": "flow", "weight": f, "mu": mu, "alpha": alpha}


SCENARIO_BUILDERS = {
    "gaussian": _scenario_gaussian,
    "anisotropic": _scenario_anisotropic,
    "wehrl": _scenario_wehrl,
    "coulomb": _scenario_coulomb,
    "fock": _scenario_fock,
    "lsh": _scenario_lsh,
    "flow": _scenario_flow,
}
