"""Gaussian smoothing semigroups and their convexity transfer.

One kernel does all the work: H_s f(x) = E_{N(x, s Id)}[f]. The
Ornstein-Uhlenbeck action is the change of variables

    P_t f(x) = H_{1 - e^{-2t}} f(e^{-t} x),

so both kinds share one implementation. Evaluation routes:

  closed_form     f is a PolyExp (polynomial times Gaussian exponent);
                  exact values and log-derivatives.
  gauss_hermite   tensor Gauss-Hermite in dim <= 2, derivative-free score
                  identities, order-doubling accuracy estimate.
  monte_carlo     seeded Gaussian sampling for higher dimensions.

Transfer facts checked by check_smoothing_bounds (s = 1 - e^{-2t}, a = e^{-t}
for the OU kind; s = t, a = 1 for heat):

  unconditional   hess log P_t f >= -(a^2/s) Id
  log_concave     hess log f <= c Id  =>  hess log P_t f <= c a^2/(1-cs) Id,
                  valid while 1 - cs > 0 (a finite time window when c > 1)
  log_convex      hess log f >= c Id  =>  same expression as a lower bound
  log_subharmonic Delta log f >= c n  =>  Delta log P_t f >= c n a^2/(1-cs)
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import quadrature
from .errors import AccuracyError, DomainError
from .measures import ConvexityCertificate, Density
from .polyexp import PolyExp
from .verify import make_certificate


class SemigroupKind(str, Enum):
    ORNSTEIN_UHLENBECK = "ornstein_uhlenbeck"
    HEAT = "heat"


def kernel_params(kind, t):
    """(a, s) with P_t f(x) = H_s f(a x)."""
    t = float(t)
    if t < 0:
        raise DomainError("time must be nonnegative")
    if kind == SemigroupKind.HEAT or kind == "heat":
        return 1.0, t
    if kind == SemigroupKind.ORNSTEIN_UHLENBECK or kind == "ornstein_uhlenbeck":
        return float(np.exp(-t)), float(-np.expm1(-2.0 * t))
    raise DomainError(f"unknown semigroup kind {kind!r}")


@dataclass(frozen=True)
class SemigroupEvaluation:
    value: np.ndarray
    grad_log: np.ndarray
    hess_log: np.ndarray
    method: str
    quadrature_order: int | None
    kind: str
    t: float
    error_estimate: float | None = None


def _as_callable(f):
    if isinstance(f, PolyExp):
        return lambda pts: f.value(pts)
    if isinstance(f, Density):
        return lambda pts: np.exp(f.logpdf(pts))
    return f


def _family_of(f):
    if isinstance(f, PolyExp):
        return f
    if isinstance(f, Density) and f.family is not None:
        return f.family
    return None


def apply(kind, f, t, x, method="auto", order=64, seed=0,
          mc_samples=200_000, check=True, check_rtol=1e-7):
    """Evaluate P_t f (or H_t f) with log-derivatives at points x."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = x.shape[1]
    a, s = kernel_params(kind, t)
    kind_str = kind.value if isinstance(kind, SemigroupKind) else str(kind)
    family = _family_of(f)

    if method == "auto":
        if family is not None:
            method = "closed_form"
        elif n <= 2:
            method = "gauss_hermite"
        else:
            method = "monte_carlo"

    if method == "closed_form":
        if family is None:
            raise DomainError("closed form needs a polynomial-Gaussian family")
        logv, grad, hess = family.smoothed_log_derivs(a * x, s)
        return SemigroupEvaluation(np.exp(logv), a * grad, a * a * hess,
                                   "closed_form", None, kind_str, float(t))

    fn = _as_callable(f)
    if s == 0.0:
        raise DomainError("t = 0 needs the closed form (derivatives of f)")

    if method == "gauss_hermite":
        if n > 2:
            raise DomainError("tensor Gauss-Hermite is limited to dim <= 2")
        val, grad, hess = _gh_eval(fn, x, a, s, n, order)
        err = None
        if check:
            val2, grad2, hess2 = _gh_eval(fn, x, a, s, n, 2 * order)
            num = (np.abs(val - val2).max()
                   + np.abs(hess - hess2).max())
            den = max(np.abs(val2).max(), 1e-300)
            err = float(num / den + np.abs(grad - grad2).max() / max(1.0, np.abs(grad2).max()))
            if err > check_rtol:
                raise AccuracyError(
                    f"Gauss-Hermite order-doubling check failed ({err:.2e}); "
                    "raise the order", estimate=err)
            val, grad, hess = val2, grad2, hess2
        return SemigroupEvaluation(val, grad, hess, "gauss_hermite",
                                   order, kind_str, float(t), err)

    if method == "monte_carlo":
        rng = np.random.default_rng(seed)
        y = rng.standard_normal((mc_samples, n))
        val, grad, hess, err = _score_eval(fn, x, a, s, y,
                                           np.full(mc_samples, 1.0 / mc_samples),
                                           want_se=True)
        if check and err > 5e-3:
            raise AccuracyError(
                f"Monte Carlo semigroup estimate too noisy ({err:.2e})",
                estimate=err)
        return SemigroupEvaluation(val, grad, hess, "monte_carlo",
                                   None, kind_str, float(t), err)

    raise DomainError(f"unknown evaluation method {method!r}")


def _gh_eval(fn, x, a, s, n, order):
    y, w = quadrature.gauss_hermite(n, order)
    val, grad, hess, _ = _score_eval(fn, x, a, s, y, w, want_se=False)
    return val, grad, hess


def _score_eval(fn, x, a, s, y, w, want_se):
    """Derivative-free evaluation through Gaussian score identities.

    With u = a x + sqrt(s) y, y ~ N(0, Id):
      P f(x)        = E[f(u)]
      grad P f(x)   = (a/sqrt(s)) E[y f(u)]
      hess P f(x)   = (a^2/s) E[(y y^T - Id) f(u)]
    """
    m, n = x.shape
    k = y.shape[0]
    pts = (a * x)[:, None, :] + np.sqrt(s) * y[None, :, :]
    vals = fn(pts.reshape(m * k, n)).reshape(m, k)
    P = vals @ w
    if np.any(P <= 0):
        raise DomainError("semigroup value is not positive at a probe")
    wy = y * w[:, None]
    G = (a / np.sqrt(s)) * vals @ wy                       # (m, n)
    yy = np.einsum("ki,kj->kij", y, y) - np.eye(n)[None, :, :]
    H = (a * a / s) * np.einsum("mk,k,kij->mij", vals, w, yy)
    grad_log = G / P[:, None]
    hess_log = H / P[:, None, None] - np.einsum("mi,mj->mij", grad_log, grad_log)
    se = 0.0
    if want_se:
        mean = P
        var = (vals ** 2) @ w - mean ** 2
        se = float(np.max(np.sqrt(var / k) / np.abs(mean)))
    return P, grad_log, hess_log, se


# ---------------------------------------------------------------------------
# smoothing-bound certificates


def smoothing_rhs(klass, c, kind, t):
    """Theoretical matrix/trace coefficient for the smoothing bounds."""
    a, s = kernel_params(kind, t)
    if s == 0.0:
        raise DomainError("bounds need t > 0")
    if klass == "unconditional":
        return -(a * a) / s
    if c is None:
        raise DomainError(f"class {klass!r} needs the constant c")
    denom = 1.0 - c * s
    if denom <= 0:
        raise DomainError(
            f"the {klass} transfer is valid only while 1 - c s > 0; "
            f"got c={c}, s={s} (finite time window for c > 1)")
    return c * a * a / denom


def smoothing_window(c, kind=SemigroupKind.ORNSTEIN_UHLENBECK):
    """Largest valid time for the log-concave upper bound when c > 1."""
    if c <= 1:
        return np.inf
    if kind == SemigroupKind.HEAT or kind == "heat":
        return 1.0 / c
    return float(np.log(np.sqrt(c / (c - 1.0))))


def check_smoothing_bounds(f, klass, t, probes, c=None,
                           kind=SemigroupKind.ORNSTEIN_UHLENBECK,
                           method="auto", order=64, seed=0):
    """Certificate for one smoothing bound on the probe set.

    klass is one of unconditional, log_concave, log_convex,
    log_subharmonic. Lower bounds are recorded with both sides negated
    (see verify module docstring).
    """
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    ev = apply(kind, f, t, probes, method=method, order=order, seed=seed)
    rhs_coeff = smoothing_rhs(klass, c, kind, t)
    evals = np.linalg.eigvalsh(ev.hess_log)
    prov = {"solver": f"semigroup_{ev.method}", "kind": ev.kind, "t": float(t),
            "class": klass, "c": c}
    if klass == "log_concave":
        observed = float(evals[:, -1].max())
        return make_certificate("smoothing_hessian_upper", rhs_coeff, observed,
                                0.0, prov, probes.shape[0])
    if klass in ("unconditional", "log_convex"):
        observed = float((-evals[:, 0]).max())
        name = ("smoothing_hessian_lower" if klass == "unconditional"
                else "smoothing_hessian_lower_convex")
        return make_certificate(name, -rhs_coeff, observed, 0.0, prov,
                                probes.shape[0],
                                details={"negated_lower_bound": True})
    if klass == "log_subharmonic":
        trace = evals.sum(axis=1)
        observed = float((-trace).max())
        n = probes.shape[1]
        return make_certificate("smoothing_trace_lower", -rhs_coeff * n,
                                observed, 0.0, prov, probes.shape[0],
                                details={"negated_lower_bound": True})
    raise DomainError(f"unknown smoothing class {klass!r}")


# ---------------------------------------------------------------------------
# mollification


@dataclass(frozen=True)
class MollifiedPair:
    k: int
    source: Density
    target: Density
    kappa_k: float
    alpha: float


def mollified_kappa(kappa, k):
    """Strong convexity constant surviving time-1/k smoothing."""
    e = np.exp(-2.0 / k)
    return float(kappa * e / (1.0 + kappa * (1.0 - e)))


def mollify(mu, nu, alpha, kappa, k, validate=True, validation_box=None,
            probes=64, seed=99):
    """Smooth a source/target pair for time 1/k along the OU semigroup.

    Source: V_k = (1 - 1/k)(-log P_{1/k} e^{-V}) + (1/k) alpha |x|^2 / 2,
    which keeps Delta V_k <= alpha n. Target: W_k = -log P_{1/k} e^{-W},
    which is kappa_k-strongly convex with
    kappa_k = kappa e^{-2/k} / (1 + kappa (1 - e^{-2/k})).
    """
    if k < 1:
        raise DomainError("k must be at least 1")
    t = 1.0 / float(k)
    lam = 1.0 - t
    kind = SemigroupKind.ORNSTEIN_UHLENBECK

    def smooth_density(dens, mix_quadratic):
        def log_density(x, _d=dens):
            ev = apply(kind, _d, t, x)
            out = np.log(ev.value)
            if mix_quadratic:
                out = lam * out - t * 0.5 * alpha * np.einsum("mi,mi->m", x, x)
            return out

        def grad_log(x, _d=dens):
            ev = apply(kind, _d, t, x)
            g = ev.grad_log
            if mix_quadratic:
                g = lam * g - t * alpha * x
            return g

        def hess_log(x, _d=dens):
            ev = apply(kind, _d, t, x)
            h = ev.hess_log
            if mix_quadratic:
                h = lam * h - t * alpha * np.eye(x.shape[1])[None, :, :]
            return h

        return log_density, grad_log, hess_log

    src_fns = smooth_density(mu, True)
    tgt_fns = smooth_density(nu, False)
    kappa_k = mollified_kappa(kappa, k)
    src_cert = ConvexityCertificate(alpha=alpha, kappa=None, provenance="analytic")
    tgt_cert = ConvexityCertificate(alpha=None, kappa=kappa_k, provenance="analytic")
    source = Density(mu.dim, *src_fns, normalized=False, certificate=src_cert,
                     center=mu.center, kind="mollified_source",
                     params={"k": k, "alpha": alpha, "base": mu.kind})
    target = Density(nu.dim, *tgt_fns, normalized=False, certificate=tgt_cert,
                     center=nu.center, kind="mollified_target",
                     params={"k": k, "kappa": kappa, "base": nu.kind})
    pair = MollifiedPair(k=int(k), source=source, target=target,
                         kappa_k=kappa_k, alpha=float(alpha))
    if validate:
        from .measures import TruncationBox, check_certificate
        box = validation_box or TruncationBox.cube(mu.dim, 3.0)
        check_certificate(source, box, probes=probes, seed=seed)
        check_certificate(target, box, probes=probes, seed=seed)
    return pair


# ---------------------------------------------------------------------------
# covariance identity


@dataclass(frozen=True)
class CovarianceIdentityReport:
    t: float
    point: np.ndarray
    hessian: np.ndarray
    covariance_form: np.ndarray
    frobenius_discrepancy: float
    order: int


def covariance_identity_check(f, t, x, order=64):
    """Check hess log P_t f = (a^2/s) (Cov[p_{ax, s}] / s - Id).

    p_{z, s}(y) is proportional to f(y) exp(-|y - z|^2 / (2 s)); its
    moments are computed on a Gauss-Hermite grid centered at z with scale
    sqrt(s), cross-checked at twice the order.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[0] != 1:
        raise DomainError("one probe point at a time")
    n = x.shape[1]
    kind = SemigroupKind.ORNSTEIN_UHLENBECK
    a, s = kernel_params(kind, t)
    fn = _as_callable(f)
    z = a * x[0]

    def tilted_cov(o):
        y, w = quadrature.gauss_hermite(n, o)
        pts = z[None, :] + np.sqrt(s) * y
        vals = fn(pts) * w
        mass = vals.sum()
        if mass <= 0:
            raise DomainError("tilted measure has no mass at this probe")
        p = vals / mass
        mean = p @ pts
        d = pts - mean
        return np.einsum("k,ki,kj->ij", p, d, d)

    cov = tilted_cov(order)
    cov2 = tilted_cov(2 * order)
    if np.abs(cov - cov2).max() > 1e-8 * max(1.0, np.abs(cov2).max()):
        raise AccuracyError("tilted covariance quadrature did not settle",
                            estimate=float(np.abs(cov - cov2).max()))
    rhs = (a * a / s) * (cov2 / s - np.eye(n))
    ev = apply(kind, f, t, x, order=order)
    lhs = ev.hess_log[0]
    disc = float(np.linalg.norm(lhs - rhs))
    return CovarianceIdentityReport(t=float(t), point=x[0], hessian=lhs,
                                    covariance_form=rhs,
                                    frobenius_discrepancy=disc,
                                    order=order)
