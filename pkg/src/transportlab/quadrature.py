"""Quadrature helpers: tensor Gauss-Legendre boxes, Gauss-Hermite grids,
cumulative integrals with monotone inversion, stratified Monte Carlo.

Conventions: points are arrays of shape (m, n); weights of shape (m,).
All randomness flows through an explicit numpy Generator.
"""

from __future__ import annotations

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from numpy.polynomial.legendre import leggauss

from .errors import AccuracyError


def gauss_legendre_1d(a, b, order=32, panels=4):
    """Composite Gauss-Legendre nodes/weights on [a, b]."""
    x, w = leggauss(order)
    edges = np.linspace(a, b, panels + 1)
    nodes, weights = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        half = 0.5 * (hi - lo)
        nodes.append(0.5 * (lo + hi) + half * x)
        weights.append(half * w)
    return np.concatenate(nodes), np.concatenate(weights)


def box_gauss_legendre(box, order=32, panels=4):
    """Tensor Gauss-Legendre rule over a box.

    box: TruncationBox-like with .center (n,) and .half_widths (n,).
    Returns (points (m, n), weights (m,)). Intended for n <= 3.
    """
    center = np.asarray(box.center, dtype=float)
    half = np.asarray(box.half_widths, dtype=float)
    n = center.size
    axes = []
    for i in range(n):
        xi, wi = gauss_legendre_1d(center[i] - half[i], center[i] + half[i],
                                   order=order, panels=panels)
        axes.append((xi, wi))
    grids = np.meshgrid(*[a[0] for a in axes], indexing="ij")
    points = np.stack([g.ravel() for g in grids], axis=-1)
    wgrids = np.meshgrid(*[a[1] for a in axes], indexing="ij")
    weights = np.prod(np.stack([g.ravel() for g in wgrids], axis=0), axis=0)
    return points, weights


def integrate_box(fn, box, order=32, panels=4):
    """Integrate fn over the box with a tensor Gauss-Legendre rule.

    fn maps (m, n) -> (m,).
    """
    pts, w = box_gauss_legendre(box, order=order, panels=panels)
    return float(np.dot(w, fn(pts)))


def integrate_box_checked(fn, box, order=32, panels=4, rtol=1e-8, atol=1e-12):
    """Integrate with an order-doubling cross check.

    Returns (value, error_estimate). Raises AccuracyError when the two
    resolutions disagree beyond tolerance.
    """
    lo = integrate_box(fn, box, order=order, panels=panels)
    hi = integrate_box(fn, box, order=order, panels=2 * panels)
    err = abs(hi - lo)
    if err > rtol * abs(hi) + atol:
        raise AccuracyError(
            f"quadrature cross-check failed: {lo!r} vs {hi!r}", estimate=err)
    return hi, err


def gauss_hermite(dim, order=64):
    """Tensor Gauss-Hermite rule for the standard Gaussian weight.

    Returns (points (m, dim), weights (m,)) with sum(weights) == 1, so that
    sum(w * f(points)) approximates E_{N(0, Id)}[f].
    """
    x, w = hermegauss(order)
    w = w / np.sqrt(2.0 * np.pi)
    if dim == 1:
        return x[:, None], w
    grids = np.meshgrid(*([x] * dim), indexing="ij")
    points = np.stack([g.ravel() for g in grids], axis=-1)
    wgrids = np.meshgrid(*([w] * dim), indexing="ij")
    weights = np.prod(np.stack([g.ravel() for g in wgrids], axis=0), axis=0)
    return points, weights


class CumulativeIntegral:
    """Cumulative integral F(x) = int_a^x f with monotone inversion.

    The interval is split into panels (optionally log-spaced away from `a`),
    each integrated with Gauss-Legendre; queries integrate the partial panel.
    Assumes f >= 0 so F is nondecreasing.
    """

    def __init__(self, fn, a, b, panels=512, order=16, log_spaced=False,
                 log_floor=1e-8):
        self.fn = fn
        self.a = float(a)
        self.b = float(b)
        if log_spaced:
            span = self.b - self.a
            t = np.geomspace(log_floor, 1.0, panels)
            edges = np.concatenate([[self.a], self.a + span * t])
        else:
            edges = np.linspace(self.a, self.b, panels + 1)
        self.edges = edges
        x, w = leggauss(order)
        self._gl_x, self._gl_w = x, w
        lo, hi = edges[:-1], edges[1:]
        half = 0.5 * (hi - lo)
        mid = 0.5 * (hi + lo)
        nodes = mid[:, None] + half[:, None] * x[None, :]
        vals = fn(nodes.ravel()).reshape(nodes.shape)
        panel_ints = half * vals.dot(w)
        self.cum = np.concatenate([[0.0], np.cumsum(panel_ints)])
        self.total = float(self.cum[-1])

    def value(self, x):
        """F(x) for scalar or array x inside [a, b]."""
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 0
        xf = np.atleast_1d(x).astype(float)
        xf = np.clip(xf, self.a, self.b)
        idx = np.clip(np.searchsorted(self.edges, xf, side="right") - 1,
                      0, len(self.edges) - 2)
        lo = self.edges[idx]
        half = 0.5 * (xf - lo)
        mid = lo + half
        nodes = mid[:, None] + half[:, None] * self._gl_x[None, :]
        vals = self.fn(nodes.ravel()).reshape(nodes.shape)
        partial = half * vals.dot(self._gl_w)
        out = self.cum[idx] + partial
        return float(out[0]) if scalar else out

    def inverse(self, q, tol=1e-13, max_iter=100):
        """Solve F(x) = q by bisection refined with Newton (f as derivative)."""
        q = np.asarray(q, dtype=float)
        scalar = q.ndim == 0
        qf = np.atleast_1d(q).astype(float)
        qf = np.clip(qf, 0.0, self.total)
        idx = np.clip(np.searchsorted(self.cum, qf, side="right") - 1,
                      0, len(self.edges) - 2)
        lo = self.edges[idx].copy()
        hi = self.edges[idx + 1].copy()
        x = 0.5 * (lo + hi)
        for _ in range(max_iter):
            fx = self.value(x) - qf
            too_low = fx < 0
            lo = np.where(too_low, x, lo)
            hi = np.where(too_low, hi, x)
            d = self.fn(x)
            step_ok = d > 0
            xn = np.where(step_ok, x - fx / np.where(step_ok, d, 1.0), x)
            inside = (xn > lo) & (xn < hi)
            x = np.where(inside, xn, 0.5 * (lo + hi))
            if np.all(hi - lo < tol * (1.0 + np.abs(x))):
                break
        return float(x[0]) if scalar else x


def stratified_uniform(box, count, rng):
    """Stratified uniform samples in a box (Latin hypercube per axis)."""
    center = np.asarray(box.center, dtype=float)
    half = np.asarray(box.half_widths, dtype=float)
    n = center.size
    u = (np.arange(count)[:, None] + rng.random((count, n))) / count
    for j in range(n):
        rng.shuffle(u[:, j])
    return center + (2.0 * u - 1.0) * half


def monte_carlo_box(fn, box, count, rng):
    """Stratified MC integral of fn over the box.

    Returns (value, standard_error).
    """
    pts = stratified_uniform(box, count, rng)
    half = np.asarray(box.half_widths, dtype=float)
    vol = float(np.prod(2.0 * half))
    vals = fn(pts)
    mean = float(np.mean(vals))
    se = float(np.std(vals, ddof=1) / np.sqrt(count))
    return vol * mean, vol * se
