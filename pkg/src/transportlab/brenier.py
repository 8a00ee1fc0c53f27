"""Transport-map solvers and the Monge-Ampere residual.

Five routes produce a TransportMap, tagged by provenance:

  closed_form_gaussian  exact affine map between Gaussians
  quantile_1d           CDF matching on an interval
  radial                cumulative mass matching for co-centered radial pairs
  entropic_grid         Sinkhorn on tensor grids + debiased barycentric map
  entropic_sample       Sinkhorn on point clouds + local-fit Jacobians

Exact routes carry analytic Jacobians; grid maps differentiate their lattice
values by stencils; sample maps fit local affine models over nearest
neighbors. The Monge-Ampere residual log rho_mu(x) - log rho_nu(T x)
- log det DT(x) measures pushforward fidelity pointwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import entropic, quadrature
from .errors import (ConvergenceError, ConvexityViolationError, DomainError,
                     FitError, SupportError)
from .measures import TruncationBox

PROVENANCES = ("closed_form_gaussian", "quantile_1d", "radial",
               "entropic_grid", "entropic_sample")


@dataclass
class TransportMap:
    """A map R^n -> R^n with an optional Jacobian evaluator."""

    dim: int
    provenance: str
    eval_fn: object
    jacobian_fn: object = None
    entropic_epsilon: float | None = None
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise DomainError(f"unknown provenance {self.provenance!r}")

    def __call__(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.asarray(self.eval_fn(x), dtype=float)

    def jacobian(self, x):
        if self.jacobian_fn is None:
            raise DomainError(
                f"{self.provenance} maps carry no Jacobian evaluator")
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.asarray(self.jacobian_fn(x), dtype=float)


# ---------------------------------------------------------------------------
# closed-form Gaussian route


def _sqrtm_psd(M):
    evals, evecs = np.linalg.eigh(M)
    if evals.min() < -1e-12 * max(1.0, evals.max()):
        raise DomainError("matrix is not positive semidefinite")
    return (evecs * np.sqrt(np.clip(evals, 0.0, None))) @ evecs.T


def solve_gaussian(mu, nu):
    """Affine optimal map between Gaussian densities."""
    if mu.kind != "gaussian" or nu.kind != "gaussian":
        raise DomainError("solve_gaussian needs Gaussian inputs")
    m0, c0 = mu.params["mean"], mu.params["cov"]
    m1, c1 = nu.params["mean"], nu.params["cov"]
    s = _sqrtm_psd(c0)
    s_inv = np.linalg.inv(s)
    middle = _sqrtm_psd(s @ c1 @ s)
    A = s_inv @ middle @ s_inv
    A = 0.5 * (A + A.T)

    def eval_fn(x):
        return m1 + (x - m0) @ A.T

    def jacobian_fn(x):
        return np.broadcast_to(A, (x.shape[0],) + A.shape).copy()

    return TransportMap(mu.dim, "closed_form_gaussian", eval_fn, jacobian_fn,
                        details={"matrix": A})


# ---------------------------------------------------------------------------
# one-dimensional quantile route


def solve_quantile_1d(mu, nu, box_mu, box_nu, panels=2048, order=16):
    """CDF-matching map T = G^{-1} o F between densities on R."""
    if mu.dim != 1 or nu.dim != 1:
        raise DomainError("quantile route is one-dimensional")
    F = quadrature.CumulativeIntegral(
        lambda r: np.exp(mu.logpdf(r[:, None])), box_mu.lower[0],
        box_mu.upper[0], panels=panels, order=order)
    G = quadrature.CumulativeIntegral(
        lambda r: np.exp(nu.logpdf(r[:, None])), box_nu.lower[0],
        box_nu.upper[0], panels=panels, order=order)
    ratio = G.total / F.total

    def eval_fn(x):
        q = F.value(x[:, 0]) * ratio
        return G.inverse(q)[:, None]

    def jacobian_fn(x):
        t = eval_fn(x)
        d = np.exp(mu.logpdf(x) - nu.logpdf(t))
        return d[:, None, None]

    return TransportMap(1, "quantile_1d", eval_fn, jacobian_fn,
                        details={"mass_mu": F.total, "mass_nu": G.total})


# ---------------------------------------------------------------------------
# radial route


def _radial_symmetry_error(dens, radii, directions=16, seed=7):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for r in radii:
        if dens.dim == 1:
            dirs = np.array([[1.0], [-1.0]])
        else:
            d = rng.standard_normal((directions, dens.dim))
            dirs = d / np.linalg.norm(d, axis=1, keepdims=True)
        vals = dens.logpdf(dens.center + r * dirs)
        worst = max(worst, float(vals.max() - vals.min()))
    return worst


def solve_radial(mu, nu, r_max=None, panels=2048, order=16, symmetry_tol=1e-8):
    """Mass-matching map between co-centered radial densities.

    Works from the densities' radial profiles rho(r); the radial transport
    t(r) solves M_nu(t) = M_mu(r) for the cumulative masses with weight
    r^(n-1), on a log-spaced grid. The Jacobian has radial eigenvalue t'(r)
    and tangential eigenvalue t(r)/r.
    """
    if mu.dim != nu.dim:
        raise DomainError("dimension mismatch")
    if mu.radial_profile is None or nu.radial_profile is None:
        raise DomainError("both densities need radial profiles")
    if np.linalg.norm(mu.center - nu.center) > 1e-12:
        raise DomainError("radial route needs a common center")
    n = mu.dim
    if r_max is None:
        r_max = 12.0
    sym = max(_radial_symmetry_error(mu, [0.3 * r_max, 0.6 * r_max]),
              _radial_symmetry_error(nu, [0.3 * r_max, 0.6 * r_max]))
    if sym > symmetry_tol:
        raise DomainError(
            f"density is not radial about the center (log-density spread "
            f"{sym:.2e} over directions)")
    center = mu.center

    def mass_integrand(profile):
        def fn(r):
            r = np.asarray(r, dtype=float)
            return profile(r) * r ** (n - 1)
        return fn

    Mmu = quadrature.CumulativeIntegral(mass_integrand(mu.radial_profile),
                                        0.0, r_max, panels=panels, order=order,
                                        log_spaced=True)
    Mnu = quadrature.CumulativeIntegral(mass_integrand(nu.radial_profile),
                                        0.0, r_max, panels=panels, order=order,
                                        log_spaced=True)
    ratio = Mnu.total / Mmu.total
    r_floor = 1e-9 * r_max

    def t_of_r(r):
        return Mnu.inverse(Mmu.value(r) * ratio)

    # CDF matching stops resolving once either cumulative tail drops under
    # double precision; past that radius values and slopes are meaningless,
    # so the map refuses to evaluate there instead of returning noise.
    scan = np.linspace(r_max / 4096.0, r_max, 4096)
    tail_mu = 1.0 - Mmu.value(scan) / Mmu.total
    tail_nu = 1.0 - Mnu.value(scan) / Mnu.total
    nu_ok = tail_nu > 1e-13
    t_sat = float(scan[nu_ok][-1]) if np.any(nu_ok) else r_max
    with np.errstate(all="ignore"):
        t_scan = t_of_r(scan)
    ok = (tail_mu > 1e-13) & (t_scan <= t_sat)
    r_reliable = float(scan[ok][-1]) if np.any(ok) else r_max

    def _check_resolved(r):
        if r.size and float(r.max()) > r_reliable * (1 + 1e-12):
            raise SupportError(
                f"radial map resolved only to radius {r_reliable:.4g} "
                f"(cumulative tail under double precision); asked at "
                f"radius {float(r.max()):.4g}")

    def tprime(r, t):
        num = mu.radial_profile(r) * r ** (n - 1)
        den = nu.radial_profile(t) * t ** (n - 1)
        if np.any(den <= 0):
            raise DomainError("target radial profile vanished on the range")
        return ratio * num / den

    def eval_fn(x):
        d = x - center
        r = np.linalg.norm(d, axis=1)
        _check_resolved(r)
        out = np.zeros_like(d)
        pos = r > r_floor
        if np.any(pos):
            t = t_of_r(r[pos])
            out[pos] = d[pos] * (t / r[pos])[:, None]
        return center + out

    def jacobian_fn(x):
        d = x - center
        r = np.linalg.norm(d, axis=1)
        _check_resolved(r)
        m = x.shape[0]
        J = np.zeros((m, n, n))
        eye = np.eye(n)
        pos = r > r_floor
        if np.any(pos):
            rp = r[pos]
            t = t_of_r(rp)
            tp = tprime(rp, t)
            u = d[pos] / rp[:, None]
            P = np.einsum("mi,mj->mij", u, u)
            J[pos] = (tp[:, None, None] * P
                      + (t / rp)[:, None, None] * (eye[None, :, :] - P))
        if np.any(~pos):
            # limit slope from mass matching on a tiny shell
            r0 = max(10 * r_floor, 1e-7 * r_max)
            t0 = t_of_r(np.array([r0]))[0]
            J[~pos] = (t0 / r0) * eye[None, :, :]
        return J

    return TransportMap(n, "radial", eval_fn, jacobian_fn,
                        details={"r_max": r_max, "mass_mu": Mmu.total,
                                 "mass_nu": Mnu.total,
                                 "symmetry_error": sym,
                                 "reliable_radius": r_reliable})


# ---------------------------------------------------------------------------
# entropic grid route


class GridMap:
    """Map values on a tensor grid with stencil Jacobians."""

    def __init__(self, axes, values):
        self.axes = [np.asarray(a, dtype=float) for a in axes]
        self.dim = len(self.axes)
        shape = tuple(a.size for a in self.axes)
        self.values = np.asarray(values, dtype=float).reshape(shape + (self.dim,))
        self.jacobians = self._stencil_jacobians()

    def _stencil_jacobians(self):
        J = np.empty(self.values.shape[:-1] + (self.dim, self.dim))
        for axis in range(self.dim):
            J[..., :, axis] = np.gradient(self.values[..., :],
                                          self.axes[axis], axis=axis)
        return J

    def _locate(self, x):
        idx = []
        frac = []
        for axis in range(self.dim):
            a = self.axes[axis]
            i = np.clip(np.searchsorted(a, x[:, axis]) - 1, 0, a.size - 2)
            idx.append(i)
            frac.append((x[:, axis] - a[i]) / (a[i + 1] - a[i]))
        return idx, frac

    def eval(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        idx, frac = self._locate(x)
        if self.dim == 1:
            i = idx[0]
            w = np.clip(frac[0], 0.0, 1.0)[:, None]
            return (1 - w) * self.values[i] + w * self.values[i + 1]
        i, j = idx
        u = np.clip(frac[0], 0.0, 1.0)[:, None]
        v = np.clip(frac[1], 0.0, 1.0)[:, None]
        v00 = self.values[i, j]
        v10 = self.values[i + 1, j]
        v01 = self.values[i, j + 1]
        v11 = self.values[i + 1, j + 1]
        return ((1 - u) * (1 - v) * v00 + u * (1 - v) * v10
                + (1 - u) * v * v01 + u * v * v11)

    def jacobian(self, x):
        """Nearest-node stencil Jacobian."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        nearest = []
        for axis in range(self.dim):
            a = self.axes[axis]
            i = np.clip(np.searchsorted(a, x[:, axis]), 0, a.size - 1)
            left = np.clip(i - 1, 0, a.size - 1)
            use_left = np.abs(x[:, axis] - a[left]) <= np.abs(a[i] - x[:, axis])
            nearest.append(np.where(use_left, left, i))
        return self.jacobians[tuple(nearest)]


def grid_measure(dens, box, side):
    """Cell masses of a density on a tensor grid, normalized on the box."""
    axes = box.axis_nodes(side)
    mesh = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack([g.ravel() for g in mesh], axis=-1)
    logp = dens.logpdf(nodes).reshape([side] * box.dim)
    log_mass = logp - _logsumexp(logp)
    return axes, log_mass


def _logsumexp(a):
    m = a.max()
    return m + np.log(np.exp(a - m).sum())


def solve_entropic_grid(mu, nu, epsilon, box=None, box_nu=None, side=128,
                        tol=1e-7, max_iter=2000, debias=True, warm=None,
                        return_state=False):
    """Entropic map between grid-discretized densities.

    Densities are renormalized on their boxes; the barycentric projection
    is debiased by the self-transport correction
    T(x) := x + (T_{mu->nu}(x) - T_{mu->mu}(x)). Potentials can be warm
    started (see solve_entropic_schedule).
    """
    if box is None:
        raise DomainError("an explicit box is required")
    if box_nu is None:
        box_nu = box
    if mu.dim not in (1, 2):
        raise DomainError("grid route is limited to dim <= 2")
    axes_x, log_a = grid_measure(mu, box, side)
    axes_y, log_b = grid_measure(nu, box_nu, side)
    if mu.dim == 2:
        solver = entropic.GridSinkhorn2D(axes_x, axes_y, log_a, log_b, epsilon)
        self_solver = entropic.GridSinkhorn2D(axes_x, axes_x, log_a, log_a,
                                              epsilon) if debias else None
    else:
        solver = entropic.GridSinkhorn1D(axes_x[0], axes_y[0], log_a, log_b,
                                         epsilon)
        self_solver = entropic.GridSinkhorn1D(axes_x[0], axes_x[0], log_a,
                                              log_a, epsilon) if debias else None
    P0 = Q0 = Ps0 = Qs0 = None
    if warm is not None:
        P0, Q0 = warm.get("PQ", (None, None))
        Ps0, Qs0 = warm.get("PQ_self", (None, None))
    P, Q, err, iters = solver.run(P=P0, Q=Q0, tol=tol, max_iter=max_iter)
    raw = solver.barycentric(Q)
    state = {"PQ": (P, Q), "log_a": log_a, "log_b": log_b,
             "marginal_error": err, "iterations": iters}
    if debias:
        Ps, Qs, err_s, it_s = self_solver.run(P=Ps0, Q=Qs0, tol=tol,
                                              max_iter=max_iter)
        self_map = self_solver.barycentric(Qs)
        state["PQ_self"] = (Ps, Qs)
        mesh = np.meshgrid(*axes_x, indexing="ij")
        nodes = np.stack(mesh, axis=-1) if mu.dim == 2 else mesh[0][:, None]
        values = nodes + (raw.reshape(nodes.shape)
                          - self_map.reshape(nodes.shape))
    else:
        values = raw
    gm = GridMap(axes_x, values)
    tmap = TransportMap(mu.dim, "entropic_grid", gm.eval, gm.jacobian,
                        entropic_epsilon=float(epsilon),
                        details={"side": side, "marginal_error": err,
                                 "iterations": iters, "debias": debias,
                                 "box": box.to_dict(), "grid_map": gm})
    return (tmap, state) if return_state else tmap


def solve_entropic_schedule(mu, nu, schedule, box=None, box_nu=None, side=128,
                            tol=1e-7, max_iter=2000, debias=True):
    """Run a decreasing epsilon schedule with warm starts.

    Returns the list of per-stage TransportMaps (one per epsilon).
    """
    schedule = [float(e) for e in schedule]
    if any(b >= a for a, b in zip(schedule, schedule[1:])):
        raise DomainError("epsilon schedule must strictly decrease")
    maps = []
    warm = None
    prev_eps = None
    for eps in schedule:
        if warm is not None:
            la, lb = warm["log_a"], warm["log_b"]
            P, Q = entropic.rescale_potentials(*warm["PQ"], la, lb,
                                               prev_eps, eps)
            w = {"PQ": (P, Q)}
            if "PQ_self" in warm:
                Ps, Qs = entropic.rescale_potentials(*warm["PQ_self"], la, la,
                                                     prev_eps, eps)
                w["PQ_self"] = (Ps, Qs)
            warm_arg = w
        else:
            warm_arg = None
        tmap, state = solve_entropic_grid(mu, nu, eps, box=box, box_nu=box_nu,
                                          side=side, tol=tol, max_iter=max_iter,
                                          debias=debias, warm=warm_arg,
                                          return_state=True)
        maps.append(tmap)
        warm = state
        prev_eps = eps
    return maps


# ---------------------------------------------------------------------------
# entropic sample route


def local_affine_jacobians(xs, ts, queries, k=None, cond_limit=1e3):
    """Least-squares affine fits of the map over k nearest neighbors.

    Returns (jacobians (m, n, n), ok_mask); rank-deficient neighborhoods
    are flagged instead of raising, callers decide.
    """
    xs = np.asarray(xs, dtype=float)
    ts = np.asarray(ts, dtype=float)
    queries = np.atleast_2d(np.asarray(queries, dtype=float))
    n = xs.shape[1]
    if k is None:
        k = max(4 * n + 8, 16)
    tree = cKDTree(xs)
    _, idx = tree.query(queries, k=k)
    m = queries.shape[0]
    J = np.empty((m, n, n))
    ok = np.ones(m, dtype=bool)
    for i in range(m):
        X = xs[idx[i]]
        Y = ts[idx[i]]
        Xc = X - X.mean(axis=0)
        Yc = Y - Y.mean(axis=0)
        sv = np.linalg.svd(Xc, compute_uv=False)
        if sv[0] <= 0 or sv[0] / max(sv[-1], 1e-300) > cond_limit:
            ok[i] = False
            J[i] = np.eye(n)
            continue
        A, *_ = np.linalg.lstsq(Xc, Yc, rcond=None)
        J[i] = A.T
    return J, ok


def solve_entropic_sample(xs, ys, epsilon, schedule=None, tol=1e-5,
                          max_iter=1500, debias=True, fit_k=None, block=4096):
    """Entropic map between uniform point clouds.

    The map is the debiased barycentric projection at the sample points,
    extended off-sample by nearest-neighbor lookup; Jacobians come from
    local affine fits (rank-deficient neighborhoods raise FitError).
    The epsilon schedule warm starts the cross-transport potentials; the
    self-transport used for debiasing is only solved at the final epsilon.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape[1] != ys.shape[1]:
        raise DomainError("sample clouds disagree in dimension")
    stages = [float(e) for e in (schedule or [])] + [float(epsilon)]
    stages = sorted(set(stages), reverse=True)
    P = Q = None
    prev = None
    for eps in stages:
        solver = entropic.SampleSinkhorn(xs, ys, eps, block=block)
        if prev is not None:
            P, Q = entropic.rescale_potentials(P, Q, solver.log_a,
                                               solver.log_b, prev, eps)
        P, Q, err, iters = solver.run(P=P, Q=Q, tol=tol, max_iter=max_iter)
        prev = eps
    raw = solver.barycentric(Q)
    if debias:
        self_solver = entropic.SampleSinkhorn(xs, xs, stages[-1], block=block)
        _, Qs, _, _ = self_solver.run(tol=tol, max_iter=max_iter)
        tvals = xs + raw - self_solver.barycentric(Qs)
    else:
        tvals = raw
    tree = cKDTree(xs)

    def eval_fn(x):
        _, idx = tree.query(x, k=1)
        return tvals[idx]

    def jacobian_fn(x):
        J, ok = local_affine_jacobians(xs, tvals, x, k=fit_k)
        if not np.all(ok):
            raise FitError(
                f"{int((~ok).sum())} rank-deficient local fits; "
                "exclude those probes or raise k")
        return J

    return TransportMap(xs.shape[1], "entropic_sample", eval_fn, jacobian_fn,
                        entropic_epsilon=float(stages[-1]),
                        details={"samples": xs.shape[0],
                                 "marginal_error": err, "iterations": iters,
                                 "debias": debias, "map_values": tvals,
                                 "source_points": xs})


# ---------------------------------------------------------------------------
# Monge-Ampere residual


@dataclass(frozen=True)
class MongeAmpereResidual:
    probes: np.ndarray
    residuals: np.ndarray
    sup_abs: float

    def to_dict(self):
        return {"sup_abs": self.sup_abs,
                "mean_abs": float(np.abs(self.residuals).mean()),
                "probe_count": int(self.residuals.size)}


def monge_ampere_residual(transport_map, mu, nu, probes):
    """Pointwise log residual of the pushforward equation.

    residual(x) = log rho_mu(x) - log rho_nu(T x) - log det DT(x).
    Both densities must be normalized. Nonpositive determinants raise.
    """
    if not (mu.normalized and nu.normalized):
        raise DomainError("Monge-Ampere residual needs normalized densities")
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    J = transport_map.jacobian(probes)
    S = 0.5 * (J + np.swapaxes(J, -1, -2))
    det = np.linalg.det(S)
    if np.any(det <= 0):
        bad = int(np.argmax(det <= 0))
        raise ConvexityViolationError(
            "Jacobian determinant is not positive at a probe",
            probe=probes[bad])
    res = (mu.logpdf(probes) - nu.logpdf(transport_map(probes))
           - np.log(det))
    return MongeAmpereResidual(probes=probes, residuals=res,
                               sup_abs=float(np.abs(res).max()))


# ---------------------------------------------------------------------------
# serialization of grid maps


def save_grid_map(path, transport_map):
    """Write an entropic grid map as a flat text lattice."""
    gm = transport_map.details.get("grid_map")
    if gm is None:
        raise DomainError("only grid-backed maps serialize to the lattice format")
    with open(path, "w") as fh:
        fh.write("transportlab-gridmap 1\n")
        fh.write(f"dim {gm.dim}\n")
        fh.write("shape " + " ".join(str(a.size) for a in gm.axes) + "\n")
        for axis, a in enumerate(gm.axes):
            fh.write(f"axis{axis} {float(a[0])!r} {float(a[-1])!r}\n")
        fh.write(f"provenance {transport_map.provenance}\n")
        eps = transport_map.entropic_epsilon
        fh.write(f"epsilon {None if eps is None else float(eps)!r}\n")
        fh.write("values\n")
        flat = gm.values.reshape(-1, gm.dim)
        for row in flat:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def load_grid_map(path):
    with open(path) as fh:
        header = fh.readline().split()
        if header[:1] != ["transportlab-gridmap"]:
            raise DomainError("not a grid-map lattice file")
        dim = int(fh.readline().split()[1])
        shape = [int(v) for v in fh.readline().split()[1:]]
        axes = []
        for axis in range(dim):
            parts = fh.readline().split()
            axes.append(np.linspace(float(parts[1]), float(parts[2]),
                                    shape[axis]))
        provenance = fh.readline().split()[1]
        eps_txt = fh.readline().split()[1]
        epsilon = None if eps_txt == "None" else float(eps_txt)
        assert fh.readline().strip() == "values"
        flat = np.loadtxt(fh).reshape(tuple(shape) + (dim,))
    gm = GridMap(axes, flat)
    return TransportMap(dim, provenance, gm.eval, gm.jacobian,
                        entropic_epsilon=epsilon, details={"grid_map": gm})


# ---------------------------------------------------------------------------
# pushforward moment diagnostics


def pushforward_moments(transport_map, mu, box=None, order=48, samples=None):
    """Mean and covariance of the image measure T_# mu."""
    if samples is not None:
        pts = np.asarray(samples, dtype=float)
        w = np.full(pts.shape[0], 1.0 / pts.shape[0])
    else:
        pts, gw = quadrature.box_gauss_legendre(box, order=order)
        w = gw * np.exp(mu.logpdf(pts))
        w = w / w.sum()
    img = transport_map(pts)
    mean = w @ img
    d = img - mean
    cov = np.einsum("m,mi,mj->ij", w, d, d)
    return mean, cov
