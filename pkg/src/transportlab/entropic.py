"""Log-domain Sinkhorn solvers for quadratic-cost entropic transport.

Grid route: measures live on tensor grids (dim <= 2); the quadratic cost
separates per axis, so every logsumexp over the product index nests into
two axis-wise logsumexp contractions. This keeps the 128 x 128 case inside
a few (side)^3 tensors and never materializes the full cost matrix.

Sample route: uniform weights on point clouds, blockwise logsumexp over
cost rows computed on the fly.

Conventions: cost c(x, y) = |x - y|^2 / 2, kernel exponent M = -c / eps.
The plan is pi_ij = exp(M_ij + P_i + Q_j) where the scaled potentials P, Q
absorb the log-weights; the true dual potentials are
u = eps (P - log a), v = eps (Q - log b), which is how warm starts are
carried across epsilon stages. Updates:

    P = log a - LSE_j(M + Q),   Q = log b - LSE_i(M + P),

and the (exact) marginal identities give the convergence check.
"""

from __future__ import annotations

import numpy as np

from .errors import ConvergenceError, DomainError


def _lse_matmul(A, H):
    """R[i, r] = logsumexp_j (A[i, j] + H[j, r])."""
    X = A[:, :, None] + H[None, :, :]
    M = X.max(axis=1)
    safe = np.where(np.isfinite(M), M, 0.0)
    R = safe + np.log(np.exp(X - safe[:, None, :]).sum(axis=1))
    return np.where(np.isfinite(M), R, -np.inf)


def _lse_rows(X):
    M = X.max(axis=1)
    safe = np.where(np.isfinite(M), M, 0.0)
    R = safe + np.log(np.exp(X - safe[:, None]).sum(axis=1))
    return np.where(np.isfinite(M), R, -np.inf)


def _check_finite(S):
    if np.any(~np.isfinite(S)):
        raise DomainError(
            "a kernel row lost all mass at this epsilon; use an epsilon "
            "schedule ending at the target value")


class GridSinkhorn2D:
    """Separable log-domain Sinkhorn between two 2-d tensor-grid measures."""

    def __init__(self, axes_x, axes_y, log_a, log_b, epsilon):
        self.ax1, self.ax2 = axes_x
        self.ay1, self.ay2 = axes_y
        self.log_a = log_a          # (n1, n2)
        self.log_b = log_b          # (k1, k2)
        self.eps = float(epsilon)
        self.M1 = -0.5 * (self.ax1[:, None] - self.ay1[None, :]) ** 2 / self.eps
        self.M2 = -0.5 * (self.ax2[:, None] - self.ay2[None, :]) ** 2 / self.eps

    def _lse_q(self, Q):
        """S[i1, i2] = LSE_{j1, j2}(M1[i1,j1] + M2[i2,j2] + Q[j1,j2])."""
        W = _lse_matmul(self.M2, Q.T).T        # (j1, i2)
        return _lse_matmul(self.M1, W)

    def _lse_p(self, P):
        """T[j1, j2] = LSE_{i1, i2}(M1[i1,j1] + M2[i2,j2] + P[i1,i2])."""
        Y = _lse_matmul(self.M2.T, P.T).T      # (i1, j2)
        return _lse_matmul(self.M1.T, Y)

    def run(self, P=None, Q=None, tol=1e-7, max_iter=2000, check_every=5):
        """Returns (P, Q, marginal_error, iterations)."""
        if P is None:
            P = self.log_a.copy()
        if Q is None:
            Q = self.log_b.copy()
        err = np.inf
        for it in range(1, max_iter + 1):
            S = self._lse_q(Q)
            _check_finite(S)
            P = self.log_a - S
            T = self._lse_p(P)
            _check_finite(T)
            err_b = np.abs(np.exp(T + Q) - np.exp(self.log_b)).sum()
            Q = self.log_b - T
            if it % check_every == 0 or err_b <= tol:
                S2 = self._lse_q(Q)
                err_a = np.abs(np.exp(S2 + P) - np.exp(self.log_a)).sum()
                err = max(err_a, err_b)
                if err <= tol:
                    return P, Q, err, it
        raise ConvergenceError(
            f"Sinkhorn did not reach marginal error {tol} in {max_iter} "
            f"iterations (last error {err:.3e})", residual=err)

    def barycentric(self, Q):
        """Row-normalized plan expectation of the target point.

        Returns (n1, n2, 2) map values on the source grid; P cancels in the
        normalization so only Q enters.
        """
        W = _lse_matmul(self.M2, Q.T).T                     # (j1, i2)
        S = _lse_matmul(self.M1, W)                         # (i1, i2)
        E1 = np.exp(self.M1[:, :, None] + W[None, :, :] - S[:, None, :])
        T1 = np.einsum("ijr,j->ir", E1, self.ay1)
        R = _lse_matmul(self.M1, Q)                         # (i1, j2)
        E2 = np.exp(self.M2[None, :, :] + R[:, None, :] - S[:, :, None])
        T2 = np.einsum("rij,j->ri", E2, self.ay2)
        return np.stack([T1, T2], axis=-1)


class GridSinkhorn1D:
    def __init__(self, ax, ay, log_a, log_b, epsilon):
        self.ax, self.ay = np.asarray(ax, float), np.asarray(ay, float)
        self.log_a, self.log_b = log_a, log_b
        self.eps = float(epsilon)
        self.M = -0.5 * (self.ax[:, None] - self.ay[None, :]) ** 2 / self.eps

    def run(self, P=None, Q=None, tol=1e-7, max_iter=2000, check_every=5):
        if P is None:
            P = self.log_a.copy()
        if Q is None:
            Q = self.log_b.copy()
        err = np.inf
        for it in range(1, max_iter + 1):
            S = _lse_rows(self.M + Q[None, :])
            _check_finite(S)
            P = self.log_a - S
            T = _lse_rows(self.M.T + P[None, :])
            _check_finite(T)
            err_b = np.abs(np.exp(T + Q) - np.exp(self.log_b)).sum()
            Q = self.log_b - T
            if it % check_every == 0 or err_b <= tol:
                S2 = _lse_rows(self.M + Q[None, :])
                err_a = np.abs(np.exp(S2 + P) - np.exp(self.log_a)).sum()
                err = max(err_a, err_b)
                if err <= tol:
                    return P, Q, err, it
        raise ConvergenceError(
            f"Sinkhorn did not reach marginal error {tol} in {max_iter} "
            f"iterations (last error {err:.3e})", residual=err)

    def barycentric(self, Q):
        L = self.M + Q[None, :]
        L = L - _lse_rows(L)[:, None]
        return (np.exp(L) @ self.ay)[:, None]


class SampleSinkhorn:
    """Blockwise log-domain Sinkhorn between uniform point clouds."""

    def __init__(self, xs, ys, epsilon, block=4096):
        self.xs = np.asarray(xs, dtype=float)
        self.ys = np.asarray(ys, dtype=float)
        self.eps = float(epsilon)
        self.block = int(block)
        self.log_a = -np.log(self.xs.shape[0])
        self.log_b = -np.log(self.ys.shape[0])
        self._x2 = 0.5 * np.einsum("mi,mi->m", self.xs, self.xs) / self.eps
        self._y2 = 0.5 * np.einsum("mi,mi->m", self.ys, self.ys) / self.eps

    def _lse_q(self, Q):
        """S_i = LSE_j(M_ij + Q_j), M_ij = -c_ij / eps."""
        out = np.empty(self.xs.shape[0])
        q = Q - self._y2
        for lo in range(0, self.xs.shape[0], self.block):
            hi = min(lo + self.block, self.xs.shape[0])
            G = (self.xs[lo:hi] @ self.ys.T) / self.eps
            out[lo:hi] = _lse_rows(q[None, :] + G) - self._x2[lo:hi]
        return out

    def _lse_p(self, P):
        out = np.empty(self.ys.shape[0])
        p = P - self._x2
        for lo in range(0, self.ys.shape[0], self.block):
            hi = min(lo + self.block, self.ys.shape[0])
            G = (self.ys[lo:hi] @ self.xs.T) / self.eps
            out[lo:hi] = _lse_rows(p[None, :] + G) - self._y2[lo:hi]
        return out

    def run(self, P=None, Q=None, tol=1e-5, max_iter=1500, check_every=8):
        m, k = self.xs.shape[0], self.ys.shape[0]
        if P is None:
            P = np.full(m, self.log_a)
        if Q is None:
            Q = np.full(k, self.log_b)
        err = np.inf
        for it in range(1, max_iter + 1):
            S = self._lse_q(Q)
            _check_finite(S)
            P = self.log_a - S
            T = self._lse_p(P)
            _check_finite(T)
            err_b = np.abs(np.exp(T + Q) - np.exp(self.log_b)).sum()
            Q = self.log_b - T
            if it % check_every == 0 or err_b <= tol:
                S2 = self._lse_q(Q)
                err_a = np.abs(np.exp(S2 + P) - np.exp(self.log_a)).sum()
                err = max(err_a, err_b)
                if err <= tol:
                    return P, Q, err, it
        raise ConvergenceError(
            f"Sinkhorn did not reach marginal error {tol} in {max_iter} "
            f"iterations (last error {err:.3e})", residual=err)

    def barycentric(self, Q):
        out = np.empty_like(self.xs)
        q = Q - self._y2
        for lo in range(0, self.xs.shape[0], self.block):
            hi = min(lo + self.block, self.xs.shape[0])
            L = q[None, :] + (self.xs[lo:hi] @ self.ys.T) / self.eps
            L = L - _lse_rows(L)[:, None]
            out[lo:hi] = np.exp(L) @ self.ys
        return out


def rescale_potentials(P, Q, log_a, log_b, eps_old, eps_new):
    """Carry true dual potentials u, v to a new epsilon stage."""
    ratio = eps_old / eps_new
    return (log_a + (P - log_a) * ratio, log_b + (Q - log_b) * ratio)
