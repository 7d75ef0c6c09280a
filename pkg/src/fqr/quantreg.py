"""Linear quantile regression on a score design.

The check-loss problem ``min_b sum_i w_i rho_tau(y_i - x_i^T b)`` is solved
as a linear program by a primal-dual interior-point method working on the
bounded dual

    max y^T d   s.t.  X^T d = 0,   w_i (tau_i - 1) <= d_i <= w_i tau_i,

written in the shifted variable ``a = d + w (1 - tau)`` with ``0 <= a <= w``.
Each step solves one ``p x p`` normal-equation system (Mehrotra
predictor-corrector). On exit the solution is snapped to a basic (vertex)
solution when that vertex carries an exact optimality certificate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import FQRError, InvalidSize, NoConvergence, RankDeficientDesign

GRAM_COND_LIMIT = 1e12
GAP_TOL = 1e-8
MAX_ITER = 100
_STEP = 0.99995


def pinball_loss(u, tau: float):
    """Check loss ``u (tau - 1{u < 0})``, elementwise."""
    if not 0 < tau < 1:
        raise ValueError("tau must lie in (0, 1)")
    u = np.asarray(u, dtype=float)
    out = u * (tau - (u < 0))
    return float(out) if out.ndim == 0 else out


def psi(u, tau: float) -> np.ndarray:
    return tau - (np.asarray(u) < 0)


def _as_design(design) -> np.ndarray:
    X = np.asarray(getattr(design, "design", design), dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return X


@dataclass(frozen=True)
class QuantileFit:
    """Single-level quantile regression fit."""

    tau: float
    theta: np.ndarray
    residuals: np.ndarray
    iterations: int
    converged: bool
    objective: float

    @property
    def intercept(self) -> float:
        return float(self.theta[0])

    @property
    def slope(self) -> np.ndarray:
        return self.theta[1:]

    def interpolated(self, rtol: float = 1e-9) -> int:
        """Number of observations fitted exactly (a diagnostic)."""
        scale = max(1.0, float(np.abs(self.residuals).max(initial=0.0)))
        return int((np.abs(self.residuals) <= rtol * scale).sum())


@dataclass(frozen=True)
class MultiFit:
    """Independent fits at ascending levels, stacked into ``zeta``."""

    levels: tuple
    fits: tuple

    @property
    def zeta(self) -> np.ndarray:
        return np.concatenate([f.theta for f in self.fits])

    @property
    def K(self) -> int:
        return self.fits[0].theta.size - 1

    def fit_at(self, tau: float) -> QuantileFit:
        for f in self.fits:
            if np.isclose(f.tau, tau):
                return f
        raise KeyError(f"no fit at tau={tau}")


@dataclass(frozen=True)
class CompositeFit:
    """Slope shared across levels with level-specific intercepts."""

    levels: tuple
    shared_slope: np.ndarray
    intercepts: np.ndarray
    method: str
    weights: np.ndarray

    def theta(self, tau: float) -> np.ndarray:
        """Coefficient vector ``(intercept(tau), shared slope)`` for a fitted level."""
        idx = [i for i, lv in enumerate(self.levels) if np.isclose(lv, tau)]
        if not idx:
            raise KeyError(f"level {tau} was not part of the composite fit")
        return np.concatenate([[self.intercepts[idx[0]]], self.shared_slope])


# -- interior point --------------------------------------------------------------


def _weighted_loss(res, tau_vec, w_vec) -> float:
    return float(np.sum(w_vec * res * (tau_vec - (res < 0))))


def _interior_point(X, y, tau_vec, w_vec, tol=GAP_TOL, max_iter=MAX_ITER):
    n, p = X.shape
    A = X.T
    ub = w_vec
    x = (1.0 - tau_vec) * w_vec
    s = ub - x
    b_rhs = A @ x

    gram = A @ X
    yd = linalg.solve(gram, A @ (-y), assume_a="pos")
    r = -y - X @ yd
    delta = max(np.abs(r).mean(), 1e-8) * 0.5
    z = np.maximum(r, 0.0) + delta
    v = np.maximum(-r, 0.0) + delta

    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        gap = x @ z + s @ v
        obj = _weighted_loss(y + X @ yd, tau_vec, w_vec)
        if gap <= tol * max(1.0, abs(obj)):
            converged = True
            break

        rd = -y - A.T @ yd - z + v
        rp = b_rhs - A @ x
        q = 1.0 / (z / x + v / s)
        try:
            factor = linalg.cho_factor((A * q) @ X, check_finite=False)
        except linalg.LinAlgError:
            break

        def direction(rhs_z, rhs_v):
            dy = linalg.cho_solve(factor, A @ (q * (rd - rhs_z / x + rhs_v / s)) + rp, check_finite=False)
            dx = q * (A.T @ dy - rd + rhs_z / x - rhs_v / s)
            dz = (rhs_z - z * dx) / x
            dv = (rhs_v + v * dx) / s
            return dx, dy, dz, dv

        dx, dy, dz, dv = direction(-x * z, -s * v)
        ap = min(1.0, _max_step(x, dx), _max_step(s, -dx))
        ad = min(1.0, _max_step(z, dz), _max_step(v, dv))
        gap_aff = (x + ap * dx) @ (z + ad * dz) + (s - ap * dx) @ (v + ad * dv)
        mu = (gap_aff / gap) ** 3 * gap / (2 * n)

        dx2, dy2, dz2, dv2 = direction(mu - x * z - dx * dz, mu - s * v + dx * dv)
        ap = min(1.0, _STEP * min(_max_step(x, dx2), _max_step(s, -dx2)))
        ad = min(1.0, _STEP * min(_max_step(z, dz2), _max_step(v, dv2)))
        x = x + ap * dx2
        s = ub - x
        yd = yd + ad * dy2
        z = z + ad * dz2
        v = v + ad * dv2
    return -yd, it, converged


def _max_step(val, d) -> float:
    neg = d < 0
    if not neg.any():
        return np.inf
    return float(np.min(-val[neg] / d[neg]))


def _vertex_certificate(X, y, tau_vec, w_vec, basis) -> np.ndarray | None:
    """Vertex through ``basis`` if it is provably optimal, else ``None``."""
    Xh = X[basis]
    try:
        b = np.linalg.solve(Xh, y[basis])
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(b)) or np.linalg.cond(Xh) > 1e12:
        return None
    res = y - X @ b
    scale = max(1.0, float(np.abs(y).max()))
    nonbasic = np.ones(y.size, dtype=bool)
    nonbasic[basis] = False
    if np.all(np.abs(res) <= 1e-12 * scale):
        return b  # exact fit: the loss is zero, which is its lower bound
    if np.any(np.abs(res[nonbasic]) <= 1e-12 * scale):
        return None  # degenerate vertex: leave it to the interior solution
    g = X[nonbasic].T @ (w_vec[nonbasic] * psi(res[nonbasic], tau_vec[nonbasic]))
    d = np.linalg.solve(Xh.T, -g)
    lo = w_vec[basis] * (tau_vec[basis] - 1.0)
    hi = w_vec[basis] * tau_vec[basis]
    slack = 1e-10 * max(1.0, float(np.abs(w_vec).max()))
    if np.all(d >= lo - slack) and np.all(d <= hi + slack):
        return b
    return None


def _check_design(X: np.ndarray, n_min: int) -> None:
    n, p = X.shape
    if n < n_min:
        raise InvalidSize(f"need more than {p} observations for {p} coefficients, got {n}")
    if not np.all(np.isfinite(X)):
        raise RankDeficientDesign("design contains non-finite values")
    gram = X.T @ X
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > GRAM_COND_LIMIT:
        raise RankDeficientDesign(f"design Gram matrix condition number {cond:.3g} exceeds {GRAM_COND_LIMIT:g}")


def solve_check_loss(X, y, tau_vec, w_vec=None, tol=GAP_TOL, max_iter=MAX_ITER):
    """Minimize ``sum w_i rho_{tau_i}(y_i - x_i^T b)``; returns ``(b, iterations, converged)``."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    tau_vec = np.broadcast_to(np.asarray(tau_vec, dtype=float), (n,))
    w_vec = np.ones(n) if w_vec is None else np.broadcast_to(np.asarray(w_vec, dtype=float), (n,))
    b, iters, converged = _interior_point(X, y, tau_vec, w_vec, tol, max_iter)
    ip_loss = _weighted_loss(y - X @ b, tau_vec, w_vec)
    if not np.isfinite(ip_loss):
        ip_loss, converged = np.inf, False

    basis = np.argsort(np.abs(y - X @ b), kind="stable")[:p]
    vertex = _vertex_certificate(X, y, tau_vec, w_vec, basis)
    if vertex is not None:
        v_loss = _weighted_loss(y - X @ vertex, tau_vec, w_vec)
        if v_loss <= ip_loss + 1e-12 * max(1.0, abs(ip_loss)):
            return vertex, iters, True
    return b, iters, converged


def fit_quantile(design, y, tau: float, tol: float = GAP_TOL, max_iter: int = MAX_ITER) -> QuantileFit:
    """Quantile regression of ``y`` on ``design`` (whose first column is the intercept).

    Raises
    ------
    RankDeficientDesign
        The design Gram matrix has condition number above ``1e12``.
    NoConvergence
        The interior-point iteration stalled before reaching the gap tolerance.
    """
    if not 0 < tau < 1:
        raise ValueError("tau must lie in (0, 1)")
    X = _as_design(design)
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.size != X.shape[0]:
        raise InvalidSize("design and response lengths differ")
    _check_design(X, X.shape[1] + 1)
    b, iters, converged = solve_check_loss(X, y, tau, None, tol, max_iter)
    if not converged:
        raise NoConvergence(f"interior point did not converge in {max_iter} iterations (tau={tau})")
    res = y - X @ b
    return QuantileFit(float(tau), b, res, iters, converged, float(np.sum(pinball_loss(res, tau))))


def fit_multi(design, y, levels) -> MultiFit:
    """Separate fits at each level in ``levels`` (strictly ascending)."""
    levels = tuple(float(t) for t in levels)
    if len(levels) == 0 or any(b <= a for a, b in zip(levels, levels[1:])):
        raise ValueError("levels must be a nonempty strictly ascending sequence")
    fits = []
    for tau in levels:
        try:
            fits.append(fit_quantile(design, y, tau))
        except FQRError as exc:
            raise type(exc)(f"at level tau={tau}: {exc}") from exc
    return MultiFit(levels, tuple(fits))


def _level_weights(weights, L: int) -> np.ndarray:
    if weights is None:
        return np.full(L, 1.0 / L)
    w = np.asarray(weights, dtype=float).reshape(-1)
    if w.size != L or np.any(w < 0) or w.sum() <= 0:
        raise ValueError("weights must be nonnegative, one per level, with positive sum")
    return w / w.sum()


def fit_qae(multi: MultiFit, weights=None) -> CompositeFit:
    """Quantile average estimator: weighted average of the per-level slopes."""
    if not all(f.converged for f in multi.fits):
        raise NoConvergence("all per-level fits must have converged")
    w = _level_weights(weights, len(multi.levels))
    slopes = np.vstack([f.slope for f in multi.fits])
    intercepts = np.array([f.intercept for f in multi.fits])
    return CompositeFit(multi.levels, w @ slopes, intercepts, "QAE", w)


def fit_crq(design, y, levels, weights=None) -> CompositeFit:
    """Composite regression of quantiles.

    Minimizes ``sum_l w_l sum_i rho_{tau_l}(y_i - a_l - x_i^T s)`` jointly over
    per-level intercepts ``a_l`` and one slope ``s``.
    """
    X = _as_design(design)
    y = np.asarray(y, dtype=float).reshape(-1)
    levels = tuple(float(t) for t in levels)
    if any(not 0 < t < 1 for t in levels) or any(b <= a for a, b in zip(levels, levels[1:])):
        raise ValueError("levels must be strictly ascending in (0, 1)")
    L = len(levels)
    w = _level_weights(weights, L)
    n = X.shape[0]
    slopes = X[:, 1:]
    stacked = np.vstack([np.column_stack([np.tile(np.eye(L)[l], (n, 1)), slopes]) for l in range(L)])
    ys = np.tile(y, L)
    tau_vec = np.repeat(levels, n)
    w_vec = np.repeat(w, n)
    _check_design(stacked, stacked.shape[1] + 1)
    b, iters, converged = solve_check_loss(stacked, ys, tau_vec, w_vec)
    if not converged:
        raise NoConvergence("composite fit did not converge")
    return CompositeFit(levels, b[L:], b[:L], "CRQ", w)


def prediction_error(theta, design, y, tau: float) -> float:
    """Summed check loss of ``theta`` on held-out ``(design, y)``."""
    X = _as_design(design)
    theta = np.asarray(theta, dtype=float)
    if X.shape[1] != theta.size or X.shape[0] != np.size(y):
        raise InvalidSize("dimensions of theta, design and y disagree")
    return float(np.sum(pinball_loss(np.asarray(y, dtype=float) - X @ theta, tau)))
