"""Covariance estimation and the adjusted Wald test for equal slopes across levels.

Notation follows the quantile regression on scores ``x_i = (1, xi_i1..xi_iK)``:

* ``D0 = E[x x^T]`` and ``D1(tau) = E[f_i x x^T]`` with ``f_i`` the conditional
  density of the response at its ``tau``-quantile;
* ``sigma_tilde`` has blocks ``(min(t_l, t_l') - t_l t_l') D1(t_l)^-1 D0 D1(t_l')^-1``;
* the adjusted statistic is ``n (R zeta)^T (R sigma_tilde R^T)^-1 R zeta`` with
  ``R = R1 (x) R2`` comparing the slope blocks of consecutive levels.

The covariance inflation caused by estimated scores is estimated from sample
fourth moments of the scores; it lies in the kernel of ``R`` under the null,
which is why the adjusted statistic ignores it.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import (
    EigenvalueGapTooSmall,
    GridMismatch,
    NotInvertible,
    SingularContrastCovariance,
)
from .fpca import EigenSystem
from .funcdata import Grid
from .quantreg import MultiFit, QuantileFit, _as_design, fit_multi, fit_quantile

logger = logging.getLogger(__name__)

COND_LIMIT = 1e12
DENSITY_EPS = 1e-6


@dataclass(frozen=True)
class CovarianceBlocks:
    D0_hat: np.ndarray
    D1_hat: tuple
    sigma_tilde: np.ndarray
    density_bandwidth: tuple
    levels: tuple
    clamped: tuple = ()

    def level_index(self, tau: float) -> int:
        for i, lv in enumerate(self.levels):
            if np.isclose(lv, tau):
                return i
        raise KeyError(f"level {tau} not among {self.levels}")


@dataclass(frozen=True)
class WaldResult:
    statistic: float
    df: int
    p_value: float
    R: np.ndarray
    K: int
    levels: tuple

    def to_dict(self) -> dict:
        return {
            "statistic": float(self.statistic),
            "df": int(self.df),
            "p_value": float(self.p_value),
            "K": int(self.K),
            "levels": [float(t) for t in self.levels],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


@dataclass(frozen=True)
class DensityWeights:
    """Conditional density estimates at the fitted quantile, one per subject."""

    values: np.ndarray
    bandwidth: float
    clamped: int


@dataclass(frozen=True)
class InflationCovariance:
    """Score-estimation inflation terms.

    ``blocks[l, l']`` is ``Theta_l Sigma0 Theta_l'^T`` for levels ``l, l'``.
    """

    sigma0_hat: np.ndarray
    blocks: np.ndarray
    levels: tuple

    def at(self, tau: float) -> np.ndarray:
        i = [j for j, lv in enumerate(self.levels) if np.isclose(lv, tau)]
        if not i:
            raise KeyError(f"level {tau} not among {self.levels}")
        return self.blocks[i[0], i[0]]

    def stacked(self) -> np.ndarray:
        """All blocks assembled into an ``L(K+1)`` square matrix."""
        L, _, p, _ = self.blocks.shape
        return self.blocks.transpose(0, 2, 1, 3).reshape(L * p, L * p)


@dataclass(frozen=True)
class BetaCurve:
    grid: Grid
    beta_hat: np.ndarray
    se: np.ndarray
    tau: float

    def to_csv(self) -> str:
        lines = ["t,beta_hat,se"]
        lines += [f"{t:.10g},{b:.17g},{s:.17g}" for t, b, s in zip(self.grid.points, self.beta_hat, self.se)]
        return "\n".join(lines) + "\n"


# -- contrasts and moment matrices --------------------------------------------------


def contrast_matrix(L: int, K: int) -> np.ndarray:
    """``R1 (x) R2``: forward differences over levels applied to slope blocks only."""
    if L < 2 or K < 1:
        raise ValueError("need L >= 2 levels and K >= 1 components")
    R1 = np.eye(L - 1, L) - np.eye(L - 1, L, k=1)
    R2 = np.hstack([np.zeros((K, 1)), np.eye(K)])
    return np.kron(R1, R2)


def estimate_D0(scores) -> np.ndarray:
    X = _as_design(scores)
    return X.T @ X / X.shape[0]


def estimate_D1(scores, weights) -> np.ndarray:
    X = _as_design(scores)
    f = np.asarray(weights, dtype=float).reshape(-1)
    if np.any(f <= 0):
        raise ValueError("density weights must be positive")
    return (X * f[:, None]).T @ X / X.shape[0]


def hall_sheather(n: int, tau: float, alpha: float = 0.05) -> float:
    """Hall-Sheather bandwidth (in probability units) for sparsity estimation."""
    z = stats.norm.ppf(tau)
    num = 1.5 * stats.norm.pdf(z) ** 2
    den = 2.0 * z**2 + 1.0
    return n ** (-1.0 / 3.0) * stats.norm.ppf(1.0 - alpha / 2.0) ** (2.0 / 3.0) * (num / den) ** (1.0 / 3.0)


def density_weights(design, y, tau: float, bandwidth: float | None = None, alpha: float = 0.05) -> DensityWeights:
    """Difference-quotient density estimates ``f_i`` at the ``tau``-th conditional quantile.

    Fits the two auxiliary levels ``tau +- h`` and sets
    ``f_i = 2h / max(x_i^T (theta_{tau+h} - theta_{tau-h}), 1e-6)``.
    """
    X = _as_design(design)
    n = X.shape[0]
    h = hall_sheather(n, tau, alpha) if bandwidth is None else float(bandwidth)
    h = min(h, 0.999 * min(tau, 1.0 - tau))
    upper = fit_quantile(X, y, tau + h)
    lower = fit_quantile(X, y, tau - h)
    spread = X @ (upper.theta - lower.theta)
    clamped = int((spread < DENSITY_EPS).sum())
    return DensityWeights(2.0 * h / np.maximum(spread, DENSITY_EPS), h, clamped)


def _inverse(M: np.ndarray, what: str) -> np.ndarray:
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise NotInvertible(f"{what} has condition number {cond:.3g}")
    return np.linalg.inv(M)


def assemble_sigma_tilde(D0, D1s, levels) -> np.ndarray:
    """Block matrix with ``(l, l')`` block ``(min - product) D1_l^-1 D0 D1_l'^-1``."""
    levels = tuple(float(t) for t in levels)
    if len(D1s) != len(levels):
        raise ValueError("one D1 matrix per level is required")
    D0 = np.asarray(D0, dtype=float)
    inv = [_inverse(np.asarray(D, dtype=float), f"D1 at tau={t}") for D, t in zip(D1s, levels)]
    L, p = len(levels), D0.shape[0]
    out = np.empty((L * p, L * p))
    for a in range(L):
        for b in range(L):
            c = min(levels[a], levels[b]) - levels[a] * levels[b]
            out[a * p:(a + 1) * p, b * p:(b + 1) * p] = c * inv[a] @ D0 @ inv[b]
    return (out + out.T) / 2


def covariance_blocks(design, y, levels, alpha: float = 0.05) -> CovarianceBlocks:
    """Plug-in ``D0``, ``D1(tau_l)`` and ``sigma_tilde`` for a design and response."""
    X = _as_design(design)
    D0 = estimate_D0(X)
    D1s, hs, clamped = [], [], []
    for tau in levels:
        dw = density_weights(X, y, tau, alpha=alpha)
        D1s.append(estimate_D1(X, dw.values))
        hs.append(dw.bandwidth)
        clamped.append(dw.clamped)
        if dw.clamped:
            # Crossing or coincident auxiliary fits; such rows dominate D1.
            logger.warning("tau=%g: %d of %d density weights hit the spread floor", tau, dw.clamped, X.shape[0])
    sigma = assemble_sigma_tilde(D0, D1s, levels)
    return CovarianceBlocks(D0, tuple(D1s), sigma, tuple(hs), tuple(float(t) for t in levels), tuple(clamped))


def adjusted_wald(zeta: MultiFit, sigma_tilde, n: int) -> WaldResult:
    """Adjusted Wald statistic for equal slope blocks with a chi-square p-value.

    The degrees of freedom are ``rank(R) = (L - 1) K``. When ``R sigma R^T`` is
    ill-conditioned a pseudo-inverse is used and the degrees of freedom drop
    to its numerical rank.
    """
    L, K = len(zeta.levels), zeta.K
    R = contrast_matrix(L, K)
    d = R @ zeta.zeta
    V = R @ np.asarray(sigma_tilde, dtype=float) @ R.T
    V = (V + V.T) / 2
    df = R.shape[0]
    cond = np.linalg.cond(V)
    if np.isfinite(cond) and cond <= COND_LIMIT:
        stat = float(n * d @ np.linalg.solve(V, d))
    else:
        rank = np.linalg.matrix_rank(V, hermitian=True)
        if rank == 0:
            raise SingularContrastCovariance("contrast covariance has rank 0")
        warnings.warn(f"contrast covariance ill-conditioned; using pseudo-inverse with df={rank}", RuntimeWarning)
        stat = float(n * d @ np.linalg.pinv(V, hermitian=True) @ d)
        df = int(rank)
    stat = max(stat, 0.0)
    p = float(stats.chi2.sf(stat, df))
    return WaldResult(stat, int(df), min(max(p, 0.0), 1.0), R, K, tuple(zeta.levels))


def wald_test(design, y, levels, alpha: float = 0.05):
    """Fit all levels and run the adjusted Wald test; returns ``(result, multi, blocks)``."""
    X = _as_design(design)
    multi = fit_multi(X, y, levels)
    blocks = covariance_blocks(X, y, multi.levels, alpha)
    return adjusted_wald(multi, blocks.sigma_tilde, X.shape[0]), multi, blocks


# -- inflation from estimated scores --------------------------------------------------


def score_fourth_moments(scores) -> np.ndarray:
    """Sample ``E[xi_k xi_j xi_k' xi_j']`` over score columns (intercept excluded)."""
    X = _as_design(scores)
    Z = X[:, 1:]
    return np.einsum("ik,ij,il,im->kjlm", Z, Z, Z, Z, optimize=True) / Z.shape[0]


def estimate_sigma0(scores, eigenvalues) -> np.ndarray:
    """``(K+1)^2`` square matrix of blocks ``A^{k,k'}``; blocks touching index 0 vanish."""
    lam = np.asarray(eigenvalues, dtype=float).reshape(-1)
    K = lam.size
    diff = lam[:, None] - lam[None, :]
    off = ~np.eye(K, dtype=bool)
    if K > 1 and np.abs(diff[off]).min() <= 1e-8:
        raise EigenvalueGapTooSmall("eigenvalues must be separated by more than 1e-8")
    F = np.zeros((K, K))
    F[off] = 1.0 / diff[off]
    M4 = score_fourth_moments(scores)
    if M4.shape[0] != K:
        raise GridMismatch("score columns and eigenvalues disagree")
    # A^{k,k'}_{j,j'} = F[k,j] F[k',j'] E(xi_k xi_j xi_k' xi_j'); F vanishes at j = k
    core = F[:, :, None, None] * F[None, None, :, :] * M4
    p = K + 1
    S = np.zeros((p, p, p, p))  # (k, j, k', j')
    S[1:, 1:, 1:, 1:] = core
    # row (k, j) -> k p + j and column (k', j') -> k' p + j', i.e. block (k, k') holds A^{k,k'}
    return S.reshape(p * p, p * p)


def theta_operator(theta) -> np.ndarray:
    """``I_{K+1} (x) theta^T`` so that ``(Theta S Theta^T)[k,k'] = theta^T A^{k,k'} theta``."""
    theta = np.asarray(theta, dtype=float).reshape(-1)
    return np.kron(np.eye(theta.size), theta[None, :])


def inflation_covariance(scores, eigenvalues, thetas, levels) -> InflationCovariance:
    """Estimated inflation ``Theta_l Sigma0 Theta_l'^T`` for every pair of levels."""
    sigma0 = estimate_sigma0(scores, eigenvalues)
    ops = [theta_operator(t) for t in thetas]
    L, p = len(ops), ops[0].shape[0]
    blocks = np.empty((L, L, p, p))
    for a in range(L):
        for b in range(L):
            blocks[a, b] = ops[a] @ sigma0 @ ops[b].T
    return InflationCovariance(sigma0, blocks, tuple(float(t) for t in levels))


def stacked_theta_operator(thetas) -> np.ndarray:
    """Vertical stack of ``Theta_l`` over levels."""
    return np.vstack([theta_operator(t) for t in thetas])


def beta_curve(
    fit: QuantileFit,
    eigen: EigenSystem,
    blocks: CovarianceBlocks,
    inflation: InflationCovariance,
    n: int,
) -> BetaCurve:
    """Slope function ``sum_k beta_k(tau) phi_k(t)`` with pointwise standard errors.

    The variance at ``t`` is
    ``[tau(1-tau) a^T D1^-1 D0 D1^-1 a + a^T Theta Sigma0 Theta^T a] / n`` with
    ``a(t) = (1, phi_1(t), ..., phi_K(t))``.
    """
    if fit.theta.size != eigen.K + 1:
        raise GridMismatch(f"fit has {fit.theta.size - 1} slopes but eigensystem has K={eigen.K}")
    tau = fit.tau
    l = blocks.level_index(tau)
    phi = eigen.eigenfunctions
    beta = phi @ fit.slope
    D1inv = _inverse(blocks.D1_hat[l], f"D1 at tau={tau}")
    sandwich = tau * (1 - tau) * D1inv @ blocks.D0_hat @ D1inv
    V = sandwich + inflation.at(tau)
    a = np.column_stack([np.ones(eigen.grid.size), phi])
    var = np.einsum("gi,ij,gj->g", a, V, a) / n
    return BetaCurve(eigen.grid, beta, np.sqrt(np.maximum(var, 0.0)), float(tau))
