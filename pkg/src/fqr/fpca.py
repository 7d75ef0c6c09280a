"""Functional principal components: spectrum, truncation and score estimation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    AllZeroSpectrum,
    DataError,
    GridMismatch,
    NumericalFailure,
    SingularConditioning,
)
from .funcdata import FunctionalDataset, Grid
from .smooth import CovarianceEstimate, SmoothedCurves

ZERO_EIGENVALUE_RTOL = 1e-12


def _ro(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Spectrum:
    """All eigenpairs of a discretized covariance operator (nonnegative, descending)."""

    grid: Grid
    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray
    mean: np.ndarray
    noise_var: float = 0.0

    @property
    def positive(self) -> np.ndarray:
        return self.eigenvalues[self.eigenvalues > 0]


@dataclass(frozen=True)
class EigenSystem:
    """Leading ``K`` eigenpairs retained for regression.

    ``eigenfunctions`` is ``grid-size x K``, orthonormal in the quadrature
    inner product of ``grid``.
    """

    grid: Grid
    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray
    mean: np.ndarray
    noise_var: float = 0.0
    pve_achieved: float = 1.0

    def __post_init__(self):
        lam = _ro(self.eigenvalues).reshape(-1)
        phi = _ro(self.eigenfunctions)
        if phi.ndim == 1:
            phi = _ro(phi[:, None])
        if lam.size == 0 or np.any(lam <= 0) or np.any(np.diff(lam) > 0):
            raise DataError("eigenvalues must be positive and nonincreasing")
        if phi.shape != (self.grid.size, lam.size):
            raise GridMismatch("eigenfunction matrix does not match grid and eigenvalues")
        object.__setattr__(self, "eigenvalues", lam)
        object.__setattr__(self, "eigenfunctions", phi)
        object.__setattr__(self, "mean", _ro(self.mean).reshape(-1))

    @property
    def K(self) -> int:
        return self.eigenvalues.size

    def evaluate(self, t) -> np.ndarray:
        """Eigenfunctions at arbitrary times by linear interpolation, ``len(t) x K``."""
        t = np.asarray(t, dtype=float)
        pts = self.grid.points
        return np.column_stack([np.interp(t, pts, self.eigenfunctions[:, k]) for k in range(self.K)])

    def gram(self) -> np.ndarray:
        """Quadrature Gram matrix of the eigenfunctions (identity up to roundoff)."""
        phi = self.eigenfunctions
        return phi.T @ (self.grid.weights[:, None] * phi)


@dataclass(frozen=True)
class ScoreMatrix:
    """Regression design: a column of ones followed by the ``K`` fPC scores."""

    design: np.ndarray

    def __post_init__(self):
        d = _ro(self.design)
        if d.ndim != 2 or d.shape[1] < 1:
            raise DataError("design must be a 2-d matrix")
        if not np.all(d[:, 0] == 1.0):
            raise DataError("first design column must be all ones")
        object.__setattr__(self, "design", d)

    @classmethod
    def from_scores(cls, scores) -> "ScoreMatrix":
        scores = np.asarray(scores, dtype=float)
        if scores.ndim == 1:
            scores = scores[:, None]
        return cls(np.column_stack([np.ones(scores.shape[0]), scores]))

    @property
    def truncation(self) -> int:
        return self.design.shape[1] - 1

    @property
    def scores(self) -> np.ndarray:
        return self.design[:, 1:]

    @property
    def n(self) -> int:
        return self.design.shape[0]

    def flip(self, k: int) -> "ScoreMatrix":
        """Copy with score column ``k`` (1-based) negated."""
        d = self.design.copy()
        d[:, k] = -d[:, k]
        return ScoreMatrix(d)


def sign_normalize(phi: np.ndarray) -> np.ndarray:
    """Make each column positive at its largest-magnitude entry (first on ties)."""
    phi = np.array(phi, dtype=float)
    if phi.size == 0:
        return phi
    idx = np.argmax(np.abs(phi), axis=0)
    signs = np.sign(phi[idx, np.arange(phi.shape[1])])
    signs[signs == 0] = 1.0
    return phi * signs


def eigendecompose(cov: CovarianceEstimate) -> Spectrum:
    """Eigenpairs of the quadrature-discretized covariance operator.

    Solves the symmetric problem for ``W^{1/2} G W^{1/2}`` with
    ``W = diag(weights)`` and maps eigenvectors back with ``W^{-1/2}`` so that
    eigenfunctions are orthonormal under the grid quadrature. Negative
    eigenvalues, and positive ones below ``1e-12`` times the largest, are
    set to zero.
    """
    w = cov.grid.weights
    if np.any(w <= 0):
        raise NumericalFailure("quadrature weights must be positive for the eigenproblem")
    sw = np.sqrt(w)
    A = sw[:, None] * cov.surface * sw[None, :]
    A = (A + A.T) / 2
    try:
        vals, vecs = np.linalg.eigh(A)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"symmetric eigensolver failed: {exc}") from exc
    order = np.argsort(-vals, kind="stable")
    vals = vals[order]
    # negative values and round-off noise relative to the leading eigenvalue count as zero
    vals = np.where(vals > ZERO_EIGENVALUE_RTOL * max(vals[0], 0.0), vals, 0.0)
    phi = sign_normalize(vecs[:, order] / sw[:, None])
    return Spectrum(cov.grid, _ro(vals), _ro(phi), _ro(cov.mean), cov.noise_var)


def select_truncation(eigenvalues, pve: float = 0.95) -> int:
    """Smallest ``K`` whose leading eigenvalues explain at least ``pve`` of the total."""
    if not 0 < pve <= 1:
        raise ValueError("pve must lie in (0, 1]")
    lam = np.asarray(eigenvalues, dtype=float)
    lam = lam[lam > 0]
    if lam.size == 0:
        raise AllZeroSpectrum("no positive eigenvalue")
    frac = np.cumsum(lam) / lam.sum()
    # guard against the last cumulative fraction landing a hair under 1
    frac[-1] = 1.0
    return int(np.searchsorted(frac, pve - 1e-12) + 1)


def truncate(spectrum: Spectrum, K: int) -> EigenSystem:
    lam = spectrum.positive
    total = lam.sum()
    return EigenSystem(
        spectrum.grid,
        lam[:K],
        spectrum.eigenfunctions[:, :K],
        spectrum.mean,
        spectrum.noise_var,
        float(lam[:K].sum() / total),
    )


def fit_eigensystem(cov: CovarianceEstimate, pve: float = 0.95, K: int | None = None) -> EigenSystem:
    """Eigendecompose ``cov`` and keep ``K`` components (PVE rule unless ``K`` given)."""
    spectrum = eigendecompose(cov)
    if K is None:
        K = select_truncation(spectrum.eigenvalues, pve)
    elif K > spectrum.positive.size:
        raise AllZeroSpectrum(f"requested K={K} but only {spectrum.positive.size} positive eigenvalues")
    return truncate(spectrum, K)


def scores_quadrature(curves: SmoothedCurves, eigen: EigenSystem) -> ScoreMatrix:
    """Scores ``sum_g w_g (X_i(t_g) - mean(t_g)) phi_k(t_g)`` of smoothed curves."""
    if not curves.grid.same_as(eigen.grid):
        raise GridMismatch("smoothed curves and eigensystem use different grids")
    centered = curves.curves - eigen.mean
    scores = centered @ (eigen.grid.weights[:, None] * eigen.eigenfunctions)
    return ScoreMatrix.from_scores(scores)


def scores_conditional(dataset: FunctionalDataset, eigen: EigenSystem, noise_var: float | None = None) -> ScoreMatrix:
    """Best linear predictors of the scores given each subject's observations.

    For subject ``i`` with ``m_i`` observations the predictor is
    ``lambda_k phi_ik^T Sigma_i^{-1} (W_i - mu_i)`` with
    ``Sigma_i = Phi_i diag(lambda) Phi_i^T + sigma^2 I``. Eigenfunctions and the
    mean are linearly interpolated at the observation times. A ridge of
    ``1e-8 trace / m_i`` is added when ``Sigma_i`` is singular.
    """
    sigma2 = eigen.noise_var if noise_var is None else float(noise_var)
    if sigma2 < 0:
        raise DataError("noise variance must be nonnegative")
    lam = eigen.eigenvalues
    out = np.empty((dataset.n, eigen.K))
    m = dataset.m
    pts = eigen.grid.points
    for mi in np.unique(m):
        subj = np.flatnonzero(m == mi)
        T = np.vstack([dataset.times[i] for i in subj])
        W = np.vstack([dataset.values[i] for i in subj])
        resid = W - np.interp(T, pts, eigen.mean)
        Phi = np.stack([np.interp(T, pts, eigen.eigenfunctions[:, k]) for k in range(eigen.K)], axis=-1)
        LPt = lam[None, :, None] * np.swapaxes(Phi, 1, 2)  # (s, K, m)
        Sigma = Phi @ LPt + sigma2 * np.eye(mi)[None]
        out[subj] = _solve_conditioning(Sigma, resid, LPt)
    return ScoreMatrix.from_scores(out)


def _solve_conditioning(Sigma, resid, LPt) -> np.ndarray:
    mi = Sigma.shape[-1]
    cond = np.linalg.cond(Sigma)
    bad = ~np.isfinite(cond) | (cond > 1e12)
    if bad.any():
        tr = np.trace(Sigma, axis1=1, axis2=2)
        ridge = np.where(bad, 1e-8 * np.maximum(tr, 1e-300) / mi, 0.0)
        Sigma = Sigma + ridge[:, None, None] * np.eye(mi)[None]
    try:
        sol = np.linalg.solve(Sigma, resid[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise SingularConditioning(f"conditional covariance not invertible: {exc}") from exc
    if not np.all(np.isfinite(sol)):
        raise SingularConditioning("conditional covariance not invertible")
    return np.einsum("skm,sm->sk", LPt, sol)
