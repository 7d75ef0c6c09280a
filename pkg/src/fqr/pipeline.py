"""End-to-end score estimation: smoothing, covariance, eigensystem and scores."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .fpca import EigenSystem, ScoreMatrix, fit_eigensystem, scores_conditional, scores_quadrature
from .funcdata import FunctionalDataset, Grid, atomic_write_text, classify_design, make_grid
from .inference import (
    BetaCurve,
    CovarianceBlocks,
    InflationCovariance,
    WaldResult,
    beta_curve,
    covariance_blocks,
    inflation_covariance,
    wald_test,
)
from .quantreg import MultiFit, fit_multi
from .smooth import (
    CovarianceEstimate,
    SmoothedCurves,
    estimate_covariance_dense,
    estimate_covariance_sparse,
    estimate_mean,
    smooth_curves,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScoreEstimate:
    """Everything produced on the way from raw observations to the regression design."""

    design: str
    scores: ScoreMatrix
    eigen: EigenSystem
    covariance: CovarianceEstimate
    curves: SmoothedCurves | None = None


@dataclass(frozen=True)
class FitReport:
    """Adjusted Wald test plus the fits and covariance pieces behind it."""

    estimate: ScoreEstimate
    wald: WaldResult | None
    multi: MultiFit
    blocks: CovarianceBlocks
    inflation: InflationCovariance

    def curves(self) -> list[BetaCurve]:
        n = self.estimate.scores.n
        return [beta_curve(f, self.estimate.eigen, self.blocks, self.inflation, n) for f in self.multi.fits]


def estimate_scores(
    dataset: FunctionalDataset,
    grid: Grid | None = None,
    pve: float = 0.95,
    design: str | None = None,
    K: int | None = None,
    bandwidth: float | None = None,
) -> ScoreEstimate:
    """Estimate fPC scores with the dense or the sparse route.

    Parameters
    ----------
    design : {"dense", "sparse"}, optional
        Chosen from the sampling counts by :func:`classify_design` when omitted.
    K : int, optional
        Fixed truncation; the PVE rule with ``pve`` is used otherwise.
    bandwidth : float, optional
        Trajectory bandwidth (dense route) or mean bandwidth (sparse route).
    """
    grid = make_grid() if grid is None else grid
    design = classify_design(dataset, grid) if design is None else design
    if design == "dense":
        m_min = int(dataset.m.min())
        if m_min < dataset.n ** 1.25:
            logger.warning(
                "dense route with m=%d below n^(5/4)=%.0f; smoothing error may not be negligible",
                m_min,
                dataset.n**1.25,
            )
        curves = smooth_curves(dataset, grid, bandwidth)
        cov = estimate_covariance_dense(curves)
        eigen = fit_eigensystem(cov, pve, K)
        return ScoreEstimate(design, scores_quadrature(curves, eigen), eigen, cov, curves)
    if design == "sparse":
        mean = estimate_mean(dataset, grid, bandwidth, design="sparse")
        cov = estimate_covariance_sparse(dataset, grid, mean)
        eigen = fit_eigensystem(cov, pve, K)
        return ScoreEstimate(design, scores_conditional(dataset, eigen), eigen, cov)
    raise ValueError(f"design must be 'dense' or 'sparse', got {design!r}")


def fit_and_test(
    dataset: FunctionalDataset,
    levels,
    grid: Grid | None = None,
    pve: float = 0.95,
    design: str | None = None,
    K: int | None = None,
) -> FitReport:
    """Score estimation, per-level fits, covariance blocks and (for ``L >= 2``) the test."""
    est = estimate_scores(dataset, grid, pve, design, K)
    X, y = est.scores.design, dataset.responses
    levels = tuple(float(t) for t in levels)
    if len(levels) >= 2:
        wald, multi, blocks = wald_test(X, y, levels)
    else:
        multi = fit_multi(X, y, levels)
        blocks = covariance_blocks(X, y, multi.levels)
        wald = None
    infl = inflation_covariance(X, est.eigen.eigenvalues, [f.theta for f in multi.fits], multi.levels)
    return FitReport(est, wald, multi, blocks, infl)


def write_intermediates(estimate: ScoreEstimate, directory, subject_ids=None) -> list[str]:
    """Dump mean, covariance, noise variance, eigensystem and scores as CSV files."""
    os.makedirs(directory, exist_ok=True)
    g = estimate.eigen.grid.points
    cov = estimate.covariance
    K = estimate.eigen.K
    s_idx, t_idx = np.meshgrid(g, g, indexing="ij")
    files = {
        "mean.csv": pd.DataFrame({"t": g, "mean": cov.mean}),
        "covariance.csv": pd.DataFrame({"s": s_idx.ravel(), "t": t_idx.ravel(), "covariance": cov.surface.ravel()}),
        "noise_variance.csv": pd.DataFrame({"noise_var": [cov.noise_var]}),
        "eigenvalues.csv": pd.DataFrame({"k": np.arange(1, K + 1), "eigenvalue": estimate.eigen.eigenvalues}),
        "eigenfunctions.csv": pd.DataFrame(
            {
                "k": np.repeat(np.arange(1, K + 1), g.size),
                "t": np.tile(g, K),
                "phi": estimate.eigen.eigenfunctions.T.ravel(),
            }
        ),
        "scores.csv": pd.DataFrame(estimate.scores.scores, columns=[f"xi{k}" for k in range(1, K + 1)]),
    }
    ids = np.arange(estimate.scores.n) if subject_ids is None else np.asarray(subject_ids)
    files["scores.csv"].insert(0, "subject_id", ids)
    written = []
    for name, frame in files.items():
        path = os.path.join(directory, name)
        atomic_write_text(path, frame.to_csv(index=False, float_format="%.17g"))
        written.append(path)
    return written
