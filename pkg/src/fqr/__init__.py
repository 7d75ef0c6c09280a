"""Functional quantile regression with an adjusted Wald test for equal slope functions.

Modules
-------
funcdata    containers, CSV ingestion and evaluation grids
smooth      local linear smoothing of trajectories, mean and covariance
fpca        eigendecomposition, truncation and score estimation
quantreg    check-loss regression at one or several levels, QAE and CRQ
inference   covariance estimation, the adjusted Wald test and slope curves
pipeline    end-to-end score estimation
simharness  simulated data, Monte Carlo studies, bootstrap and cross-validation
cli         the ``fqr`` command
"""

import logging

__version__ = "0.1.0"

logging.getLogger(__name__).addHandler(logging.NullHandler())

from .errors import DataError, FQRError, NumericalError  # noqa: E402
from .funcdata import FunctionalDataset, Grid, load_dataset, make_grid  # noqa: E402
from .fpca import EigenSystem, ScoreMatrix, fit_eigensystem  # noqa: E402
from .inference import adjusted_wald, beta_curve, contrast_matrix, wald_test  # noqa: E402
from .pipeline import estimate_scores, fit_and_test  # noqa: E402
from .quantreg import fit_crq, fit_multi, fit_qae, fit_quantile  # noqa: E402

__all__ = [
    "DataError",
    "EigenSystem",
    "FQRError",
    "FunctionalDataset",
    "Grid",
    "NumericalError",
    "ScoreMatrix",
    "adjusted_wald",
    "beta_curve",
    "contrast_matrix",
    "estimate_scores",
    "fit_and_test",
    "fit_crq",
    "fit_eigensystem",
    "fit_multi",
    "fit_qae",
    "fit_quantile",
    "load_dataset",
    "make_grid",
    "wald_test",
]
