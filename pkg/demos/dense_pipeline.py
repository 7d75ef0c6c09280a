"""
From noisy curves to an equal-slope test
========================================

Simulate curves observed on a dense grid, recover their principal
components, fit quantile regressions on the scores and test whether the
slope function is the same at every quantile level.
"""

import numpy as np

from fqr import fit_and_test, make_grid
from fqr.simharness import SimConfig, generate_dataset, legendre_basis

# %%
# Simulate 800 subjects, each observed at 100 equispaced times with
# measurement noise of standard deviation 1. ``gamma = 0`` makes the
# response homoscedastic, so every quantile slope equals ``beta(t) = t``.
config = SimConfig(n=800, design="dense", sigma=1.0, gamma=0.0, replications=1, seed=1)
sim = generate_dataset(config, replicate_index=0)
print(f"{sim.dataset.n} subjects, {int(sim.dataset.m[0])} observations each")

# %%
# Score estimation smooths each curve, estimates the covariance surface,
# and keeps enough components to explain 95% of the variance.
grid = make_grid(101)
report = fit_and_test(sim.dataset, levels=(0.1, 0.2, 0.3, 0.4), grid=grid)
eigen = report.estimate.eigen
print("retained components:", eigen.K)
print("eigenvalues:", np.round(eigen.eigenvalues, 3), "(truth 1, 0.5, 0.25)")

# %%
# Eigenfunctions are identified only up to sign; align before comparing.
truth = legendre_basis(grid.points)
for k in range(eigen.K):
    phi = eigen.eigenfunctions[:, k]
    sign = np.sign(phi @ truth[:, k])
    print(f"phi_{k + 1}: max error {np.abs(sign * phi - truth[:, k]).max():.3f}")

# %%
# The adjusted Wald test compares slope vectors across the four levels.
# Under this null model the p-value is uniform, so anything goes.
print(report.wald.to_json())

# %%
# Slope curves with pointwise standard errors. The constant part of ``t``
# lies outside the span of the eigenfunctions, so the estimable target is
# ``t - 1/2``.
for curve in report.curves()[:2]:
    err = grid.integrate((curve.beta_hat - (grid.points - 0.5)) ** 2)
    print(f"tau={curve.tau}: integrated squared error {err:.4f}, median se {np.median(curve.se):.3f}")

# %%
# Under an alternative (``gamma = 1``) the slope changes with the level and
# the test rejects.
alt = generate_dataset(SimConfig(n=800, gamma=1.0, replications=1, seed=1), 0)
print("alternative p-value:", fit_and_test(alt.dataset, (0.1, 0.2, 0.3, 0.4), grid).wald.p_value)
