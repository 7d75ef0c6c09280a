import json
import warnings

import numpy as np
import pytest
from scipy import stats

from oracles import gaussian_fourth_moment, hall_sheather_reference

from fqr.errors import EigenvalueGapTooSmall, GridMismatch, NotInvertible
from fqr.fpca import EigenSystem, ScoreMatrix, fit_eigensystem
from fqr.funcdata import make_grid
from fqr.inference import (
    CovarianceBlocks,
    InflationCovariance,
    adjusted_wald,
    assemble_sigma_tilde,
    beta_curve,
    contrast_matrix,
    covariance_blocks,
    density_weights,
    estimate_D0,
    estimate_D1,
    estimate_sigma0,
    hall_sheather,
    inflation_covariance,
    stacked_theta_operator,
    theta_operator,
    wald_test,
)
from fqr.pipeline import estimate_scores, fit_and_test
from fqr.quantreg import MultiFit, QuantileFit, fit_multi, fit_quantile
from fqr.simharness import SimConfig, generate_dataset
from fqr.smooth import CovarianceEstimate

GRID = make_grid(101)


def _multi(thetas, levels):
    fits = tuple(QuantileFit(t, np.asarray(th, float), np.zeros(1), 1, True, 0.0) for t, th in zip(levels, thetas))
    return MultiFit(tuple(levels), fits)


# -- contrasts and plug-in matrices --------------------------------------------------


def test_contrast_l2_k1():
    np.testing.assert_array_equal(contrast_matrix(2, 1), [[0, 1, 0, -1]])


def test_contrast_shape_and_rows():
    R = contrast_matrix(4, 3)
    assert R.shape == (9, 16)
    for row in R:
        assert (row == 1).sum() == 1 and (row == -1).sum() == 1 and (row != 0).sum() == 2
    theta = np.random.default_rng(0).normal(size=4)
    np.testing.assert_array_equal(R @ np.tile(theta, 4), 0.0)
    with pytest.raises(ValueError):
        contrast_matrix(1, 2)


def test_contrast_zero_iff_equal_slopes():
    R = contrast_matrix(3, 2)
    z = np.array([1.0, 2.0, 3.0, -5.0, 2.0, 3.0, 7.0, 2.0, 3.0])
    np.testing.assert_array_equal(R @ z, 0.0)
    z[4] += 1e-3
    assert np.abs(R @ z).max() > 0


def test_D0_examples():
    np.testing.assert_array_equal(estimate_D0(np.tile([1.0, 0.0, 0.0], (5, 1))), np.diag([1.0, 0.0, 0.0]))
    np.testing.assert_array_equal(estimate_D0(np.array([[1.0, 1.0], [1.0, -1.0]])), np.eye(2))


def test_D0_simulated_scores():
    sim = generate_dataset(SimConfig(n=5000, replications=1), 0)
    est = estimate_scores(sim.dataset, GRID, design="dense")
    D0 = estimate_D0(est.scores.design)
    np.testing.assert_allclose(D0, np.diag([1.0, 1.0, 0.5, 0.25]), atol=0.1)
    assert np.abs(D0 - D0.T).max() < 1e-10
    assert np.linalg.eigvalsh(D0).min() > -1e-10


def test_D1_examples():
    X = np.column_stack([np.ones(20), np.random.default_rng(0).normal(size=20)])
    np.testing.assert_allclose(estimate_D1(X, np.full(20, 0.3)), 0.3 * estimate_D0(X), atol=1e-15)
    np.testing.assert_allclose(estimate_D1(np.array([[1.0, 2.0]]), [0.5]), [[0.5, 1.0], [1.0, 2.0]])
    with pytest.raises(ValueError):
        estimate_D1(X, np.zeros(20))


def test_hall_sheather_matches_reference():
    for n in (50, 1000, 5000):
        for tau in (0.1, 0.3, 0.5, 0.9):
            assert abs(hall_sheather(n, tau) - hall_sheather_reference(n, tau)) < 1e-14


def test_density_normal_median():
    y = np.random.default_rng(1).standard_normal(5000)
    dw = density_weights(np.ones((5000, 1)), y, 0.5)
    assert abs(dw.values.mean() - stats.norm.pdf(0)) < 0.05
    assert dw.clamped == 0


def test_density_exponential_median():
    y = np.random.default_rng(2).exponential(size=5000)
    dw = density_weights(np.ones((5000, 1)), y, 0.5)
    assert abs(dw.values.mean() - 0.5) < 0.07


def test_density_clamped_when_quantiles_coincide():
    dw = density_weights(np.ones((30, 1)), np.full(30, 2.0), 0.5)
    assert dw.clamped == 30
    np.testing.assert_allclose(dw.values, 2 * dw.bandwidth / 1e-6)


def test_density_bandwidth_clamped_near_boundary():
    y = np.random.default_rng(3).standard_normal(20)
    dw = density_weights(np.ones((20, 1)), y, 0.02)
    assert dw.bandwidth <= 0.999 * 0.02


def test_D1_homoscedastic_simulation():
    sim = generate_dataset(SimConfig(n=5000, gamma=0.0, replications=1), 0)
    X = estimate_scores(sim.dataset, GRID, design="dense").scores.design
    D0 = estimate_D0(X)
    big = np.abs(D0) > 0.1
    for tau in (0.1, 0.3, 0.5):
        D1 = estimate_D1(X, density_weights(X, sim.dataset.responses, tau).values)
        ratio = D1[big] / (stats.norm.pdf(stats.norm.ppf(tau)) * D0[big])
        assert np.all(np.abs(ratio - 1.0) < 0.1)


def test_sigma_tilde_examples():
    single = assemble_sigma_tilde(np.eye(2), [2 * np.eye(2)], [0.3])
    np.testing.assert_allclose(single, 0.21 / 4 * np.eye(2))
    S = assemble_sigma_tilde(np.eye(2), [np.eye(2), np.eye(2)], [0.25, 0.75])
    np.testing.assert_allclose(S[:2, :2], 0.1875 * np.eye(2))
    np.testing.assert_allclose(S[2:, 2:], 0.1875 * np.eye(2))
    np.testing.assert_allclose(S[:2, 2:], 0.0625 * np.eye(2))


def test_sigma_tilde_symmetry_random():
    rng = np.random.default_rng(4)
    for _ in range(20):
        A = rng.normal(size=(3, 3))
        D0 = A @ A.T
        D1s = []
        for _ in range(3):
            B = rng.normal(size=(3, 3))
            D1s.append(B @ B.T + 0.5 * np.eye(3))
        S = assemble_sigma_tilde(D0, D1s, [0.2, 0.5, 0.8])
        assert np.abs(S - S.T).max() < 1e-10
        inv = np.linalg.inv(D1s[1])
        np.testing.assert_allclose(S[3:6, 3:6], 0.25 * inv @ D0 @ inv, rtol=1e-10, atol=1e-12)


def test_sigma_tilde_not_invertible_names_level():
    with pytest.raises(NotInvertible, match="0.4"):
        assemble_sigma_tilde(np.eye(2), [np.eye(2), np.zeros((2, 2))], [0.2, 0.4])


def test_covariance_blocks_diagonal_block_identity():
    sim = generate_dataset(SimConfig(n=400, replications=1), 1)
    X = ScoreMatrix.from_scores(sim.true_scores).design
    blocks = covariance_blocks(X, sim.dataset.responses, (0.2, 0.4))
    inv = np.linalg.inv(blocks.D1_hat[1])
    np.testing.assert_allclose(blocks.sigma_tilde[4:, 4:], 0.24 * inv @ blocks.D0_hat @ inv, rtol=1e-9, atol=1e-12)
    assert len(blocks.density_bandwidth) == 2


# -- the adjusted Wald statistic -----------------------------------------------------


def test_wald_equal_blocks_zero():
    multi = _multi([[0.1, 1.0, 2.0], [0.5, 1.0, 2.0]], (0.3, 0.6))
    res = adjusted_wald(multi, np.eye(6), 100)
    assert res.statistic == 0.0 and res.p_value == 1.0 and res.df == 2


def test_wald_scalar_formula():
    multi = _multi([[0.0, 1.5], [0.0, 1.0]], (0.3, 0.6))
    rng = np.random.default_rng(5)
    A = rng.normal(size=(4, 4))
    sigma = A @ A.T + np.eye(4)
    R = contrast_matrix(2, 1)
    s = float((R @ sigma @ R.T)[0, 0])
    res = adjusted_wald(multi, sigma, 250)
    assert abs(res.statistic - 250 * 0.25 / s) < 1e-10
    assert abs(res.p_value - stats.chi2.sf(res.statistic, 1)) < 1e-14


def test_wald_pseudo_inverse_fallback():
    multi = _multi([[0.0, 1.0, 0.0], [0.0, 0.0, 0.0]], (0.3, 0.6))
    sigma = np.zeros((6, 6))
    sigma[1, 1] = sigma[4, 4] = 1.0  # second slope has no variance
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        res = adjusted_wald(multi, sigma, 10)
    assert res.df == 1
    assert any("pseudo-inverse" in str(w.message) for w in rec)
    assert abs(res.statistic - 10 * 1.0 / 2.0) < 1e-10


def test_wald_json():
    multi = _multi([[0.0, 1.5], [0.0, 1.0]], (0.3, 0.6))
    payload = json.loads(adjusted_wald(multi, np.eye(4), 10).to_json())
    assert set(payload) == {"statistic", "df", "p_value", "K", "levels"}
    assert payload["df"] == 1 and payload["K"] == 1 and payload["levels"] == [0.3, 0.6]


def test_wald_sign_flip_invariance():
    sim = generate_dataset(SimConfig(n=500, gamma=0.5, replications=1), 2)
    X = estimate_scores(sim.dataset, GRID, design="dense").scores.design
    y = sim.dataset.responses
    base, _, _ = wald_test(X, y, (0.1, 0.2, 0.3, 0.4))
    for k in range(1, X.shape[1]):
        flipped = ScoreMatrix(X).flip(k).design
        res, _, _ = wald_test(flipped, y, (0.1, 0.2, 0.3, 0.4))
        assert abs(res.statistic - base.statistic) <= 1e-8 * max(1.0, base.statistic)


# -- inflation ------------------------------------------------------------------------


def test_inflation_structure():
    rng = np.random.default_rng(6)
    scores = ScoreMatrix.from_scores(rng.normal(size=(300, 3)) * np.sqrt([1.0, 0.5, 0.25]))
    S0 = estimate_sigma0(scores.design, [1.0, 0.5, 0.25])
    p = 4
    blocks = S0.reshape(p, p, p, p)  # (k, j, k', j')
    assert np.all(blocks[0] == 0) and np.all(blocks[:, :, 0] == 0)
    assert np.all(blocks[:, 0] == 0) and np.all(blocks[:, :, :, 0] == 0)
    for k in range(1, p):
        assert np.all(blocks[k, k] == 0) and np.all(blocks[:, :, k, k] == 0)
    assert np.abs(S0 - S0.T).max() < 1e-12


def test_sigma0_against_gaussian_moments():
    lam = np.array([1.0, 0.5, 0.25])
    rng = np.random.default_rng(7)
    xi = rng.normal(size=(5000, 3)) * np.sqrt(lam)
    design = ScoreMatrix.from_scores(xi).design
    S0 = estimate_sigma0(design, lam).reshape(4, 4, 4, 4)
    for k in range(3):
        for j in range(3):
            for kp in range(3):
                for jp in range(3):
                    if k == j or kp == jp:
                        continue
                    factor = 1.0 / ((lam[k] - lam[j]) * (lam[kp] - lam[jp]))
                    m4 = np.mean(xi[:, k] * xi[:, j] * xi[:, kp] * xi[:, jp])
                    assert abs(S0[k + 1, j + 1, kp + 1, jp + 1] - factor * m4) < 1e-12
                    assert abs(m4 - gaussian_fourth_moment(lam, k, j, kp, jp)) < 0.1


def test_inflation_zero_slope():
    rng = np.random.default_rng(8)
    design = ScoreMatrix.from_scores(rng.normal(size=(200, 3))).design
    infl = inflation_covariance(design, [1.0, 0.5, 0.25], [[0.7, 0.0, 0.0, 0.0]], (0.5,))
    np.testing.assert_array_equal(infl.at(0.5), 0.0)


def test_inflation_vanishes_in_contrast_for_equal_slopes():
    rng = np.random.default_rng(9)
    lam = [1.0, 0.5, 0.25]
    design = ScoreMatrix.from_scores(rng.normal(size=(500, 3)) * np.sqrt(lam)).design
    slope = rng.normal(size=3)
    thetas = [np.concatenate([[a], slope]) for a in (-1.0, 0.0, 0.4, 2.0)]
    S0 = estimate_sigma0(design, lam)
    A = stacked_theta_operator(thetas)
    R = contrast_matrix(4, 3)
    assert np.abs(R @ A @ S0 @ A.T @ R.T).max() < 1e-10
    infl = inflation_covariance(design, lam, thetas, (0.1, 0.2, 0.3, 0.4))
    np.testing.assert_allclose(infl.stacked(), A @ S0 @ A.T, atol=1e-12)


def test_theta_operator_quadratic_form():
    theta = np.array([0.3, -1.0, 2.0])
    Th = theta_operator(theta)
    assert Th.shape == (3, 9)
    rng = np.random.default_rng(10)
    M = rng.normal(size=(9, 9))
    out = Th @ M @ Th.T
    for k in range(3):
        for kp in range(3):
            assert abs(out[k, kp] - theta @ M[3 * k:3 * k + 3, 3 * kp:3 * kp + 3] @ theta) < 1e-12


def test_eigenvalue_gap_error():
    design = ScoreMatrix.from_scores(np.random.default_rng(0).normal(size=(20, 2))).design
    with pytest.raises(EigenvalueGapTooSmall):
        inflation_covariance(design, [0.5, 0.5 - 1e-10], [[0, 1, 1]], (0.5,))


# -- slope curves --------------------------------------------------------------------


def _eigen():
    from oracles import analytic_covariance

    cov = CovarianceEstimate(GRID, np.zeros(GRID.size), analytic_covariance(GRID.points))
    return fit_eigensystem(cov, K=3)


def test_beta_curve_unit_slope():
    eig = _eigen()
    rng = np.random.default_rng(11)
    X = ScoreMatrix.from_scores(rng.normal(size=(300, 3)) * np.sqrt(eig.eigenvalues)).design
    y = X @ np.array([0.0, 1.0, 0.0, 0.0]) + rng.normal(size=300)
    blocks = covariance_blocks(X, y, (0.5,))
    fit = QuantileFit(0.5, np.array([0.0, 1.0, 0.0, 0.0]), np.zeros(300), 1, True, 0.0)
    infl = inflation_covariance(X, eig.eigenvalues, [fit.theta], (0.5,))
    curve = beta_curve(fit, eig, blocks, infl, 300)
    np.testing.assert_array_equal(curve.beta_hat, eig.eigenfunctions[:, 0])
    assert np.all(curve.se > 0)
    lines = curve.to_csv().splitlines()
    assert lines[0] == "t,beta_hat,se" and len(lines) == GRID.size + 1


def test_beta_curve_truncation_mismatch():
    eig = _eigen()
    fit = QuantileFit(0.5, np.zeros(3), np.zeros(1), 1, True, 0.0)
    blocks = CovarianceBlocks(np.eye(3), (np.eye(3),), np.eye(3), (0.1,), (0.5,))
    infl = InflationCovariance(np.zeros((9, 9)), np.zeros((1, 1, 3, 3)), (0.5,))
    with pytest.raises(GridMismatch):
        beta_curve(fit, eig, blocks, infl, 10)


def test_beta_curve_recovers_median_slope():
    sim = generate_dataset(SimConfig(n=2000, gamma=1.0, replications=1), 0)
    report = fit_and_test(sim.dataset, (0.5,), GRID, design="dense")
    curve = report.curves()[0]
    target = GRID.points - 0.5
    assert float(GRID.integrate((curve.beta_hat - target) ** 2)) < 0.05


def test_beta_curve_sign_flip_invariance():
    sim = generate_dataset(SimConfig(n=500, gamma=1.0, replications=1), 3)
    est = estimate_scores(sim.dataset, GRID, design="dense")
    y = sim.dataset.responses
    fit = fit_quantile(est.scores.design, y, 0.3)
    base = est.eigen.eigenfunctions @ fit.slope
    for k in range(est.eigen.K):
        flipped = est.scores.flip(k + 1).design
        phi = est.eigen.eigenfunctions.copy()
        phi[:, k] *= -1
        refit = fit_quantile(flipped, y, 0.3)
        assert np.abs(phi @ refit.slope - base).max() < 1e-8
