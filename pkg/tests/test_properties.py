"""Property-based checks of the building blocks."""

import numpy as np
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import check_loss, linprog_quantile

from fqr.fpca import select_truncation, sign_normalize
from fqr.funcdata import FunctionalDataset, load_dataset, make_grid, write_dataset
from fqr.inference import assemble_sigma_tilde, contrast_matrix, theta_operator
from fqr.quantreg import fit_quantile, pinball_loss
from fqr.smooth import local_linear

levels = st.floats(0.02, 0.98)
finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


@given(u=finite, tau=levels)
def test_pinball_nonnegative_and_homogeneous(u, tau):
    assert pinball_loss(u, tau) >= 0
    assert abs(pinball_loss(3.0 * u, tau) - 3.0 * pinball_loss(u, tau)) <= 1e-9 * (1 + abs(u))


@st.composite
def regression(draw, max_n=25, max_k=2):
    K = draw(st.integers(0, max_k))
    n = draw(st.integers(K + 3, max_n))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(n), rng.normal(size=(n, K))])
    y = X @ rng.normal(size=K + 1) + rng.standard_t(3, size=n)
    return X, y


@settings(max_examples=60)
@given(data=regression(), tau=levels)
def test_fit_matches_linear_program(data, tau):
    X, y = data
    fit = fit_quantile(X, y, tau)
    ref, _ = linprog_quantile(X, y, tau)
    assert fit.objective <= ref + 1e-7 * max(1.0, ref)
    assert abs(fit.objective - check_loss(y - X @ fit.theta, tau)) < 1e-9 * max(1.0, ref)


@settings(max_examples=40)
@given(data=regression(), tau=levels, c=st.floats(0.1, 10.0))
def test_fit_scale_equivariance(data, tau, c):
    X, y = data
    a = fit_quantile(X, y, tau)
    b = fit_quantile(X, c * y, tau)
    # Optimal sets may be non-unique; compare objectives, which scale exactly.
    assert abs(b.objective - c * a.objective) <= 1e-7 * max(1.0, c * a.objective)


@settings(max_examples=40)
@given(data=regression(), tau=levels, shift=st.lists(finite, min_size=3, max_size=3))
def test_fit_shift_equivariance(data, tau, shift):
    X, y = data
    g = np.asarray(shift[: X.shape[1]])
    a = fit_quantile(X, y, tau)
    b = fit_quantile(X, y + X @ g, tau)
    assert abs(b.objective - a.objective) <= 1e-7 * max(1.0, a.objective)


@given(L=st.integers(2, 5), K=st.integers(1, 4), seed=st.integers(0, 10**6))
def test_contrast_kernel_is_equal_slopes(L, K, seed):
    rng = np.random.default_rng(seed)
    R = contrast_matrix(L, K)
    assert np.linalg.matrix_rank(R) == (L - 1) * K
    slope = rng.normal(size=K)
    zeta = np.concatenate([np.concatenate([[rng.normal()], slope]) for _ in range(L)])
    assert np.abs(R @ zeta).max() < 1e-12
    zeta[-1] += 1.0
    assert np.abs(R @ zeta).max() > 0.5


@given(
    lv=st.lists(levels, min_size=1, max_size=4, unique=True).map(sorted),
    seed=st.integers(0, 10**6),
)
def test_sigma_tilde_symmetric_psd(lv, seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(3, 3))
    D0 = A @ A.T + 0.1 * np.eye(3)
    D1s = []
    for _ in lv:
        B = rng.normal(size=(3, 3))
        D1s.append(B @ B.T + np.eye(3))
    S = assemble_sigma_tilde(D0, D1s, lv)
    assert np.abs(S - S.T).max() < 1e-10
    assert np.linalg.eigvalsh(S).min() > -1e-8 * np.abs(S).max()


@given(theta=arrays(float, st.integers(1, 4), elements=finite), seed=st.integers(0, 10**6))
def test_theta_operator_blocks(theta, seed):
    p = theta.size
    M = np.random.default_rng(seed).normal(size=(p * p, p * p))
    out = theta_operator(theta) @ M @ theta_operator(theta).T
    ref = np.einsum("j,kjlm,m->kl", theta, M.reshape(p, p, p, p), theta)
    np.testing.assert_allclose(out, ref, rtol=1e-9, atol=1e-9 * (1 + np.abs(ref).max()))


@given(num=st.integers(2, 400))
def test_grid_weights(num):
    g = make_grid(num)
    assert abs(g.weights.sum() - 1.0) < 1e-12
    assert abs(g.integrate(g.points) - 0.5) < 1e-12


@given(vals=st.lists(st.floats(0.0, 10.0), min_size=1, max_size=8), p1=st.floats(0.05, 1.0), p2=st.floats(0.05, 1.0))
def test_truncation_monotone_in_pve(vals, p1, p2):
    vals = sorted(vals, reverse=True)
    assume(vals[0] > 0)
    lo, hi = sorted((p1, p2))
    assert 1 <= select_truncation(vals, lo) <= select_truncation(vals, hi) <= len(vals)


@given(seed=st.integers(0, 10**6), cols=st.integers(1, 4))
def test_sign_normalize_idempotent(seed, cols):
    phi = np.random.default_rng(seed).normal(size=(30, cols))
    once = sign_normalize(phi)
    np.testing.assert_array_equal(sign_normalize(once), once)
    np.testing.assert_array_equal(sign_normalize(-phi), once)


@settings(max_examples=30)
@given(a=finite, b=finite, h=st.floats(0.2, 1.0), seed=st.integers(0, 10**6))
def test_local_linear_reproduces_lines(a, b, h, seed):
    t = np.sort(np.random.default_rng(seed).uniform(0, 1, 40))
    assume(np.diff(np.concatenate([[0.0], t, [1.0]])).max() < h / 1.05)
    points = np.linspace(0, 1, 21)
    got = local_linear(t, a + b * t, points, h)
    np.testing.assert_allclose(got, a + b * points, atol=1e-8 * (1 + abs(a) + abs(b)))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10**6), n=st.integers(1, 6))
def test_dataset_csv_round_trip(tmp_path_factory, seed, n):
    rng = np.random.default_rng(seed)
    times = tuple(np.sort(rng.choice(np.linspace(0, 1, 101), rng.integers(1, 8), replace=False)) for _ in range(n))
    values = tuple(rng.normal(size=len(t)) * 10.0 ** rng.integers(-5, 5) for t in times)
    ds = FunctionalDataset(times, values, rng.normal(size=n))
    d = tmp_path_factory.mktemp("rt")
    write_dataset(ds, d / "c.csv", d / "r.csv")
    back = load_dataset(d / "c.csv", d / "r.csv")
    np.testing.assert_array_equal(back.responses, ds.responses)
    for u, v in zip(back.values, ds.values):
        np.testing.assert_array_equal(u, v)
