"""Local linear kernel smoothing for functional covariates.

Two paths are provided:

* dense designs: every trajectory is smoothed on its own (working
  independence) and the mean and covariance are sample moments of the
  reconstructed curves;
* sparse designs: the mean is smoothed from the pooled observations and the
  covariance surface from pooled off-diagonal raw cross products, with the
  diagonal smoothed separately to estimate the noise variance.

All kernels are Epanechnikov. Pooled smoothers work on data linearly binned
onto the evaluation grid, which is exact when observation times are grid
points.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, GridMismatch, InsufficientPairs, InvalidSize
from .funcdata import FunctionalDataset, Grid

logger = logging.getLogger(__name__)

LADDER_SIZE = 10
CV_FOLDS = 10


def epanechnikov(u):
    """Epanechnikov kernel ``0.75 (1 - u^2)`` on ``|u| <= 1``."""
    u = np.asarray(u, dtype=float)
    return np.where(np.abs(u) <= 1.0, 0.75 * (1.0 - u * u), 0.0)


@dataclass(frozen=True)
class SmoothedCurves:
    """Trajectories reconstructed on a common grid (one row per subject)."""

    grid: Grid
    curves: np.ndarray
    bandwidth: float
    residual_var: float = 0.0
    fallback_points: int = 0

    def __post_init__(self):
        c = np.array(self.curves, dtype=float)
        if c.ndim != 2 or c.shape[1] != self.grid.size:
            raise InvalidSize("curves must be an n x grid-size matrix")
        if not np.all(np.isfinite(c)):
            raise DataError("smoothed curves contain non-finite values")
        c.setflags(write=False)
        object.__setattr__(self, "curves", c)

    @property
    def n(self) -> int:
        return self.curves.shape[0]


@dataclass(frozen=True)
class CovarianceEstimate:
    """Mean curve, covariance surface and noise variance on a grid."""

    grid: Grid
    mean: np.ndarray
    surface: np.ndarray
    noise_var: float = 0.0
    bandwidths: dict = field(default_factory=dict)

    def __post_init__(self):
        g = self.grid.size
        mean = np.array(self.mean, dtype=float).reshape(-1)
        surface = np.array(self.surface, dtype=float)
        if mean.size != g or surface.shape != (g, g):
            raise GridMismatch("mean/surface do not match the grid")
        surface = (surface + surface.T) / 2
        mean.setflags(write=False)
        surface.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "surface", surface)
        object.__setattr__(self, "noise_var", max(0.0, float(self.noise_var)))


# -- one-dimensional local linear smoothing -------------------------------------


def smoother_matrix(t, points, bandwidth: float) -> tuple[np.ndarray, int]:
    """Local linear weights mapping observations at ``t`` to values at ``points``.

    Returns ``(H, n_fallback)`` with ``H @ w`` the smoothed values. Where fewer
    than two distinct observation times fall inside the kernel window the
    estimate falls back to a local constant, and to the nearest observation
    when the window is empty; ``n_fallback`` counts such evaluation points.
    """
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    t = np.asarray(t, dtype=float).reshape(-1)
    x = np.asarray(points, dtype=float).reshape(-1)
    d = t[None, :] - x[:, None]
    k = epanechnikov(d / bandwidth)
    s0 = k.sum(axis=1)
    s1 = (k * d).sum(axis=1)
    s2 = (k * d * d).sum(axis=1)
    det = s0 * s2 - s1 * s1

    # distinct in-window support decides whether the local line is identified
    ut, inverse = np.unique(t, return_inverse=True)
    distinct = (np.abs(ut[None, :] - x[:, None]) < bandwidth).sum(axis=1)
    linear = distinct >= 2

    H = np.zeros_like(k)
    if linear.any():
        kl, dl = k[linear], d[linear]
        H[linear] = kl * (s2[linear, None] - dl * s1[linear, None]) / det[linear, None]
    const = ~linear & (s0 > 0)
    if const.any():
        H[const] = k[const] / s0[const, None]
    empty = ~linear & ~(s0 > 0)
    if empty.any():
        # nearest observation time; average duplicated observations there
        for row in np.flatnonzero(empty):
            j = np.argmin(np.abs(ut - x[row]))
            members = inverse == j
            H[row, members] = 1.0 / members.sum()
    return H, int((~linear).sum())


def local_linear(t, w, points, bandwidth: float) -> np.ndarray:
    """Local linear estimate at ``points`` from scattered data ``(t, w)``."""
    H, _ = smoother_matrix(t, points, bandwidth)
    return H @ np.asarray(w, dtype=float)


def smooth_trajectory(t, w, grid: Grid, bandwidth: float) -> np.ndarray:
    """Reconstruct one subject's curve on ``grid``."""
    return local_linear(t, w, grid.points, bandwidth)


def _max_support_gap(t: np.ndarray) -> float:
    """Smallest bandwidth (up to a margin) giving two distinct points in every window."""
    u = np.unique(t)
    if u.size < 2:
        return 1.0
    gaps = [u[1] - 0.0, 1.0 - u[-2]]
    if u.size > 2:
        gaps.append(np.diff(u).max())
    return float(max(gaps))


def bandwidth_ladder(lo: float, hi: float = 0.5, num: int = LADDER_SIZE) -> np.ndarray:
    lo = max(float(lo), 1e-3)
    hi = max(float(hi), 2 * lo)
    return np.geomspace(lo, hi, num)


def _design_groups(times) -> dict:
    groups: dict = {}
    for i, t in enumerate(times):
        groups.setdefault(t.tobytes(), []).append(i)
    return groups


def select_trajectory_bandwidth(dataset: FunctionalDataset, num: int = LADDER_SIZE, pilot: int = 200) -> float:
    """Generalized cross-validation bandwidth for per-trajectory smoothing.

    The criterion pools the residual sum of squares and hat-matrix traces of
    up to ``pilot`` evenly spaced subjects and is minimized over a log-spaced
    ladder of ``num`` bandwidths.
    """
    n = dataset.n
    idx = np.unique(np.linspace(0, n - 1, min(n, pilot)).round().astype(int))
    times = [dataset.times[i] for i in idx]
    values = [dataset.values[i] for i in idx]
    lo = 1.05 * max(_max_support_gap(t) for t in times)
    ladder = bandwidth_ladder(lo, 0.5, num)
    groups = _design_groups(times)
    total = sum(t.size for t in times)

    best, best_h = np.inf, ladder[-1]
    for h in ladder:
        rss = trace = 0.0
        for members in groups.values():
            t = times[members[0]]
            H, _ = smoother_matrix(t, t, h)
            W = np.vstack([values[j] for j in members])
            rss += float(((W - W @ H.T) ** 2).sum())
            trace += float(np.trace(H)) * len(members)
        denom = (1.0 - trace / total) ** 2
        score = np.inf if denom <= 1e-12 or trace >= total else (rss / total) / denom
        if score < best:
            best, best_h = score, h
    return float(best_h)


def smooth_curves(dataset: FunctionalDataset, grid: Grid, bandwidth: float | None = None) -> SmoothedCurves:
    """Smooth every trajectory onto ``grid``.

    Subjects sharing a sampling design share one smoother matrix. The noise
    variance is the subject average of ``RSS_i / (m_i - tr H_i)`` computed at
    the observation times.
    """
    if bandwidth is None:
        bandwidth = select_trajectory_bandwidth(dataset)
    curves = np.empty((dataset.n, grid.size))
    resid = np.empty(dataset.n)
    fallbacks = 0
    for members in _design_groups(dataset.times).values():
        t = dataset.times[members[0]]
        H, nfb = smoother_matrix(t, grid.points, bandwidth)
        Hobs, _ = smoother_matrix(t, t, bandwidth)
        W = np.vstack([dataset.values[i] for i in members])
        curves[members] = W @ H.T
        dof = max(t.size - np.trace(Hobs), 1.0)
        resid[members] = ((W - W @ Hobs.T) ** 2).sum(axis=1) / dof
        fallbacks += nfb * len(members)
    return SmoothedCurves(grid, curves, float(bandwidth), float(resid.mean()), fallbacks)


# -- binned pooled smoothing ----------------------------------------------------


def _bin_positions(x, points) -> tuple[np.ndarray, np.ndarray]:
    """Lower grid index and fractional weight toward the next grid point."""
    x = np.asarray(x, dtype=float)
    g = np.clip(np.searchsorted(points, x, side="right") - 1, 0, points.size - 2)
    frac = (x - points[g]) / (points[g + 1] - points[g])
    return g, np.clip(frac, 0.0, 1.0)


def linear_bin(x, values, points, groups=None, n_groups: int = 1) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Linear binning of scattered ``(x, values)`` onto grid ``points``.

    Returns ``(counts, sums, sumsq)``, each of shape ``(n_groups, G)``.
    """
    G = points.size
    g, a = _bin_positions(x, points)
    v = np.asarray(values, dtype=float)
    grp = np.zeros(g.size, dtype=int) if groups is None else np.asarray(groups)
    idx = np.concatenate([grp * G + g, grp * G + g + 1])
    wt = np.concatenate([1 - a, a])
    size = n_groups * G
    out = [np.bincount(idx, weights=wt * np.tile(q, 2), minlength=size).reshape(n_groups, G)
           for q in (np.ones_like(v), v, v * v)]
    return tuple(out)


def _moment_kernels(points, bandwidth: float, orders=(0, 1, 2)) -> list[np.ndarray]:
    d = points[None, :] - points[:, None]
    k = epanechnikov(d / bandwidth)
    return [k * d**r for r in orders]


def _nearest_nonempty(counts, sums) -> np.ndarray:
    """Bin mean at the nearest occupied bin, for every bin (flattened order)."""
    occupied = np.flatnonzero(counts.reshape(-1) > 0)
    if occupied.size == 0:
        raise InsufficientPairs("no observations to smooth")
    return occupied, sums.reshape(-1)[occupied] / counts.reshape(-1)[occupied]


def binned_local_linear(counts, sums, points, bandwidth: float) -> np.ndarray:
    """1-d local linear fit on the grid from binned counts and sums."""
    K0, K1, K2 = _moment_kernels(points, bandwidth)
    s0, s1, s2 = K0 @ counts, K1 @ counts, K2 @ counts
    t0, t1 = K0 @ sums, K1 @ sums
    det = s0 * s2 - s1 * s1
    occupied_window = (np.abs(points[None, :] - points[:, None]) < bandwidth) & (counts[None, :] > 0)
    linear = occupied_window.sum(axis=1) >= 2
    out = np.empty(points.size)
    with np.errstate(divide="ignore", invalid="ignore"):
        out[linear] = (s2 * t0 - s1 * t1)[linear] / det[linear]
        const = ~linear & (s0 > 0)
        out[const] = t0[const] / s0[const]
    empty = ~linear & ~(s0 > 0)
    if empty.any():
        occ, vals = _nearest_nonempty(counts, sums)
        for i in np.flatnonzero(empty):
            out[i] = vals[np.argmin(np.abs(points[occ] - points[i]))]
    return out


def binned_local_linear_2d(counts, sums, points, bandwidth: float) -> np.ndarray:
    """Bivariate local linear surface (product kernel) from 2-d binned data."""
    K0, K1, K2 = _moment_kernels(points, bandwidth)
    C0, C1, C2 = counts @ K0.T, counts @ K1.T, counts @ K2.T
    S0, S1 = sums @ K0.T, sums @ K1.T
    m00, m10, m20 = K0 @ C0, K1 @ C0, K2 @ C0
    m01, m11, m02 = K0 @ C1, K1 @ C1, K0 @ C2
    t00, t10, t01 = K0 @ S0, K1 @ S0, K0 @ S1

    # Cramer's rule on [[m00 m10 m01] [m10 m20 m11] [m01 m11 m02]] a = [t00 t10 t01]
    c00 = m20 * m02 - m11 * m11
    c01 = m10 * m02 - m11 * m01
    c02 = m10 * m11 - m20 * m01
    det = m00 * c00 - m10 * c01 + m01 * c02
    num = t00 * c00 - t10 * (m10 * m02 - m01 * m11) + t01 * (m10 * m11 - m01 * m20)
    scale = np.abs(m00 * m20 * m02)
    linear = det > 1e-10 * scale
    out = np.empty_like(m00)
    with np.errstate(divide="ignore", invalid="ignore"):
        out[linear] = num[linear] / det[linear]
        const = ~linear & (m00 > 0)
        out[const] = t00[const] / m00[const]
    empty = ~linear & ~(m00 > 0)
    if empty.any():
        occ, vals = _nearest_nonempty(counts, sums)
        G = points.size
        oi, oj = np.divmod(occ, G)
        for i, j in zip(*np.nonzero(empty)):
            out[i, j] = vals[np.argmin((points[oi] - points[i]) ** 2 + (points[oj] - points[j]) ** 2)]
    return out


def _cv_select(fold_counts, fold_sums, fold_sumsq, fit, ladder) -> float:
    """Pick the ladder bandwidth minimizing binned held-out squared error."""
    tot_c, tot_s = fold_counts.sum(axis=0), fold_sums.sum(axis=0)
    best, best_h = np.inf, ladder[-1]
    for h in ladder:
        err = 0.0
        for c, s, ss in zip(fold_counts, fold_sums, fold_sumsq):
            if not c.any():
                continue
            pred = fit(tot_c - c, tot_s - s, h)
            err += float((ss - 2 * pred * s + pred * pred * c).sum())
        if err < best:
            best, best_h = err, h
    return float(best_h)


def _folds(n: int, k: int = CV_FOLDS) -> np.ndarray:
    return np.arange(n) % min(k, n)


def _pooled_ladder(t_all, grid: Grid) -> np.ndarray:
    u = np.unique(np.concatenate([t_all, grid.points[[0, -1]]]))
    lo = max(2.0 * np.diff(u).max(), 2.0 * np.diff(grid.points).max())
    return bandwidth_ladder(lo, 0.5)


def select_mean_bandwidth(dataset: FunctionalDataset, grid: Grid) -> float:
    """10-fold (by subject) cross-validated bandwidth for the pooled mean."""
    idx, t, w = dataset.pooled()
    folds = _folds(dataset.n)
    nf = folds.max() + 1
    c, s, ss = linear_bin(t, w, grid.points, folds[idx], nf)
    fit = lambda cc, sm, h: binned_local_linear(cc, sm, grid.points, h)
    return _cv_select(c, s, ss, fit, _pooled_ladder(t, grid))


def estimate_mean(
    dataset: FunctionalDataset,
    grid: Grid,
    bandwidth: float | None = None,
    design: str = "dense",
    curves: SmoothedCurves | None = None,
) -> np.ndarray:
    """Mean function on ``grid``.

    Dense path: pointwise average of smoothed trajectories (``curves`` is
    computed when not given). Sparse path: local linear smoother of all
    pooled observations.
    """
    if dataset.n < 2:
        raise InvalidSize("mean estimation needs at least 2 subjects")
    if design == "dense":
        if curves is None:
            curves = smooth_curves(dataset, grid, bandwidth)
        return curves.curves.mean(axis=0)
    if design != "sparse":
        raise ValueError(f"unknown design {design!r}")
    if bandwidth is None:
        bandwidth = select_mean_bandwidth(dataset, grid)
    _, t, w = dataset.pooled()
    c, s, _ = linear_bin(t, w, grid.points)
    return binned_local_linear(c[0], s[0], grid.points, bandwidth)


def estimate_covariance_dense(curves: SmoothedCurves, mean=None) -> CovarianceEstimate:
    """Sample covariance ``(1/n) sum (X_i - mean)(X_i - mean)^T`` of smoothed curves."""
    if curves.n < 2:
        raise InvalidSize("covariance estimation needs at least 2 subjects")
    mean = curves.curves.mean(axis=0) if mean is None else np.asarray(mean, dtype=float)
    centered = curves.curves - mean
    surface = centered.T @ centered / curves.n
    return CovarianceEstimate(curves.grid, mean, surface, curves.residual_var, {"trajectory": curves.bandwidth})


def _raw_products(dataset: FunctionalDataset, grid: Grid, mean: np.ndarray):
    """Per-subject centered observations interpolated against the mean curve."""
    idx, t, w = dataset.pooled()
    r = w - np.interp(t, grid.points, mean)
    return idx, t, r


def _bin_pairs(dataset, grid, t, r, folds, nf):
    """2-d linear binning of off-diagonal raw products, split by fold."""
    G = grid.size
    g, a = _bin_positions(t, grid.points)
    snap = np.all((a < 1e-9) | (a > 1 - 1e-9))
    if snap:
        g = g + (a > 0.5)
    counts = np.zeros((nf, G * G))
    sums = np.zeros((nf, G * G))
    sumsq = np.zeros((nf, G * G))
    m = dataset.m
    starts = np.concatenate([[0], np.cumsum(m)[:-1]])
    for mi in np.unique(m):
        if mi < 2:
            continue
        subj = np.flatnonzero(m == mi)
        pos = starts[subj][:, None] + np.arange(mi)[None, :]
        rr, gg, aa = r[pos], g[pos], a[pos]
        off = ~np.eye(mi, dtype=bool)
        prod = (rr[:, :, None] * rr[:, None, :])[:, off]
        fold = np.repeat(folds[subj], off.sum())
        if snap:
            cell = (gg[:, :, None] * G + gg[:, None, :])[:, off].reshape(-1)
            idx, wt = fold * G * G + cell, np.ones(cell.size)
            pv = prod.reshape(-1)
        else:
            pieces_idx, pieces_wt = [], []
            for di in (0, 1):
                for dj in (0, 1):
                    wi = aa if di else 1 - aa
                    wj = aa if dj else 1 - aa
                    cell = ((gg + di)[:, :, None] * G + (gg + dj)[:, None, :])[:, off].reshape(-1)
                    pieces_idx.append(fold * G * G + cell)
                    pieces_wt.append((wi[:, :, None] * wj[:, None, :])[:, off].reshape(-1))
            idx, wt = np.concatenate(pieces_idx), np.concatenate(pieces_wt)
            pv = np.tile(prod.reshape(-1), 4)
        size = nf * G * G
        counts += np.bincount(idx, weights=wt, minlength=size).reshape(nf, -1)
        sums += np.bincount(idx, weights=wt * pv, minlength=size).reshape(nf, -1)
        sumsq += np.bincount(idx, weights=wt * pv * pv, minlength=size).reshape(nf, -1)
    return counts.reshape(nf, G, G), sums.reshape(nf, G, G), sumsq.reshape(nf, G, G)


def estimate_covariance_sparse(
    dataset: FunctionalDataset,
    grid: Grid,
    mean,
    bandwidths: tuple[float, float] | None = None,
) -> CovarianceEstimate:
    """Covariance surface and noise variance from pooled sparse observations.

    Parameters
    ----------
    bandwidths : (float, float), optional
        Bandwidths of the surface smoother and of the diagonal variance
        smoother. Chosen by 10-fold (by subject) cross-validation when omitted.

    Raises
    ------
    InsufficientPairs
        No subject has two or more observations.
    """
    if dataset.n < 2:
        raise InvalidSize("covariance estimation needs at least 2 subjects")
    if dataset.m.max() < 2:
        raise InsufficientPairs("no subject has two or more observations")
    mean = np.asarray(mean, dtype=float)
    if mean.size != grid.size:
        raise GridMismatch("mean curve does not match the grid")
    idx, t, r = _raw_products(dataset, grid, mean)
    pts = grid.points

    if bandwidths is None:
        folds = _folds(dataset.n)
        nf = folds.max() + 1
    else:
        folds, nf = np.zeros(dataset.n, dtype=int), 1
    counts, sums, sumsq = _bin_pairs(dataset, grid, t, r, folds, nf)
    dc, ds, dss = linear_bin(t, r * r, pts, folds[idx], nf)

    if bandwidths is None:
        ladder = _pooled_ladder(t, grid)
        fit2 = lambda c, s, h: binned_local_linear_2d(c, s, pts, h)
        fit1 = lambda c, s, h: binned_local_linear(c, s, pts, h)
        h_cov = _cv_select(counts, sums, sumsq, fit2, ladder)
        h_diag = _cv_select(dc, ds, dss, fit1, ladder)
    else:
        h_cov, h_diag = map(float, bandwidths)
        if h_cov <= 0 or h_diag <= 0:
            raise ValueError("bandwidths must be positive")

    surface = binned_local_linear_2d(counts.sum(axis=0), sums.sum(axis=0), pts, h_cov)
    surface = (surface + surface.T) / 2
    diag = binned_local_linear(dc.sum(axis=0), ds.sum(axis=0), pts, h_diag)
    noise = max(0.0, float(grid.integrate(diag - np.diag(surface))))
    return CovarianceEstimate(grid, mean, surface, noise, {"covariance": h_cov, "diagonal": h_diag})
