"""Seeded data generation, Monte Carlo size/power studies, bootstrap and cross-validation.

The generator draws curves ``X_i = sum_k xi_ik phi_k`` from three orthonormal
shifted Legendre polynomials with ``xi_ik ~ N(0, lambda_k)``,
``lambda = (1, 0.5, 0.25)``, and responses

    Y_i = int X_i(t) t dt + (1 + gamma int X_i(t) t^2 dt) eps_i,   eps_i ~ N(0, 1).

With ``gamma = 0`` every quantile slope equals ``t`` so the equal-slope null
holds; ``gamma > 0`` makes the slope depend on the level.

Every random draw comes from a counter-based generator keyed by
``(seed, replicate, stream)``, so results do not depend on how replications
are spread across worker processes.
"""

from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from itertools import repeat

import numpy as np
import pandas as pd
from numpy.polynomial import Polynomial
from scipy import stats

from .errors import FQRError, InvalidConfig, InvalidSize, SingularDesign
from .fpca import ScoreMatrix, select_truncation
from .funcdata import FunctionalDataset, Grid, make_grid
from .inference import WaldResult, wald_test
from .pipeline import estimate_scores
from .quantreg import fit_crq, fit_multi, fit_qae, prediction_error

LAMBDAS = (1.0, 0.5, 0.25)
LEVELS_U1 = (0.1, 0.2, 0.3, 0.4)
LEVELS_U2 = (0.1, 0.2, 0.6, 0.7)
ALPHAS = (0.01, 0.05, 0.10)
DESIGN_POINTS = {"dense": 100, "sparse50": 50, "sparse90": 10}
METHODS = ("adjusted_wald", "oracle", "ssqr", "naive_qr", "pca_qr")

# stream identifiers of the counter-based generator
_SCORES, _EPS, _NOISE, _TIMES = 0, 1, 2, 3

# shifted Legendre polynomials, orthonormal on [0, 1]
_BASIS = (
    math.sqrt(3) * Polynomial([-1.0, 2.0]),
    math.sqrt(5) * Polynomial([1.0, -6.0, 6.0]),
    math.sqrt(7) * Polynomial([-1.0, 12.0, -30.0, 20.0]),
)


def legendre_basis(t) -> np.ndarray:
    """The three basis functions at ``t``, shape ``len(t) x 3`` (or ``t.shape + (3,)``)."""
    t = np.asarray(t, dtype=float)
    return np.stack([p(t) for p in _BASIS], axis=-1)


def legendre_moment(power: int) -> np.ndarray:
    """Exact ``int_0^1 phi_k(t) t^power dt`` for each basis polynomial."""
    mono = Polynomial([0.0] * power + [1.0])
    out = []
    for p in _BASIS:
        F = (p * mono).integ()
        out.append(F(1.0) - F(0.0))
    return np.array(out)


def make_rng(seed: int, replicate: int, stream: int) -> np.random.Generator:
    """Independent generator for one (seed, replicate, stream) triple."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(replicate), int(stream)])))


def default_workers() -> int:
    """Worker count from ``FQR_WORKERS`` (1 when unset)."""
    raw = os.environ.get("FQR_WORKERS", "1")
    try:
        w = int(raw)
    except ValueError as exc:
        raise InvalidConfig(f"FQR_WORKERS must be an integer, got {raw!r}") from exc
    if w < 1:
        raise InvalidConfig("FQR_WORKERS must be at least 1")
    return w


@dataclass(frozen=True)
class SimConfig:
    """Settings of one simulated design and Monte Carlo study.

    ``m`` defaults to 100 equispaced points for ``design="dense"``, and to 50
    or 10 points drawn from the evaluation grid for ``"sparse50"`` and
    ``"sparse90"``.
    """

    n: int = 1000
    design: str = "dense"
    sigma: float = 1.0
    gamma: float = 0.0
    levels: tuple = LEVELS_U1
    pve: float = 0.95
    replications: int = 1000
    seed: int = 0
    alpha_list: tuple = ALPHAS
    methods: tuple = ("adjusted_wald",)
    m: int | None = None
    grid_size: int = 101
    ssqr_summary: str = "mean"

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(float(t) for t in self.levels))
        object.__setattr__(self, "alpha_list", tuple(float(a) for a in self.alpha_list))
        object.__setattr__(self, "methods", tuple(self.methods))
        if self.design not in DESIGN_POINTS:
            raise InvalidConfig(f"design must be one of {sorted(DESIGN_POINTS)}, got {self.design!r}")
        if self.m is None:
            object.__setattr__(self, "m", DESIGN_POINTS[self.design])
        checks = [
            (isinstance(self.n, (int, np.integer)) and self.n >= 2, "n must be an integer >= 2"),
            (isinstance(self.m, (int, np.integer)) and self.m >= 1, "m must be a positive integer"),
            (self.design == "dense" or self.m <= self.grid_size, "sparse m cannot exceed the grid size"),
            (self.grid_size >= 2, "grid_size must be at least 2"),
            (np.isfinite(self.sigma) and self.sigma >= 0, "sigma must be finite and nonnegative"),
            (np.isfinite(self.gamma) and self.gamma >= 0, "gamma must be finite and nonnegative"),
            (len(self.levels) >= 1 and all(0 < t < 1 for t in self.levels), "levels must lie in (0, 1)"),
            (all(b > a for a, b in zip(self.levels, self.levels[1:])), "levels must be strictly ascending"),
            (0 < self.pve <= 1, "pve must lie in (0, 1]"),
            (isinstance(self.replications, (int, np.integer)) and self.replications >= 0, "replications must be >= 0"),
            (isinstance(self.seed, (int, np.integer)) and 0 <= self.seed < 2**64, "seed must be a 64-bit nonnegative integer"),
            (len(self.alpha_list) >= 1 and all(0 < a < 1 for a in self.alpha_list), "alphas must lie in (0, 1)"),
            (all(m in METHODS for m in self.methods) and len(self.methods) > 0, f"methods must be among {METHODS}"),
            (self.ssqr_summary in ("mean", "median"), "ssqr_summary must be 'mean' or 'median'"),
        ]
        for ok, msg in checks:
            if not ok:
                raise InvalidConfig(msg)

    @property
    def score_design(self) -> str:
        """Score-estimation route used for this design."""
        return "dense" if self.design == "dense" else "sparse"


@dataclass(frozen=True)
class SimulatedData:
    """A generated dataset together with the quantities it was built from."""

    dataset: FunctionalDataset
    true_scores: np.ndarray
    grid: Grid
    levels: tuple
    theta: np.ndarray
    beta: np.ndarray
    beta_projected: np.ndarray

    @property
    def oracle_design(self) -> ScoreMatrix:
        return ScoreMatrix.from_scores(self.true_scores)


def true_theta(tau: float, gamma: float) -> np.ndarray:
    """True coefficients ``(Phi^-1(tau), b_1, b_2, b_3)`` of the conditional quantile in the scores."""
    z = stats.norm.ppf(tau)
    return np.concatenate([[z], legendre_moment(1) + gamma * z * legendre_moment(2)])


def generate_dataset(config: SimConfig, replicate_index: int) -> SimulatedData:
    """Draw one dataset; see the module docstring for the model."""
    n, m = config.n, config.m
    grid = make_grid(config.grid_size)
    lam = np.sqrt(np.array(LAMBDAS))
    xi = make_rng(config.seed, replicate_index, _SCORES).standard_normal((n, 3)) * lam
    eps = make_rng(config.seed, replicate_index, _EPS).standard_normal(n)
    y = xi @ legendre_moment(1) + (1.0 + config.gamma * (xi @ legendre_moment(2))) * eps

    noise = make_rng(config.seed, replicate_index, _NOISE).standard_normal((n, m)) * config.sigma
    if config.design == "dense":
        t = np.linspace(0.0, 1.0, m)
        times = np.broadcast_to(t, (n, m))
        W = xi @ legendre_basis(t).T + noise
    else:
        u = make_rng(config.seed, replicate_index, _TIMES).random((n, grid.size))
        pick = np.sort(np.argsort(u, axis=1)[:, :m], axis=1)
        times = grid.points[pick]
        W = np.einsum("imk,ik->im", legendre_basis(times), xi) + noise
    dataset = FunctionalDataset(tuple(times), tuple(W), y)

    theta = np.vstack([true_theta(tau, config.gamma) for tau in config.levels])
    g = grid.points
    z = stats.norm.ppf(config.levels)[:, None]
    beta = g[None, :] + config.gamma * z * g[None, :] ** 2
    beta_projected = theta[:, 1:] @ legendre_basis(g).T
    return SimulatedData(dataset, xi, grid, config.levels, theta, beta, beta_projected)


# -- tests on one dataset -----------------------------------------------------------


@dataclass(frozen=True)
class TestOutcome:
    """Result of one equal-slope test with decisions at several significance levels."""

    method: str
    statistic: float
    df: int
    p_value: float
    K: int
    reject: dict = field(default_factory=dict)

    @classmethod
    def from_wald(cls, method: str, w: WaldResult, alphas) -> "TestOutcome":
        return cls(method, w.statistic, w.df, w.p_value, w.K, {float(a): bool(w.p_value < a) for a in alphas})


def _baseline_wald(method: str, design: np.ndarray, y, levels, alphas) -> TestOutcome:
    """Standard Wald test on an arbitrary covariate design; failures become SingularDesign."""
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            w, _, _ = wald_test(design, y, levels)
    except (FQRError, np.linalg.LinAlgError) as exc:
        raise SingularDesign(f"{method}: {exc}") from exc
    return TestOutcome.from_wald(method, w, alphas)


def adjusted_wald_test(dataset: FunctionalDataset, levels, alphas=ALPHAS, grid=None, pve=0.95, design=None) -> TestOutcome:
    """Full pipeline: score estimation, per-level fits and the adjusted Wald test."""
    est = estimate_scores(dataset, grid, pve, design)
    w, _, _ = wald_test(est.scores.design, dataset.responses, levels)
    return TestOutcome.from_wald("adjusted_wald", w, alphas)


def oracle_test(true_scores, y, levels, alphas=ALPHAS) -> TestOutcome:
    """Adjusted Wald test with the true scores as covariates (no FPCA)."""
    w, _, _ = wald_test(ScoreMatrix.from_scores(true_scores).design, y, levels)
    return TestOutcome.from_wald("oracle", w, alphas)


def naive_qr_test(dataset: FunctionalDataset, levels, alphas=ALPHAS) -> TestOutcome:
    """Wald test treating the raw observation vector as ``m`` scalar covariates.

    Raises
    ------
    SingularDesign
        The ``n x (m + 1)`` design cannot be fitted or its covariance inverted;
        expected whenever ``m`` is not small relative to ``n``.
    """
    W = dataset.value_matrix()
    X = np.column_stack([np.ones(dataset.n), W])
    return _baseline_wald("naive_qr", X, dataset.responses, levels, alphas)


def ssqr_test(dataset: FunctionalDataset, levels, alphas=ALPHAS, summary: str = "mean") -> TestOutcome:
    """Wald test with a single summary (mean or median of each curve) as the covariate."""
    if summary not in ("mean", "median"):
        raise ValueError("summary must be 'mean' or 'median'")
    f = np.mean if summary == "mean" else np.median
    s = np.array([f(v) for v in dataset.values])
    X = np.column_stack([np.ones(dataset.n), s])
    return _baseline_wald("ssqr", X, dataset.responses, levels, alphas)


def pca_qr_test(dataset: FunctionalDataset, levels, alphas=ALPHAS, pve: float = 0.95) -> TestOutcome:
    """Multivariate PCA of the raw observation vectors, then a Wald test on the retained scores."""
    W = dataset.value_matrix()
    centered = W - W.mean(axis=0)
    vals, vecs = np.linalg.eigh(centered.T @ centered / dataset.n)
    order = np.argsort(-vals, kind="stable")
    vals, vecs = np.clip(vals[order], 0.0, None), vecs[:, order]
    try:
        K = select_truncation(vals, pve)
    except FQRError as exc:
        raise SingularDesign(f"pca_qr: {exc}") from exc
    X = np.column_stack([np.ones(dataset.n), centered @ vecs[:, :K]])
    return _baseline_wald("pca_qr", X, dataset.responses, levels, alphas)


def run_method(method: str, sim: SimulatedData, config: SimConfig) -> TestOutcome:
    ds, lv, al = sim.dataset, config.levels, config.alpha_list
    if method == "adjusted_wald":
        return adjusted_wald_test(ds, lv, al, sim.grid, config.pve, config.score_design)
    if method == "oracle":
        return oracle_test(sim.true_scores, ds.responses, lv, al)
    if method == "ssqr":
        return ssqr_test(ds, lv, al, config.ssqr_summary)
    if method == "naive_qr":
        return naive_qr_test(ds, lv, al)
    if method == "pca_qr":
        return pca_qr_test(ds, lv, al, config.pve)
    raise InvalidConfig(f"unknown method {method!r}")


# -- Monte Carlo studies -------------------------------------------------------------


def _replicate(config: SimConfig, rep: int) -> dict:
    sim = generate_dataset(config, rep)
    out = {}
    for method in config.methods:
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                r = run_method(method, sim, config)
            out[method] = (r.statistic, r.p_value, r.df, r.K, "")
        except FQRError as exc:
            out[method] = (np.nan, np.nan, 0, 0, type(exc).__name__)
    return out


def _map_replicates(config: SimConfig, workers: int | None) -> list[dict]:
    workers = default_workers() if workers is None else int(workers)
    if workers < 1:
        raise InvalidConfig("workers must be at least 1")
    reps = range(config.replications)
    if workers == 1 or config.replications <= 1:
        return [_replicate(config, r) for r in reps]
    chunk = max(1, config.replications // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_replicate, repeat(config), reps, chunksize=chunk))


@dataclass(frozen=True)
class StudyResult:
    """Per-replication test outcomes of one Monte Carlo study and their summaries.

    Arrays are indexed ``[method, replicate]``; failed replications hold NaN
    statistics and p-values and the exception name in ``errors``.
    """

    config: SimConfig
    methods: tuple
    alphas: tuple
    statistics: np.ndarray
    p_values: np.ndarray
    df: np.ndarray
    K: np.ndarray
    errors: tuple

    @classmethod
    def from_records(cls, config: SimConfig, records: list[dict]) -> "StudyResult":
        M, R = len(config.methods), len(records)
        stat, p = np.full((M, R), np.nan), np.full((M, R), np.nan)
        df, K = np.zeros((M, R), dtype=int), np.zeros((M, R), dtype=int)
        errors = [[""] * R for _ in range(M)]
        for r, rec in enumerate(records):
            for i, method in enumerate(config.methods):
                stat[i, r], p[i, r], df[i, r], K[i, r], errors[i][r] = rec[method]
        return cls(config, config.methods, config.alpha_list, stat, p, df, K, tuple(tuple(e) for e in errors))

    @property
    def replications(self) -> int:
        return self.p_values.shape[1]

    @property
    def successes(self) -> np.ndarray:
        return np.isfinite(self.p_values).sum(axis=1)

    @property
    def rejection_rates(self) -> np.ndarray:
        """``methods x alphas`` rejection rates among successful replications (NaN if none)."""
        ok = self.successes[:, None]
        counts = np.stack([(np.nan_to_num(self.p_values, nan=2.0) < a).sum(axis=1) for a in self.alphas], axis=1)
        return np.divide(counts, ok, out=np.full(counts.shape, np.nan), where=ok > 0)

    @property
    def failure_rate(self) -> np.ndarray:
        R = self.replications
        fails = self.p_values.shape[1] - self.successes
        return np.divide(fails, R, out=np.full(fails.shape, np.nan), where=R > 0)

    @property
    def mc_stderr(self) -> np.ndarray:
        r = self.rejection_rates
        ok = self.successes[:, None]
        return np.sqrt(np.divide(r * (1 - r), ok, out=np.full(r.shape, np.nan), where=ok > 0))

    def rate(self, method: str, alpha: float) -> float:
        i = self.methods.index(method)
        j = [k for k, a in enumerate(self.alphas) if np.isclose(a, alpha)][0]
        return float(self.rejection_rates[i, j])

    def to_frame(self) -> pd.DataFrame:
        c = self.config
        rows = []
        rates, se, fail = self.rejection_rates, self.mc_stderr, self.failure_rate
        for i, method in enumerate(self.methods):
            row = {
                "method": method,
                "n": c.n,
                "design": c.design,
                "sigma": c.sigma,
                "gamma": c.gamma,
                "levels": " ".join(f"{t:g}" for t in c.levels),
                "replications": self.replications,
            }
            for j, a in enumerate(self.alphas):
                row[f"alpha_{a:g}"] = rates[i, j]
            for j, a in enumerate(self.alphas):
                row[f"mc_stderr_{a:g}"] = se[i, j]
            row["failure_rate"] = fail[i]
            rows.append(row)
        return pd.DataFrame(rows)

    def to_csv(self) -> str:
        return self.to_frame().to_csv(index=False, float_format="%.6g", na_rep="NA")


def run_type1_study(config: SimConfig, workers: int | None = None) -> StudyResult:
    """Empirical size of each configured method under the equal-slope null (``gamma = 0``)."""
    if config.gamma != 0:
        raise InvalidConfig("a Type I study needs gamma = 0")
    return StudyResult.from_records(config, _map_replicates(config, workers))


@dataclass(frozen=True)
class PowerResult:
    gamma: float
    studies: tuple

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for s in self.studies:
            rates = s.rejection_rates
            for i, method in enumerate(s.methods):
                for j, a in enumerate(s.alphas):
                    rows.append({"n": s.config.n, "method": method, "gamma": self.gamma, "power": rates[i, j], "alpha": a})
        return pd.DataFrame(rows, columns=["n", "method", "gamma", "power", "alpha"])

    def to_csv(self) -> str:
        return self.to_frame().to_csv(index=False, float_format="%.6g", na_rep="NA")

    def power(self, n: int, method: str, alpha: float) -> float:
        for s in self.studies:
            if s.config.n == n:
                return s.rate(method, alpha)
        raise KeyError(f"no study at n={n}")


def run_power_study(config: SimConfig, sample_sizes=None, workers: int | None = None) -> PowerResult:
    """Rejection rates under the alternative (``gamma > 0``) across sample sizes."""
    if config.gamma <= 0:
        raise InvalidConfig("a power study needs gamma > 0")
    sizes = (config.n,) if sample_sizes is None else tuple(int(s) for s in sample_sizes)
    studies = []
    for n in sizes:
        cfg = replace(config, n=n)
        studies.append(StudyResult.from_records(cfg, _map_replicates(cfg, workers)))
    return PowerResult(config.gamma, tuple(studies))


# -- bootstrap and cross-validation ----------------------------------------------------

COMPOSITE_METHODS = ("RQ", "QAE", "CRQ")


def _slope_fits(design, y, levels, methods) -> dict:
    """Slope vectors per method and level: ``{method: L x K}``."""
    levels = tuple(levels)
    out = {}
    multi = fit_multi(design, y, levels) if ("RQ" in methods or "QAE" in methods) else None
    if "RQ" in methods:
        out["RQ"] = np.vstack([f.theta for f in multi.fits])
    if "QAE" in methods:
        q = fit_qae(multi)
        out["QAE"] = np.vstack([q.theta(t) for t in levels])
    if "CRQ" in methods:
        c = fit_crq(design, y, levels)
        out["CRQ"] = np.vstack([c.theta(t) for t in levels])
    return out


@dataclass(frozen=True)
class BootstrapResult:
    """Pointwise bootstrap mean and standard error of the slope function per method and level."""

    grid: Grid
    levels: tuple
    mean: dict
    se: dict
    resamples: int
    failures: int

    def to_frame(self) -> pd.DataFrame:
        frames = []
        for method in self.mean:
            for l, tau in enumerate(self.levels):
                frames.append(
                    pd.DataFrame(
                        {
                            "method": method,
                            "tau": tau,
                            "t": self.grid.points,
                            "mean": self.mean[method][l],
                            "se": self.se[method][l],
                        }
                    )
                )
        return pd.concat(frames, ignore_index=True)

    def to_csv(self) -> str:
        return self.to_frame().to_csv(index=False, float_format="%.10g", na_rep="NA")


def bootstrap_curves(
    dataset: FunctionalDataset,
    levels,
    B: int,
    seed: int,
    methods=COMPOSITE_METHODS,
    grid: Grid | None = None,
    pve: float = 0.95,
    design: str | None = None,
    indices=None,
) -> BootstrapResult:
    """Pairs bootstrap of the slope functions ``beta(t, tau)``.

    Each resample draws subjects with replacement and reruns score estimation
    and the fits. ``indices`` (``B x n``) overrides the random resamples.
    """
    if B < 2:
        raise InvalidSize("the bootstrap needs B >= 2")
    methods = tuple(methods)
    if not methods or any(m not in COMPOSITE_METHODS for m in methods):
        raise InvalidConfig(f"methods must be among {COMPOSITE_METHODS}")
    grid = make_grid() if grid is None else grid
    levels = tuple(float(t) for t in levels)
    n = dataset.n
    if indices is None:
        rng = make_rng(seed, 0, 0)
        indices = rng.integers(0, n, size=(B, n))
    indices = np.asarray(indices, dtype=int)
    if indices.shape != (B, n):
        raise InvalidSize(f"indices must have shape ({B}, {n})")

    L, G = len(levels), grid.size
    if n == 1:
        warnings.warn("a single subject: every resample is identical, standard errors are 0", RuntimeWarning)
        nan = {m: np.full((L, G), np.nan) for m in methods}
        return BootstrapResult(grid, levels, nan, {m: np.zeros((L, G)) for m in methods}, B, 0)

    draws = {m: [] for m in methods}
    failures = 0
    for b in range(B):
        sub = dataset.subset(indices[b])
        try:
            est = estimate_scores(sub, grid, pve, design)
            fits = _slope_fits(est.scores.design, sub.responses, levels, methods)
        except FQRError:
            failures += 1
            continue
        for m in methods:
            draws[m].append(fits[m][:, 1:] @ est.eigen.eigenfunctions.T)
    mean, se = {}, {}
    for m in methods:
        arr = np.array(draws[m]) if draws[m] else np.full((0, L, G), np.nan)
        mean[m] = arr.mean(axis=0) if len(arr) else np.full((L, G), np.nan)
        se[m] = arr.std(axis=0, ddof=1) if len(arr) >= 2 else np.full((L, G), np.nan)
    return BootstrapResult(grid, levels, mean, se, B, failures)


@dataclass(frozen=True)
class CVResult:
    """Mean prediction error (summed check loss on the test half) per method and level."""

    levels: tuple
    methods: tuple
    errors: np.ndarray  # replicate x method x level
    failures: int

    @property
    def mean(self) -> np.ndarray:
        if self.errors.shape[0] == 0:
            return np.full(self.errors.shape[1:], np.nan)
        return self.errors.mean(axis=0)

    @property
    def se(self) -> np.ndarray:
        R = self.errors.shape[0]
        if R < 2:
            return np.full(self.errors.shape[1:], np.nan)
        return self.errors.std(axis=0, ddof=1) / np.sqrt(R)

    def value(self, method: str, tau: float, what: str = "mean") -> float:
        i = self.methods.index(method)
        j = [k for k, t in enumerate(self.levels) if np.isclose(t, tau)][0]
        return float(getattr(self, what)[i, j])

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for j, tau in enumerate(self.levels):
            row = {"tau": tau}
            for i, m in enumerate(self.methods):
                row[m] = self.mean[i, j]
                row[f"{m}_se"] = self.se[i, j]
            rows.append(row)
        return pd.DataFrame(rows)

    def to_csv(self) -> str:
        return self.to_frame().to_csv(index=False, float_format="%.10g", na_rep="NA")


def cross_validate(
    dataset: FunctionalDataset,
    levels,
    replications: int,
    seed: int,
    methods=COMPOSITE_METHODS,
    grid: Grid | None = None,
    pve: float = 0.95,
    design: str | None = None,
    scores: ScoreMatrix | None = None,
) -> CVResult:
    """Repeated random half splits comparing per-level and composite fits.

    Scores are estimated once on the full dataset (they do not use the
    responses). Each replication fits on a random half and sums the check
    loss over the other half.
    """
    n = dataset.n
    if n < 4:
        raise InvalidSize("cross-validation needs at least 4 subjects")
    if replications < 1:
        raise InvalidConfig("replications must be at least 1")
    methods = tuple(methods)
    levels = tuple(float(t) for t in levels)
    if scores is None:
        scores = estimate_scores(dataset, grid, pve, design).scores
    X, y = scores.design, dataset.responses
    errors, failures = [], 0
    for r in range(replications):
        perm = make_rng(seed, r, 0).permutation(n)
        train, test = perm[: n // 2], perm[n // 2:]
        try:
            fits = _slope_fits(X[train], y[train], levels, methods)
        except FQRError:
            failures += 1
            continue
        errors.append(
            [[prediction_error(fits[m][l], X[test], y[test], tau) for l, tau in enumerate(levels)] for m in methods]
        )
    arr = np.array(errors) if errors else np.zeros((0, len(methods), len(levels)))
    return CVResult(levels, methods, arr, failures)


__all__ = [
    "ALPHAS",
    "BootstrapResult",
    "CVResult",
    "LAMBDAS",
    "LEVELS_U1",
    "LEVELS_U2",
    "PowerResult",
    "SimConfig",
    "SimulatedData",
    "StudyResult",
    "TestOutcome",
    "adjusted_wald_test",
    "bootstrap_curves",
    "cross_validate",
    "generate_dataset",
    "legendre_basis",
    "legendre_moment",
    "make_rng",
    "naive_qr_test",
    "oracle_test",
    "pca_qr_test",
    "run_power_study",
    "run_type1_study",
    "ssqr_test",
    "true_theta",
]
