"""Functional covariate data: containers, validation, CSV ingestion and grids.

Covariates are stored in long format, one row per observation
``(subject_id, t, w)``; responses in a second table ``(subject_id, y)``.
Dense and sparse designs share the schema and differ only in how many rows
each subject has.
"""

from __future__ import annotations

import math
import os
import tempfile
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd

from .errors import (
    DataError,
    InvalidSize,
    MissingSubject,
    NonFiniteValue,
    OutOfRangeTime,
)

COVARIATE_COLUMNS = ("subject_id", "t", "w")
RESPONSE_COLUMNS = ("subject_id", "y")


def _frozen(a, dtype=float) -> np.ndarray:
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ObservationRecord:
    """One noisy covariate observation ``w`` at time ``t`` for a subject."""

    subject_id: int
    t: float
    w: float

    def __post_init__(self):
        if not math.isfinite(self.t) or not math.isfinite(self.w):
            raise NonFiniteValue(f"subject {self.subject_id}: non-finite observation ({self.t}, {self.w})")
        if not 0.0 <= self.t <= 1.0:
            raise OutOfRangeTime(f"subject {self.subject_id}: t={self.t} outside [0, 1]")


@dataclass(frozen=True)
class Grid:
    """Evaluation grid on [0, 1] with trapezoidal quadrature weights."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        p = _frozen(self.points)
        w = _frozen(self.weights)
        if p.ndim != 1 or p.size < 2:
            raise InvalidSize("a grid needs at least 2 points")
        if w.shape != p.shape:
            raise InvalidSize("grid points and weights differ in length")
        if np.any(np.diff(p) <= 0):
            raise DataError("grid points must be strictly increasing")
        if p[0] < 0 or p[-1] > 1:
            raise OutOfRangeTime("grid points must lie in [0, 1]")
        if np.any(w < 0):
            raise DataError("quadrature weights must be nonnegative")
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "weights", w)

    @property
    def size(self) -> int:
        return self.points.size

    def integrate(self, values: np.ndarray, axis: int = -1) -> np.ndarray:
        """Trapezoidal integral of ``values`` sampled on the grid along ``axis``."""
        values = np.asarray(values, dtype=float)
        return np.tensordot(values, self.weights, axes=([axis], [0]))

    def same_as(self, other: "Grid") -> bool:
        return self.size == other.size and np.array_equal(self.points, other.points)


def make_grid(num_points: int = 101) -> Grid:
    """Equispaced grid on [0, 1] with trapezoidal weights ``(h/2, h, ..., h, h/2)``."""
    if int(num_points) != num_points or num_points < 2:
        raise InvalidSize(f"num_points must be an integer >= 2, got {num_points!r}")
    num_points = int(num_points)
    points = np.linspace(0.0, 1.0, num_points)
    h = 1.0 / (num_points - 1)
    weights = np.full(num_points, h)
    weights[0] = weights[-1] = h / 2
    return Grid(points, weights)


def trapezoid_weights(points: np.ndarray) -> np.ndarray:
    """Trapezoidal weights for an arbitrary strictly increasing point set."""
    points = np.asarray(points, dtype=float)
    d = np.diff(points)
    w = np.zeros_like(points)
    w[:-1] += d / 2
    w[1:] += d / 2
    return w


@dataclass(frozen=True)
class FunctionalDataset:
    """Irregularly sampled noisy curves with one scalar response per subject.

    Parameters
    ----------
    times, values : sequence of 1-d arrays
        Per-subject observation times in [0, 1] and observed covariate values.
        Each subject is sorted by time on construction (ties keep input order).
    responses : array-like
        Scalar responses aligned with the subjects.
    subject_ids : array-like of int, optional
        External identifiers; defaults to ``0..n-1``.
    """

    times: tuple
    values: tuple
    responses: np.ndarray
    subject_ids: np.ndarray = field(default=None)

    def __post_init__(self):
        times, values = list(self.times), list(self.values)
        if len(times) != len(values):
            raise InvalidSize("times and values must have one entry per subject")
        responses = _frozen(self.responses).reshape(-1)
        n = len(times)
        if responses.size != n:
            raise InvalidSize(f"{responses.size} responses for {n} subjects")
        ids = np.arange(n) if self.subject_ids is None else np.asarray(self.subject_ids)
        ids = _frozen(ids, dtype=np.int64)
        if ids.size != n:
            raise InvalidSize("subject_ids must have one entry per subject")
        if not np.all(np.isfinite(responses)):
            raise NonFiniteValue("responses contain non-finite values")

        t_out, w_out = [], []
        for sid, t, w in zip(ids, times, values):
            t = np.asarray(t, dtype=float).reshape(-1)
            w = np.asarray(w, dtype=float).reshape(-1)
            if t.size == 0:
                raise InvalidSize(f"subject {sid} has no observations")
            if t.shape != w.shape:
                raise InvalidSize(f"subject {sid}: times and values differ in length")
            if not (np.all(np.isfinite(t)) and np.all(np.isfinite(w))):
                raise NonFiniteValue(f"subject {sid}: non-finite observation")
            if t.min() < 0.0 or t.max() > 1.0:
                raise OutOfRangeTime(f"subject {sid}: time outside [0, 1]")
            order = np.argsort(t, kind="stable")
            t_out.append(_frozen(t[order]))
            w_out.append(_frozen(w[order]))
        object.__setattr__(self, "times", tuple(t_out))
        object.__setattr__(self, "values", tuple(w_out))
        object.__setattr__(self, "responses", responses)
        object.__setattr__(self, "subject_ids", ids)

    @property
    def n(self) -> int:
        return len(self.times)

    @property
    def m(self) -> np.ndarray:
        """Per-subject observation counts."""
        return np.array([t.size for t in self.times])

    def records(self, i: int) -> list[ObservationRecord]:
        sid = int(self.subject_ids[i])
        return [ObservationRecord(sid, float(t), float(w)) for t, w in zip(self.times[i], self.values[i])]

    def subset(self, indices: Sequence[int]) -> "FunctionalDataset":
        """Dataset made of the given subjects, repeats allowed (bootstrap)."""
        idx = np.asarray(indices, dtype=int)
        return FunctionalDataset(
            tuple(self.times[i] for i in idx),
            tuple(self.values[i] for i in idx),
            self.responses[idx],
            np.arange(idx.size) if np.unique(idx).size < idx.size else self.subject_ids[idx],
        )

    def common_design(self) -> np.ndarray | None:
        """Shared time vector if every subject is observed at the same points."""
        t0 = self.times[0]
        for t in self.times[1:]:
            if t.shape != t0.shape or not np.array_equal(t, t0):
                return None
        return t0

    def value_matrix(self) -> np.ndarray:
        """``n x m`` matrix of observations; requires a common design."""
        if self.common_design() is None:
            raise DataError("subjects are not observed on a common grid")
        return np.vstack(self.values)

    def pooled(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Concatenated ``(subject_index, t, w)`` over all observations."""
        idx = np.repeat(np.arange(self.n), self.m)
        return idx, np.concatenate(self.times), np.concatenate(self.values)


def load_dataset(covariate_file, response_file) -> FunctionalDataset:
    """Read the long-format covariate CSV and the response CSV.

    Subjects are returned in ascending ``subject_id`` order.

    Raises
    ------
    MissingSubject
        A subject appears in only one of the two files.
    OutOfRangeTime, NonFiniteValue
        Invalid observation rows.
    """
    cov = _read_table(covariate_file, COVARIATE_COLUMNS)
    resp = _read_table(response_file, RESPONSE_COLUMNS)
    if resp["subject_id"].duplicated().any():
        raise DataError("response file lists a subject more than once")

    for col in ("t", "w"):
        if not np.all(np.isfinite(cov[col].to_numpy())):
            raise NonFiniteValue(f"covariate column {col!r} has non-finite values")
    if not np.all(np.isfinite(resp["y"].to_numpy())):
        raise NonFiniteValue("response column 'y' has non-finite values")
    t = cov["t"].to_numpy()
    if np.any((t < 0) | (t > 1)):
        bad = cov.loc[(t < 0) | (t > 1)].iloc[0]
        raise OutOfRangeTime(f"subject {int(bad.subject_id)}: t={bad.t} outside [0, 1]")

    cov_ids = set(cov["subject_id"].unique().tolist())
    resp_ids = set(resp["subject_id"].tolist())
    if cov_ids != resp_ids:
        only_resp = sorted(resp_ids - cov_ids)
        only_cov = sorted(cov_ids - resp_ids)
        raise MissingSubject(
            f"subjects without covariates: {only_resp[:5]}; subjects without responses: {only_cov[:5]}"
        )

    cov = cov.sort_values(["subject_id", "t"], kind="stable")
    ids = np.array(sorted(cov_ids), dtype=np.int64)
    groups = cov.groupby("subject_id", sort=True)
    times = tuple(g["t"].to_numpy() for _, g in groups)
    values = tuple(g["w"].to_numpy() for _, g in groups)
    y = resp.set_index("subject_id").loc[ids, "y"].to_numpy()
    return FunctionalDataset(times, values, y, ids)


def _read_table(path, columns) -> pd.DataFrame:
    df = pd.read_csv(path, float_precision="round_trip")
    missing = [c for c in columns if c not in df.columns]
    if missing:
        raise DataError(f"{path}: missing columns {missing}; expected header {','.join(columns)}")
    df = df[list(columns)].copy()
    try:
        df["subject_id"] = df["subject_id"].astype(np.int64)
        for c in columns[1:]:
            df[c] = df[c].astype(float)
    except (TypeError, ValueError) as exc:
        raise DataError(f"{path}: {exc}") from exc
    return df


def write_dataset(dataset: FunctionalDataset, covariate_file, response_file) -> None:
    """Write a dataset in the long CSV format read by :func:`load_dataset`."""
    idx, t, w = dataset.pooled()
    cov = pd.DataFrame({"subject_id": dataset.subject_ids[idx], "t": t, "w": w})
    resp = pd.DataFrame({"subject_id": dataset.subject_ids, "y": dataset.responses})
    atomic_write_text(covariate_file, cov.to_csv(index=False, float_format="%.17g"))
    atomic_write_text(response_file, resp.to_csv(index=False, float_format="%.17g"))


def atomic_write_text(path, text: str) -> None:
    """Write ``text`` to a temporary file next to ``path`` and rename it into place."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def classify_design(dataset: FunctionalDataset, grid: Grid, dense_threshold: int | None = None) -> str:
    """Label the sampling design ``"dense"`` or ``"sparse"``.

    A dataset is dense when every subject has at least ``dense_threshold``
    observations, by default ``ceil(grid.size / 2)``. On the 101-point grid
    that routes ``m_i = 50`` (half the grid missing) to the sparse path.
    """
    if dense_threshold is None:
        dense_threshold = math.ceil(grid.size / 2)
    return "dense" if dataset.m.min() >= dense_threshold else "sparse"
