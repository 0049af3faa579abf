"""Dense least squares, Frisch-Waugh-Lovell residualization and sandwich
covariance estimators.

Everything downstream (first stage, reduced form, 2SLS, Anderson-Rubin)
is built from the primitives here.  Covariance flavors:

``classic``
    ``s2 * (X'X)^-1`` with ``s2 = RSS / (n - k)``.
``hc1``
    ``n / (n - k) * (X'X)^-1 (sum e_i^2 x_i x_i') (X'X)^-1``.
``cr1``
    ``G / (G - 1) * (n - 1) / (n - k)`` times the cluster-sum meat.
``bootstrap``
    Covariance of coefficients refit on pairs (or cluster) resamples.

``k`` counts every estimated parameter, including those absorbed by a
prior FWL step, so residualized fits reproduce the full regression.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
from scipy import linalg, stats

from . import _resample
from .errors import (
    BootstrapInstabilityError,
    ClusterCountError,
    CollinearityError,
    ConfigError,
    DegreesOfFreedomError,
)

log = logging.getLogger(__name__)

FLAVORS = ("classic", "hc1", "cr1", "bootstrap")
ROLES = ("outcome", "treatment", "instrument", "covariate", "cluster", "weight")
INTERCEPT = "(intercept)"
RANK_TOL = 1e-10


@dataclass(frozen=True)
class VCovSpec:
    """Variance estimator choice."""

    flavor: str = "hc1"
    cluster_column: str | None = None
    boot_reps: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.flavor not in FLAVORS:
            raise ConfigError(f"unknown vcov flavor {self.flavor!r}; expected one of {FLAVORS}")
        if self.flavor == "cr1" and not self.cluster_column:
            raise ConfigError("cr1 covariance requires a cluster column")
        if self.flavor == "bootstrap" and self.boot_reps < 2:
            raise ConfigError("bootstrap covariance requires at least 2 replicates")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must fit in an unsigned 64-bit integer")

    @property
    def clustered(self) -> bool:
        return self.cluster_column is not None

    def analytic(self) -> "VCovSpec":
        """The closed-form flavor matching this spec (bootstrap maps to hc1/cr1)."""
        if self.flavor != "bootstrap":
            return self
        return replace(self, flavor="cr1" if self.clustered else "hc1")

    def robust(self) -> "VCovSpec":
        """hc1, or cr1 when a cluster column is set."""
        return replace(self, flavor="cr1" if self.clustered else "hc1")

    def with_flavor(self, flavor: str) -> "VCovSpec":
        return replace(self, flavor=flavor)


@dataclass(frozen=True)
class Dataset:
    """Column-oriented numeric table with role annotations.

    ``roles`` maps column name to one of ``ROLES``; columns without a role are
    carried along untouched.  ``cluster_ids`` holds integer cluster labels
    (already factorized) when a cluster column is declared.
    """

    columns: Mapping[str, np.ndarray]
    roles: Mapping[str, str] = field(default_factory=dict)
    cluster_ids: np.ndarray | None = None
    n_dropped: int = 0

    def __post_init__(self):
        cols = {k: np.asarray(v, dtype=float) for k, v in self.columns.items()}
        object.__setattr__(self, "columns", cols)
        lengths = {len(v) for v in cols.values()}
        if len(lengths) > 1:
            raise ConfigError(f"columns have unequal lengths {sorted(lengths)}")
        for name, role in self.roles.items():
            if role not in ROLES:
                raise ConfigError(f"unknown role {role!r} for column {name!r}")
            if name not in cols:
                raise ConfigError(f"role assigned to missing column {name!r}")
        if self.cluster_ids is not None:
            object.__setattr__(self, "cluster_ids", np.asarray(self.cluster_ids))

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, roles: Mapping[str, str] | None = None, cluster_ids=None):
        return cls({c: frame[c].to_numpy(dtype=float) for c in frame.columns}, dict(roles or {}), cluster_ids)

    @property
    def n_rows(self) -> int:
        return len(next(iter(self.columns.values()))) if self.columns else 0

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.columns[name]
        except KeyError:
            raise ConfigError(f"column {name!r} not in dataset") from None

    def __contains__(self, name):
        return name in self.columns

    def matrix(self, names: Sequence[str]) -> np.ndarray:
        if not names:
            return np.empty((self.n_rows, 0))
        return np.column_stack([self[n] for n in names])

    def with_role(self, role: str) -> list[str]:
        return [c for c, r in self.roles.items() if r == role]

    def _one(self, role):
        cols = self.with_role(role)
        return cols[0] if cols else None

    @property
    def outcome(self):
        return self._one("outcome")

    @property
    def treatment(self):
        return self._one("treatment")

    @property
    def instruments(self):
        return self.with_role("instrument")

    @property
    def covariates(self):
        return self.with_role("covariate")

    @property
    def weight(self):
        return self._one("weight")

    def validate(self) -> "Dataset":
        """Check the invariants an IV study needs; returns ``self``."""
        if len(self.with_role("outcome")) != 1:
            raise ConfigError("dataset needs exactly one outcome column")
        if len(self.with_role("treatment")) != 1:
            raise ConfigError("dataset needs exactly one treatment column")
        if not self.instruments:
            raise ConfigError("dataset needs at least one instrument column")
        for name in self.roles:
            if not np.all(np.isfinite(self[name])):
                raise ConfigError(f"column {name!r} has missing or non-finite values")
        if self.cluster_ids is not None:
            if len(self.cluster_ids) != self.n_rows:
                raise ConfigError("cluster_ids length does not match the table")
            G = len(np.unique(self.cluster_ids))
            if G < 2:
                raise ClusterCountError(f"clustered data needs at least 2 clusters, found {G}")
        return self

    def take(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        cols = {k: v[rows] for k, v in self.columns.items()}
        cl = None if self.cluster_ids is None else self.cluster_ids[rows]
        return Dataset(cols, dict(self.roles), cl)

    def replace_columns(self, new: Mapping[str, np.ndarray]) -> "Dataset":
        cols = dict(self.columns)
        cols.update(new)
        return Dataset(cols, dict(self.roles), self.cluster_ids, self.n_dropped)


@dataclass
class FitResult:
    """Least-squares fit under a named variance estimator."""

    names: tuple[str, ...]
    coef: np.ndarray
    vcov: np.ndarray
    n: int
    df_residual: int
    residuals: np.ndarray
    sigma2_hat: float
    flavor: str
    alpha: float = 0.05
    n_clusters: int | None = None
    meta: dict = field(default_factory=dict)
    # internals needed to re-derive the covariance under another flavor
    design: np.ndarray | None = field(default=None, repr=False)
    bread: np.ndarray | None = field(default=None, repr=False)
    clusters: np.ndarray | None = field(default=None, repr=False)
    n_params: int | None = field(default=None, repr=False)

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.vcov), 0.0, None))

    @property
    def t(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.coef / self.se

    @property
    def p(self) -> np.ndarray:
        return 2.0 * stats.norm.sf(np.abs(self.t))

    @property
    def ci_low(self) -> np.ndarray:
        return self.coef - stats.norm.ppf(1 - self.alpha / 2) * self.se

    @property
    def ci_high(self) -> np.ndarray:
        return self.coef + stats.norm.ppf(1 - self.alpha / 2) * self.se

    @property
    def fitted(self) -> np.ndarray:
        return self.design @ self.coef

    @property
    def response(self) -> np.ndarray:
        return self.fitted + self.residuals

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"{name!r} not among coefficients {self.names}") from None

    def with_vcov(self, spec: VCovSpec) -> "FitResult":
        """Same point estimates, covariance recomputed under ``spec``."""
        if spec.flavor == self.flavor and (spec.flavor != "cr1" or self.clusters is not None):
            return self
        if spec.flavor == "bootstrap":
            raise ConfigError("bootstrap covariance needs the original data; refit instead")
        clusters = self.clusters if spec.flavor == "cr1" else None
        if spec.flavor == "cr1" and clusters is None:
            raise ConfigError("fit has no cluster labels for cr1 covariance")
        V = sandwich_vcov(self.design, self.residuals, spec, clusters=clusters, bread=self.bread, n_params=self.n_params)
        G = len(np.unique(clusters)) if clusters is not None else None
        return replace(self, vcov=V, flavor=spec.flavor, n_clusters=G)

    def summary(self) -> dict:
        return {
            "flavor": self.flavor,
            "n": int(self.n),
            "df_residual": int(self.df_residual),
            "n_clusters": None if self.n_clusters is None else int(self.n_clusters),
            "coefficients": [
                {
                    "name": nm,
                    "coef": float(self.coef[j]),
                    "se": float(self.se[j]),
                    "t": float(self.t[j]),
                    "p": float(self.p[j]),
                    "ci_low": float(self.ci_low[j]),
                    "ci_high": float(self.ci_high[j]),
                }
                for j, nm in enumerate(self.names)
            ],
        }


def check_rank(X: np.ndarray, names: Sequence[str]) -> None:
    """Raise CollinearityError if ``X`` is rank deficient.

    Rank is read off a column-pivoted QR with pivots below
    ``RANK_TOL * |R[0, 0]|`` treated as zero.
    """
    if X.shape[1] == 0:
        return
    R, piv = linalg.qr(X, mode="r", pivoting=True)
    d = np.abs(np.diag(R))
    if d.size == 0 or d[0] == 0.0:
        raise CollinearityError(f"design is identically zero: {list(names)}", names)
    rank = int(np.sum(d > RANK_TOL * d[0]))
    if rank < X.shape[1]:
        bad = [names[i] for i in piv[rank:]]
        raise CollinearityError(f"collinear columns: {bad}", bad)


def _solve(X, y):
    Q, R = np.linalg.qr(X)
    coef = linalg.solve_triangular(R, Q.T @ y)
    Rinv = linalg.solve_triangular(R, np.eye(R.shape[0]))
    return coef, Rinv @ Rinv.T


def sandwich_vcov(X, residuals, spec: VCovSpec, *, clusters=None, bread=None, n_params=None) -> np.ndarray:
    """Covariance of least-squares coefficients for a closed-form flavor.

    ``n_params`` defaults to ``X.shape[1]``; pass the full parameter count
    when ``X`` was residualized on other regressors.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    e = np.asarray(residuals, dtype=float)
    n, k = X.shape
    k = k if n_params is None else n_params
    if bread is None:
        bread = np.linalg.inv(X.T @ X)
    if n <= k:
        raise DegreesOfFreedomError(f"n = {n} does not exceed the {k} parameters")
    if spec.flavor == "classic":
        V = (e @ e) / (n - k) * bread
    elif spec.flavor == "hc1":
        scores = X * e[:, None]
        V = n / (n - k) * bread @ (scores.T @ scores) @ bread
    elif spec.flavor == "cr1":
        if clusters is None:
            raise ConfigError("cr1 covariance requires cluster labels")
        _, inv = np.unique(clusters, return_inverse=True)
        G = int(inv.max()) + 1
        if G < 2:
            raise ClusterCountError(f"cr1 covariance needs at least 2 clusters, found {G}")
        S = np.zeros((G, X.shape[1]))
        np.add.at(S, inv, X * e[:, None])
        c = G / (G - 1) * (n - 1) / (n - k)
        V = c * bread @ (S.T @ S) @ bread
    else:
        raise ConfigError(f"flavor {spec.flavor!r} has no closed-form sandwich")
    return (V + V.T) / 2.0


def _as_matrix(X, names):
    if isinstance(X, pd.DataFrame):
        return X.to_numpy(dtype=float), list(X.columns) if names is None else list(names)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if names is None:
        names = [f"x{j}" for j in range(X.shape[1])]
    return X, list(names)


def ols_fit(
    y,
    X,
    spec: VCovSpec = VCovSpec(),
    *,
    names: Sequence[str] | None = None,
    intercept: bool = True,
    clusters=None,
    weights=None,
    alpha: float = 0.05,
    absorbed: int = 0,
    n_jobs: int = 1,
) -> FitResult:
    """Least-squares fit of ``y`` on ``X`` (plus an intercept by default).

    Parameters
    ----------
    y : array-like, shape (n,)
    X : array-like or DataFrame, shape (n, k)
    spec : VCovSpec
        Covariance flavor.  ``cr1`` (and clustered bootstrap) need ``clusters``.
    intercept : bool
        Prepend a constant column named ``(intercept)``.
    weights : array-like, optional
        Per-row weights, applied by scaling rows with ``sqrt(w)``.
    absorbed : int
        Parameters already partialled out of ``y`` and ``X``; they count
        toward the degrees of freedom.

    Raises
    ------
    CollinearityError, DegreesOfFreedomError, ClusterCountError
    """
    X, names = _as_matrix(X, names)
    y = np.asarray(y, dtype=float).ravel()
    n = len(y)
    if X.shape[0] != n:
        raise ConfigError(f"y has {n} rows but X has {X.shape[0]}")
    if intercept:
        X = np.column_stack([np.ones(n), X])
        names = [INTERCEPT] + names
    if weights is not None:
        w = np.sqrt(np.asarray(weights, dtype=float))
        X = X * w[:, None]
        y = y * w
    k_total = X.shape[1] + absorbed
    if n <= k_total:
        raise DegreesOfFreedomError(f"n = {n} does not exceed the {k_total} parameters")
    check_rank(X, names)
    coef, bread = _solve(X, y)
    resid = y - X @ coef
    sigma2 = float(resid @ resid) / (n - k_total)
    if spec.flavor in ("cr1",) or (spec.flavor == "bootstrap" and spec.clustered):
        if clusters is None:
            raise ConfigError("clustered covariance requested but no cluster labels supplied")
    cl = None if clusters is None else np.asarray(clusters)

    meta = {}
    if spec.flavor == "bootstrap":
        V, dropped = _bootstrap_vcov(X, y, cl if spec.clustered else None, spec, n_jobs)
        meta["boot_dropped"] = dropped
    else:
        V = sandwich_vcov(X, resid, spec, clusters=cl, bread=bread, n_params=k_total)
    G = len(np.unique(cl)) if cl is not None and spec.flavor in ("cr1", "bootstrap") else None
    return FitResult(
        names=tuple(names),
        coef=coef,
        vcov=V,
        n=n,
        df_residual=n - k_total,
        residuals=resid,
        sigma2_hat=sigma2,
        flavor=spec.flavor,
        alpha=alpha,
        n_clusters=G,
        meta=meta,
        design=X,
        bread=bread,
        clusters=cl,
        n_params=k_total,
    )


def _bootstrap_vcov(X, y, clusters, spec, n_jobs):
    n = len(y)

    def one(r):
        rows, _ = _resample.resample_indices(n, clusters, spec.seed, r)
        Xb = X[rows]
        try:
            check_rank(Xb, [str(j) for j in range(X.shape[1])])
        except CollinearityError:
            return None
        return _solve(Xb, y[rows])[0]

    draws = _resample.map_replicates(one, spec.boot_reps, n_jobs)
    kept = np.array([b for b in draws if b is not None])
    dropped = spec.boot_reps - len(kept)
    if dropped > _resample.MAX_DROP_SHARE * spec.boot_reps or len(kept) < 2:
        raise BootstrapInstabilityError(f"{dropped} of {spec.boot_reps} bootstrap replicates were rank deficient")
    return np.atleast_2d(np.cov(kept, rowvar=False)), dropped


def fwl_residualize(
    data: Dataset,
    targets: Sequence[str],
    controls: Sequence[str] = (),
    *,
    intercept: bool = True,
    weights=None,
) -> Dataset:
    """Replace each target column by its residual on ``controls`` (+ intercept).

    With ``weights``, targets and controls (and the intercept) are first
    scaled by ``sqrt(w)`` so that downstream unweighted fits are WLS fits.
    """
    n = data.n_rows
    C = data.matrix(list(controls))
    cnames = list(controls)
    if intercept:
        C = np.column_stack([np.ones(n), C])
        cnames = [INTERCEPT] + cnames
    T = data.matrix(list(targets))
    if weights is not None:
        w = np.sqrt(np.asarray(weights, dtype=float))
        C = C * w[:, None]
        T = T * w[:, None]
    if C.shape[1] == 0:
        return data.replace_columns({t: T[:, j] for j, t in enumerate(targets)})
    check_rank(C, cnames)
    Q, _ = np.linalg.qr(C)
    R = T - Q @ (Q.T @ T)
    return data.replace_columns({t: R[:, j] for j, t in enumerate(targets)})
