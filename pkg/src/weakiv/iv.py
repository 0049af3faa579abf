"""2SLS, first stage / reduced form, the Wald ratio and OLS-vs-2SLS discrepancy."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import CollinearityError, DegenerateFirstStageError, PreconditionError
from .regression import Dataset, FitResult, VCovSpec, check_rank, fwl_residualize, ols_fit, sandwich_vcov

DEGENERATE_CORR = 1e-12


@dataclass(frozen=True)
class Residualized:
    y: np.ndarray
    d: np.ndarray
    Z: np.ndarray
    absorbed: int  # intercept + covariates partialled out


@dataclass
class IVModel:
    """Single-treatment linear IV model.

    ``Z`` is ``(n, p_z)``; ``X`` holds exogenous covariates (no intercept,
    which is always included).  Covariates are removed once by FWL and the
    residualized data are shared by every fit built on this model.
    """

    y: np.ndarray
    d: np.ndarray
    Z: np.ndarray
    X: np.ndarray | None = None
    clusters: np.ndarray | None = None
    weights: np.ndarray | None = None
    outcome_name: str = "y"
    treatment_name: str = "d"
    instrument_names: tuple[str, ...] = ()
    covariate_names: tuple[str, ...] = ()
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float).ravel()
        self.d = np.asarray(self.d, dtype=float).ravel()
        Z = np.asarray(self.Z, dtype=float)
        self.Z = Z[:, None] if Z.ndim == 1 else Z
        if self.X is None:
            self.X = np.empty((len(self.y), 0))
        else:
            X = np.asarray(self.X, dtype=float)
            self.X = X[:, None] if X.ndim == 1 else X
        if self.Z.shape[1] < 1:
            raise PreconditionError("IV model needs at least one instrument")
        n = len(self.y)
        if not (len(self.d) == self.Z.shape[0] == self.X.shape[0] == n):
            raise PreconditionError("y, d, Z and X must have the same number of rows")
        if not self.instrument_names:
            self.instrument_names = tuple(f"z{j}" for j in range(self.Z.shape[1]))
        if not self.covariate_names:
            self.covariate_names = tuple(f"x{j}" for j in range(self.X.shape[1]))
        if self.clusters is not None:
            self.clusters = np.asarray(self.clusters)

    @classmethod
    def from_dataset(cls, data: Dataset) -> "IVModel":
        data.validate()
        w = data.weight
        return cls(
            y=data[data.outcome],
            d=data[data.treatment],
            Z=data.matrix(data.instruments),
            X=data.matrix(data.covariates),
            clusters=data.cluster_ids,
            weights=None if w is None else data[w],
            outcome_name=data.outcome,
            treatment_name=data.treatment,
            instrument_names=tuple(data.instruments),
            covariate_names=tuple(data.covariates),
        )

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def p_z(self) -> int:
        return self.Z.shape[1]

    @property
    def identification(self) -> str:
        return "just-identified" if self.p_z == 1 else "over-identified"

    def take(self, rows, clusters=None) -> "IVModel":
        rows = np.asarray(rows)
        if clusters is None and self.clusters is not None:
            clusters = self.clusters[rows]
        return IVModel(
            self.y[rows], self.d[rows], self.Z[rows], self.X[rows], clusters,
            None if self.weights is None else self.weights[rows],
            self.outcome_name, self.treatment_name, self.instrument_names, self.covariate_names,
        )

    def with_outcome(self, y) -> "IVModel":
        return IVModel(
            y, self.d, self.Z, self.X, self.clusters, self.weights,
            self.outcome_name, self.treatment_name, self.instrument_names, self.covariate_names,
        )

    @cached_property
    def residualized(self) -> Residualized:
        names = ["__y", "__d"] + [f"__z{j}" for j in range(self.p_z)]
        cov = [f"__x{j}" for j in range(self.X.shape[1])]
        cols = {"__y": self.y, "__d": self.d}
        cols.update({f"__z{j}": self.Z[:, j] for j in range(self.p_z)})
        cols.update({c: self.X[:, j] for j, c in enumerate(cov)})
        try:
            out = fwl_residualize(Dataset(cols), names, cov, weights=self.weights)
        except CollinearityError as exc:
            cnames = {f"__x{j}": nm for j, nm in enumerate(self.covariate_names)}
            bad = [cnames.get(c, c) for c in exc.columns]
            raise CollinearityError(f"collinear covariates: {bad}", bad) from None
        Zr = out.matrix(names[2:])
        Zs = self.Z if self.weights is None else self.Z * np.sqrt(self.weights)[:, None]
        scale = np.linalg.norm(Zs, axis=0)
        for j, nm in enumerate(self.instrument_names):
            if np.linalg.norm(Zr[:, j]) <= 1e-10 * max(scale[j], 1e-300):
                raise CollinearityError(f"instrument {nm!r} has no variation beyond the covariates", [nm])
        check_rank(Zr, list(self.instrument_names))
        return Residualized(out["__y"], out["__d"], Zr, 1 + self.X.shape[1])


def _projection(model: IVModel):
    r = model.residualized
    Q, _ = np.linalg.qr(r.Z)
    dhat = Q @ (Q.T @ r.d)
    dPd = float(dhat @ dhat)
    dd = float(r.d @ r.d)
    corr = np.sqrt(dPd / dd) if dd > 0 else 0.0
    if not corr >= DEGENERATE_CORR:
        raise DegenerateFirstStageError(f"first stage is degenerate: corr(d, d_hat) = {corr:.3g}")
    return r, dhat, dPd, corr


def tsls_fit(model: IVModel, spec: VCovSpec = VCovSpec(), *, alpha: float = 0.05, n_jobs: int = 1) -> FitResult:
    """2SLS estimate of the treatment coefficient.

    The covariance uses structural residuals ``y - d * tau`` with the
    projected treatment in the bread.  Returns a one-coefficient FitResult.
    """
    r, dhat, dPd, corr = _projection(model)
    tau = float(dhat @ r.y) / dPd
    e = r.y - r.d * tau
    k = 1 + r.absorbed
    n = model.n
    bread = np.array([[1.0 / dPd]])
    cl = model.clusters
    meta = {"first_stage_corr": corr, "dPzd": dPd, "p_z": model.p_z}
    if spec.flavor == "bootstrap":
        from .bootstrap import draw_replicates

        reps = draw_replicates(model, spec, n_jobs=n_jobs)
        V = np.array([[np.var(reps.tau[reps.ok], ddof=1)]])
        meta["boot_dropped"] = reps.n_dropped
    else:
        V = sandwich_vcov(dhat[:, None], e, spec, clusters=cl, bread=bread, n_params=k)
    G = len(np.unique(cl)) if cl is not None and spec.flavor in ("cr1", "bootstrap") else None
    return FitResult(
        names=(model.treatment_name,),
        coef=np.array([tau]),
        vcov=V,
        n=n,
        df_residual=n - k,
        residuals=e,
        sigma2_hat=float(e @ e) / (n - k),
        flavor=spec.flavor,
        alpha=alpha,
        n_clusters=G,
        meta=meta,
        design=dhat[:, None],
        bread=bread,
        clusters=cl,
        n_params=k,
    )


def component_fits(model: IVModel, spec: VCovSpec = VCovSpec(), *, alpha: float = 0.05, n_jobs: int = 1):
    """First-stage (d on Z) and reduced-form (y on Z) fits on residualized data."""
    r = model.residualized
    names = list(model.instrument_names)
    analytic = spec.analytic()
    kw = dict(names=names, intercept=False, clusters=model.clusters, alpha=alpha, absorbed=r.absorbed)
    first = ols_fit(r.d, r.Z, analytic, **kw)
    reduced = ols_fit(r.y, r.Z, analytic, **kw)
    if spec.flavor == "bootstrap":
        from dataclasses import replace

        from .bootstrap import draw_replicates

        reps = draw_replicates(model, spec, n_jobs=n_jobs, require_iv=False)
        first = replace(first, vcov=np.atleast_2d(np.cov(reps.pi[reps.ok_first], rowvar=False)), flavor="bootstrap")
        reduced = replace(reduced, vcov=np.atleast_2d(np.cov(reps.gamma[reps.ok_first], rowvar=False)), flavor="bootstrap")
    return first, reduced


def naive_ols(model: IVModel, spec: VCovSpec = VCovSpec(), *, alpha: float = 0.05, n_jobs: int = 1) -> FitResult:
    """OLS of y on d and the covariates, leaving the instruments out."""
    r = model.residualized
    return ols_fit(
        r.y, r.d, spec, names=[model.treatment_name], intercept=False,
        clusters=model.clusters, alpha=alpha, absorbed=r.absorbed, n_jobs=n_jobs,
    )


def wald_ratio(model: IVModel) -> float:
    """Difference-in-means ratio for a single binary instrument, no covariates."""
    if model.p_z != 1 or model.X.shape[1] > 0 or model.weights is not None:
        raise PreconditionError("wald_ratio needs one instrument, no covariates and no weights")
    z = model.Z[:, 0]
    levels = np.unique(z)
    if len(levels) != 2:
        raise PreconditionError(f"wald_ratio needs a binary instrument, found {len(levels)} levels")
    hi = z == levels[1]
    dy = model.y[hi].mean() - model.y[~hi].mean()
    dd = model.d[hi].mean() - model.d[~hi].mean()
    if dd == 0.0:
        raise DegenerateFirstStageError("treatment means are equal across instrument groups")
    return float(dy / dd)


@dataclass(frozen=True)
class DiscrepancyReport:
    tau_2sls: float
    tau_ols: float
    ratio_abs: float | None
    same_sign: bool | None
    se_ratio: float | None
    se_2sls: float
    se_ols: float
    ols_zero: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def discrepancy(model: IVModel, spec: VCovSpec = VCovSpec()) -> DiscrepancyReport:
    """|tau_2SLS / tau_OLS|, sign agreement and the analytic SE ratio."""
    analytic = spec.analytic()
    iv = tsls_fit(model, analytic)
    ols = naive_ols(model, analytic)
    t_iv, t_ols = float(iv.coef[0]), float(ols.coef[0])
    se_iv, se_ols = float(iv.se[0]), float(ols.se[0])
    zero = t_ols == 0.0
    return DiscrepancyReport(
        tau_2sls=t_iv,
        tau_ols=t_ols,
        ratio_abs=None if zero else abs(t_iv / t_ols),
        same_sign=None if zero else bool(np.sign(t_iv) == np.sign(t_ols)),
        se_ratio=se_iv / se_ols if se_ols > 0 else None,
        se_2sls=se_iv,
        se_ols=se_ols,
        ols_zero=zero,
    )


def instrument_matrix(model: IVModel, names: Sequence[str] | None = None) -> np.ndarray:
    """Residualized instrument block, optionally restricted to ``names``."""
    Z = model.residualized.Z
    if names is None:
        return Z
    idx = [model.instrument_names.index(n) for n in names]
    return Z[:, idx]
