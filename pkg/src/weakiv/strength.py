"""First-stage strength: partial F under several variance estimators,
effective F, bootstrap F and the correlation between d and its fitted value.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .bootstrap import Replicates, draw_replicates
from .errors import DegenerateFirstStageError, SingularVCovError
from .iv import IVModel, component_fits
from .regression import INTERCEPT, FitResult, VCovSpec

RULE_OF_THUMB = 10.0


def _instrument_index(fit: FitResult, instruments: Sequence[str] | None):
    if instruments is None:
        return [j for j, nm in enumerate(fit.names) if nm != INTERCEPT]
    return [fit.index(nm) for nm in instruments]


def _wald(coef: np.ndarray, V: np.ndarray) -> float:
    w = np.linalg.eigvalsh(V)
    if w.max() <= 0.0 or w.min() <= 1e-13 * w.max():
        raise SingularVCovError("instrument-coefficient covariance is singular")
    return float(coef @ np.linalg.solve(V, coef))


def partial_f(first_stage: FitResult, spec: VCovSpec | None = None, instruments: Sequence[str] | None = None) -> float:
    """Wald statistic on the instrument coefficients divided by ``p_z``.

    ``spec`` selects the covariance flavor; by default the fit's own
    covariance is used.
    """
    fit = first_stage if spec is None else first_stage.with_vcov(spec)
    idx = _instrument_index(fit, instruments)
    pi = fit.coef[idx]
    return _wald(pi, fit.vcov[np.ix_(idx, idx)]) / len(idx)


def effective_f(first_stage: FitResult, instruments: Sequence[str] | None = None) -> float:
    """``pi' Q pi / tr(Sigma Q)`` with ``Q = Z'Z / N``.

    ``first_stage`` should carry a robust or cluster-robust covariance and
    be fit on residualized instruments.
    """
    idx = _instrument_index(first_stage, instruments)
    Z = first_stage.design[:, idx]
    Q = Z.T @ Z / Z.shape[0]
    pi = first_stage.coef[idx]
    S = first_stage.vcov[np.ix_(idx, idx)]
    denom = float(np.trace(S @ Q))
    if not denom > 0.0:
        raise SingularVCovError("tr(Sigma_pp Q_zz) is not positive")
    return float(pi @ Q @ pi) / denom


@dataclass(frozen=True)
class BootstrapF:
    value: float
    value_tau: float | None  # Wald form on the 2SLS coefficient instead of pi
    B: int
    n_dropped: int
    degenerate: bool

    def __float__(self):
        return float(self.value)


def bootstrap_f(model: IVModel, spec: VCovSpec, *, n_jobs: int = 1, replicates: Replicates | None = None) -> BootstrapF:
    """Wald F on the first-stage coefficients with a bootstrap covariance.

    Rows are resampled i.i.d., or by whole clusters when
    ``spec.cluster_column`` is set.  A bootstrap covariance that is
    numerically zero gives ``value = inf`` and ``degenerate = True``.
    """
    reps = replicates if replicates is not None else draw_replicates(model, spec, n_jobs=n_jobs, require_iv=False)
    first, _ = component_fits(model, spec.analytic())
    pi = first.coef
    draws = reps.pi[reps.ok_first]
    V = np.atleast_2d(np.cov(draws, rowvar=False))
    scale = float(pi @ pi) + 1e-300
    degenerate = bool(np.max(np.abs(V)) <= 1e-20 * scale)
    if degenerate:
        value = float("inf")
    else:
        try:
            value = _wald(pi, V) / model.p_z
        except SingularVCovError:
            value, degenerate = float("inf"), True
    tau_val = None
    ok = reps.ok
    if ok.sum() >= 2:
        from .iv import tsls_fit

        tau = float(tsls_fit(model, spec.analytic()).coef[0])
        v_tau = float(np.var(reps.tau[ok], ddof=1))
        tau_val = tau * tau / v_tau / model.p_z if v_tau > 0 else float("inf")
    return BootstrapF(value, tau_val, reps.B, reps.n_dropped_first, degenerate)


def rho_d_dhat(first_stage: FitResult) -> float:
    """Sample correlation between the treatment and its first-stage fit."""
    dhat = first_stage.fitted
    d = first_stage.response
    if np.std(dhat) == 0.0 or np.std(d) == 0.0:
        raise DegenerateFirstStageError("fitted treatment has zero variance")
    return float(np.corrcoef(d, dhat)[0, 1])


@dataclass(frozen=True)
class StrengthReport:
    f_classic: float
    f_robust: float
    f_cluster: float | None
    f_boot: float | None
    f_effective: float
    rho_d_dhat: float
    partial_r2: float
    p_z: int
    passes_rule_of_thumb: bool
    f_boot_tau: float | None = None
    boot_dropped: int | None = None
    boot_degenerate: bool | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def strength_report(
    model: IVModel,
    spec: VCovSpec,
    *,
    bootstrap: bool = True,
    n_jobs: int = 1,
    replicates: Replicates | None = None,
) -> StrengthReport:
    """All first-stage statistics for one design.

    The effective F uses the cluster-robust covariance when ``spec`` names a
    cluster column and the heteroskedasticity-robust one otherwise.
    """
    first, _ = component_fits(model, spec.analytic())
    f_classic = partial_f(first, spec.with_flavor("classic"))
    f_robust = partial_f(first, spec.with_flavor("hc1"))
    f_cluster = partial_f(first, spec.with_flavor("cr1")) if spec.clustered else None
    f_eff = effective_f(first.with_vcov(spec.robust()))
    rho = rho_d_dhat(first)
    d = first.response
    r2 = 1.0 - float(first.residuals @ first.residuals) / float(d @ d)
    fb = None
    if bootstrap:
        fb = bootstrap_f(model, spec, n_jobs=n_jobs, replicates=replicates)
    return StrengthReport(
        f_classic=f_classic,
        f_robust=f_robust,
        f_cluster=f_cluster,
        f_boot=None if fb is None else fb.value,
        f_effective=f_eff,
        rho_d_dhat=rho,
        partial_r2=r2,
        p_z=model.p_z,
        passes_rule_of_thumb=bool(f_eff > RULE_OF_THUMB),
        f_boot_tau=None if fb is None else fb.value_tau,
        boot_dropped=None if fb is None else fb.n_dropped,
        boot_degenerate=None if fb is None else fb.degenerate,
    )
