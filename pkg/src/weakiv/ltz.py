"""Zero-first-stage placebo regressions and local-to-zero debiasing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import ConfigError, DegreesOfFreedomError, SingularVCovError
from .inference import InferenceResult, IntervalSet
from .iv import IVModel, component_fits, tsls_fit
from .regression import FitResult, VCovSpec
from .strength import partial_f

PSD_TOL = 1e-10


@dataclass(frozen=True)
class LTZPrior:
    """Prior mean and covariance of the instruments' direct effect on y."""

    mu: np.ndarray
    omega: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        om = np.atleast_2d(np.asarray(self.omega, dtype=float))
        if om.shape != (len(mu), len(mu)):
            raise ConfigError(f"omega must be {len(mu)}x{len(mu)}, got {om.shape}")
        scale = max(1.0, float(np.abs(om).max()))
        if np.abs(om - om.T).max() > PSD_TOL * scale:
            raise ConfigError("omega is not symmetric")
        if np.linalg.eigvalsh((om + om.T) / 2).min() < -PSD_TOL * scale:
            raise ConfigError("omega is not positive semidefinite")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "omega", (om + om.T) / 2)

    @classmethod
    def zero(cls, p_z: int) -> "LTZPrior":
        return cls(np.zeros(p_z), np.zeros((p_z, p_z)))

    @classmethod
    def from_placebo(cls, placebo: "PlaceboResult") -> "LTZPrior":
        """Prior centred on the placebo reduced form, with its covariance."""
        return cls(placebo.reduced_form.coef.copy(), placebo.reduced_form.vcov.copy())


@dataclass(frozen=True)
class PlaceboResult:
    reduced_form: FitResult
    first_stage: FitResult
    first_stage_f: float | None
    n_rows: int

    def to_dict(self) -> dict:
        return {
            "reduced_form": self.reduced_form.summary(),
            "first_stage": self.first_stage.summary(),
            "first_stage_f": self.first_stage_f,
            "n_rows": self.n_rows,
        }


def zfs_placebo(model: IVModel, rows, spec: VCovSpec = VCovSpec(), alpha: float = 0.05) -> PlaceboResult:
    """Reduced form of y on the instruments within a zero-first-stage subsample.

    ``rows`` is a boolean mask or an index array.  The subsample first stage
    and its F are reported so the zero-first-stage premise can be checked;
    the F is ``None`` when its covariance is singular.
    """
    rows = np.asarray(rows)
    if rows.dtype == bool:
        if len(rows) != model.n:
            raise ConfigError("row mask length differs from the number of rows")
        rows = np.flatnonzero(rows)
    if len(rows) == 0:
        raise ConfigError("placebo subsample is empty")
    sub = model.take(rows)
    k = sub.p_z + 1 + sub.X.shape[1]
    if sub.n <= k:
        raise DegreesOfFreedomError(f"placebo subsample has {sub.n} rows for {k} parameters")
    first, reduced = component_fits(sub, spec.analytic(), alpha=alpha)
    try:
        F = partial_f(first)
    except SingularVCovError:
        F = None
    return PlaceboResult(reduced, first, F, int(sub.n))


def ltz_adjust(model: IVModel, prior: LTZPrior, spec: VCovSpec = VCovSpec(), alpha: float = 0.05) -> InferenceResult:
    """Local-to-zero adjusted 2SLS estimate and normal interval.

    With ``A = (d' P_Z d)^-1 d' P_Z Z = (d' P_Z d)^-1 d' Z`` on the residualized
    data, the point estimate is ``tau_hat - A mu`` and the variance
    ``V_2SLS + A omega A'``.
    """
    if len(prior.mu) != model.p_z:
        raise ConfigError(f"prior has {len(prior.mu)} entries for {model.p_z} instruments")
    a_spec = spec.analytic()
    fit = tsls_fit(model, a_spec, alpha=alpha)
    r = model.residualized
    A = (r.d @ r.Z) / fit.meta["dPzd"]
    tau = float(fit.coef[0]) - float(A @ prior.mu)
    var = float(fit.vcov[0, 0]) + float(A @ prior.omega @ A)
    se = float(np.sqrt(max(var, 0.0)))
    z = float(stats.norm.ppf(1 - alpha / 2))
    p = float(2 * stats.norm.sf(abs(tau / se))) if se > 0 else float(tau == 0.0)
    return InferenceResult(
        "ltz", tau, IntervalSet.of([(tau - z * se, tau + z * se)]), p, alpha, se,
        {"A": A.tolist(), "mu": prior.mu.tolist(), "flavor": a_spec.flavor},
    )
