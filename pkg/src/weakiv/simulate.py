"""Monte Carlo laboratory for the linear-normal IV model.

Data generating process, with ``p`` standardized instruments::

    (z_1..z_p, e, v) ~ N(0, R)
    d = z' pi + v
    y = tau d + e

``R`` has unit diagonal, ``corr(e, v) = rho_de`` (endogeneity) and
``corr(z_j, e) = rho_ze`` for every instrument (exclusion violation).  With
clusters, each row is ``sqrt(icc) * c_g + sqrt(1 - icc) * u_i`` with cluster
and row draws from the same ``R``, so marginal moments are unchanged.

Population quantities follow from ``R``::

    Var(d) = pi'pi + 1,  Cov(d, e) = rho_de + rho_ze * sum(pi)
    plim OLS = tau + Cov(d, e) / Var(d)
    plim IV  = tau + rho_ze * sum(pi) / pi'pi

For one instrument the bias ratio is
``|rho(z,e)| / (|rho(d,e)| * |rho(d,d_hat)|)`` with
``rho(d, d_hat) = |pi| / sd(d)``.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from functools import partial
from pathlib import Path

import numpy as np
import yaml
from scipy import stats

from . import tftable
from ._resample import replicate_rng
from .errors import ConfigError, IVError
from .inference import METHODS, ar_test, bootstrap_infer
from .iv import IVModel, component_fits, naive_ols, tsls_fit
from .regression import VCovSpec
from .strength import partial_f, rho_d_dhat
from .study import jsonable

SIM_METHODS = ("analytic", "ar", "tf", "bootstrap_c", "bootstrap_t")
COLUMNS = ("rep", "tau_2sls", "tau_ols", "se_2sls", "f_first", "rho_hat") + tuple(f"reject_{m}" for m in SIM_METHODS)


@dataclass(frozen=True)
class SimSpec:
    n: int = 1000
    p_z: int = 1
    pi: float | tuple[float, ...] = 0.1
    rho_de: float = 0.5
    rho_ze: float = 0.0
    n_clusters: int | None = None
    icc: float = 0.0
    tau_true: float = 1.0
    reps: int = 1000
    seed: int = 0
    alpha: float = 0.05
    methods: tuple[str, ...] = ("analytic", "ar", "tf")
    boot_reps: int = 199

    def __post_init__(self):
        pi = np.atleast_1d(np.asarray(self.pi, dtype=float))
        if len(pi) == 1 and self.p_z > 1:
            pi = np.full(self.p_z, pi[0])
        if len(pi) != self.p_z:
            raise ConfigError(f"pi has {len(pi)} entries for p_z = {self.p_z}")
        object.__setattr__(self, "pi", tuple(float(v) for v in pi))
        object.__setattr__(self, "methods", tuple(self.methods))
        if self.reps < 100:
            raise ConfigError("monte carlo needs reps >= 100")
        if self.n < self.p_z + 3:
            raise ConfigError("n too small for the design")
        bad = [m for m in self.methods if m not in SIM_METHODS]
        if bad:
            raise ConfigError(f"unknown simulation methods {bad}")
        if "tf" in self.methods and (self.p_z != 1 or self.alpha not in tftable.CI_ALPHAS):
            raise ConfigError("tf needs one instrument and alpha in (0.05, 0.01)")
        if self.n_clusters is not None and not 2 <= self.n_clusters <= self.n:
            raise ConfigError("n_clusters must lie between 2 and n")
        if not 0.0 <= self.icc < 1.0:
            raise ConfigError("icc must lie in [0, 1)")
        try:
            np.linalg.cholesky(self.corr())
        except np.linalg.LinAlgError:
            raise ConfigError("implied correlation matrix of (z, e, v) is not positive definite") from None

    def corr(self) -> np.ndarray:
        p = self.p_z
        R = np.eye(p + 2)
        R[:p, p] = R[p, :p] = self.rho_ze
        R[p, p + 1] = R[p + 1, p] = self.rho_de
        return R

    @property
    def vcov(self) -> VCovSpec:
        if self.n_clusters:
            return VCovSpec("cr1", "cluster", self.boot_reps, 0)
        return VCovSpec("hc1", None, self.boot_reps, 0)

    @classmethod
    def from_dict(cls, d: dict) -> "SimSpec":
        known = {f.name for f in fields(cls)}
        extra = sorted(set(d) - known)
        if extra:
            raise ConfigError(f"unknown simulation keys: {extra}")
        d = dict(d)
        if isinstance(d.get("pi"), list):
            d["pi"] = tuple(d["pi"])
        if "methods" in d:
            d["methods"] = tuple(d["methods"])
        return cls(**d)

    @classmethod
    def load(cls, path) -> "SimSpec":
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except FileNotFoundError:
            raise ConfigError(f"simulation spec not found: {path}") from None
        d = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
        if not isinstance(d, dict):
            raise ConfigError(f"{path} does not hold a mapping")
        return cls.from_dict(d)

    def population(self) -> dict:
        pi = np.asarray(self.pi)
        pp = float(pi @ pi)
        var_d = pp + 1.0
        cov_de = self.rho_de + self.rho_ze * float(pi.sum())
        rho_de_pop = cov_de / math.sqrt(var_d)
        rho_ddhat = math.sqrt(pp / var_d)
        bias_ols = cov_de / var_d
        bias_iv = self.rho_ze * float(pi.sum()) / pp if pp > 0 else None
        out = {
            "plim_ols": self.tau_true + bias_ols,
            "plim_iv": None if bias_iv is None else self.tau_true + bias_iv,
            "bias_ols": bias_ols,
            "bias_iv": bias_iv,
            "rho_d_e": rho_de_pop,
            "rho_d_dhat": rho_ddhat,
            "concentration_f": self.n * pp / self.p_z,
            "bias_ratio": None if bias_iv is None or bias_ols == 0 else abs(bias_iv) / abs(bias_ols),
        }
        if self.p_z == 1 and rho_ddhat > 0 and rho_de_pop != 0:
            out["bias_ratio_formula"] = abs(self.rho_ze) / (abs(rho_de_pop) * rho_ddhat)
        return out


def draw(spec: SimSpec, r: int) -> IVModel:
    """Dataset for replicate ``r``."""
    rng = replicate_rng(spec.seed, r)
    L = np.linalg.cholesky(spec.corr())
    p, n = spec.p_z, spec.n
    U = rng.standard_normal((n, p + 2)) @ L.T
    clusters = None
    if spec.n_clusters:
        G = spec.n_clusters
        clusters = np.arange(n) * G // n
        C = rng.standard_normal((G, p + 2)) @ L.T
        U = math.sqrt(spec.icc) * C[clusters] + math.sqrt(1.0 - spec.icc) * U
    Z, e, v = U[:, :p], U[:, p], U[:, p + 1]
    d = Z @ np.asarray(spec.pi) + v
    y = spec.tau_true * d + e
    return IVModel(y, d, Z, clusters=clusters)


def _one_rep(spec: SimSpec, r: int) -> list[float]:
    nan = math.nan
    row = [float(r)] + [nan] * (len(COLUMNS) - 1)
    model = draw(spec, r)
    vs = spec.vcov
    tau0 = spec.tau_true
    try:
        row[2] = float(naive_ols(model, vs).coef[0])
        fit = tsls_fit(model, vs)
        first, _ = component_fits(model, vs)
        tau, se = float(fit.coef[0]), float(fit.se[0])
        F = partial_f(first)
        row[1], row[3], row[4], row[5] = tau, se, F, rho_d_dhat(first)
    except IVError:
        return row
    z = stats.norm.ppf(1 - spec.alpha / 2)
    t0 = (tau - tau0) / se
    for j, m in enumerate(SIM_METHODS):
        if m not in spec.methods:
            continue
        try:
            if m == "analytic":
                rej = abs(t0) > z
            elif m == "ar":
                rej = ar_test(model, tau0, vs) < spec.alpha
            elif m == "tf":
                rej = abs(t0) > tftable.critical_value(F, spec.alpha)
            else:
                continue
        except IVError:
            continue
        row[6 + j] = float(rej)
    if {"bootstrap_c", "bootstrap_t"} & set(spec.methods):
        seed = int(np.random.SeedSequence(spec.seed, spawn_key=(r, 1)).generate_state(1, np.uint64)[0])
        bspec = VCovSpec("bootstrap", vs.cluster_column, spec.boot_reps, seed)
        try:
            bc, bt = bootstrap_infer(model, bspec, spec.alpha)
        except IVError:
            return row
        for j, m in enumerate(SIM_METHODS):
            if m == "bootstrap_c":
                row[6 + j] = float(tau0 not in bc.ci)
            elif m == "bootstrap_t":
                row[6 + j] = float(tau0 not in bt.ci)
    return row


def _median_se(x: np.ndarray, level: float = 0.95) -> float:
    """Monte Carlo SE of the median from a distribution-free order-statistic interval."""
    x = np.sort(x)
    R = len(x)
    zq = stats.norm.ppf(0.5 + level / 2)
    lo = max(int(math.floor(R / 2 - zq * math.sqrt(R) / 2)), 0)
    hi = min(int(math.ceil(R / 2 + zq * math.sqrt(R) / 2)), R - 1)
    return float((x[hi] - x[lo]) / (2 * zq))


@dataclass
class SimSummary:
    spec: dict
    population: dict
    n_valid: int
    n_failed: int
    rejection: dict[str, dict]
    tau_2sls: dict
    tau_ols: dict
    bias_ratio: dict
    ratio_vs_rho: dict
    draws: np.ndarray = field(repr=False, default=None)

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "draws"}
        return jsonable(d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, allow_nan=False) + "\n"

    def to_csv(self) -> str:
        lines = [",".join(COLUMNS)]
        for row in self.draws:
            lines.append(",".join("" if math.isnan(v) else repr(float(v)) for v in row))
        return "\n".join(lines) + "\n"


def _location(x: np.ndarray) -> dict:
    return {
        "median": float(np.median(x)),
        "median_mc_se": _median_se(x),
        "mean": float(np.mean(x)),
        "mean_mc_se": float(np.std(x, ddof=1) / math.sqrt(len(x))),
    }


def monte_carlo(spec: SimSpec, *, n_jobs: int = 1) -> SimSummary:
    """Run ``spec.reps`` replications and summarize.

    Replicate ``r`` draws from a stream fixed by ``(seed, r)``; with
    ``n_jobs > 1`` replicates are spread over worker processes and the
    result is identical to the serial run.
    """
    fn = partial(_one_rep, spec)
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            rows = list(pool.map(fn, range(spec.reps), chunksize=max(1, spec.reps // (8 * n_jobs))))
    else:
        rows = [fn(r) for r in range(spec.reps)]
    A = np.array(rows)
    ok = np.isfinite(A[:, 1]) & np.isfinite(A[:, 2])
    V = A[ok]
    pop = spec.population()
    R = len(V)

    rejection = {}
    for j, m in enumerate(SIM_METHODS):
        if m not in spec.methods:
            continue
        col = V[:, 6 + j]
        col = col[np.isfinite(col)]
        rate = float(col.mean()) if len(col) else math.nan
        rejection[m] = {
            "rate": rate,
            "mc_se": math.sqrt(rate * (1 - rate) / len(col)) if len(col) else math.nan,
            "nominal_band": 3 * math.sqrt(spec.alpha * (1 - spec.alpha) / max(len(col), 1)),
            "n": int(len(col)),
        }

    iv, ols = _location(V[:, 1]), _location(V[:, 2])
    tau = spec.tau_true
    bias = {
        "median": abs(iv["median"] - tau) / abs(ols["median"] - tau) if ols["median"] != tau else math.nan,
        "mean": abs(iv["mean"] - tau) / abs(ols["mean"] - tau) if ols["mean"] != tau else math.nan,
        "population": pop["bias_ratio"],
        "formula": pop.get("bias_ratio_formula"),
    }

    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.abs(V[:, 1] / V[:, 2])
    rho = np.abs(V[:, 5])
    good = np.isfinite(ratio) & (ratio > 0) & np.isfinite(rho)
    lr = np.log(ratio[good])
    fitres = stats.linregress(rho[good], lr) if good.sum() > 2 else None
    ratio_vs_rho = {
        "corr_ratio_rho": float(stats.spearmanr(ratio[good], rho[good]).statistic) if good.sum() > 2 else None,
        "slope_log_ratio_on_rho": None if fitres is None else float(fitres.slope),
        "slope_se": None if fitres is None else float(fitres.stderr),
        "median_ratio": float(np.median(ratio[good])) if good.any() else None,
    }
    return SimSummary(
        spec=asdict(spec),
        population=pop,
        n_valid=R,
        n_failed=int((~ok).sum()),
        rejection=rejection,
        tau_2sls=iv,
        tau_ols=ols,
        bias_ratio=bias,
        ratio_vs_rho=ratio_vs_rho,
        draws=A,
    )
