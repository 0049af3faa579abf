"""Inference on the structural coefficient: analytic, bootstrap-c,
bootstrap-t, Anderson-Rubin and tF.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import optimize, stats

from . import tftable
from .bootstrap import Replicates, draw_replicates
from ._resample import MAX_DROP_SHARE
from .errors import BootstrapInstabilityError, PreconditionError, SingularVCovError
from .iv import IVModel, component_fits, tsls_fit
from .regression import VCovSpec, ols_fit
from .strength import partial_f

METHODS = ("analytic", "bootstrap_c", "bootstrap_t", "ar", "tf")
KINDS = ("bounded", "unbounded_left", "unbounded_right", "whole_line", "empty", "disconnected")
INF = math.inf
ZERO_SE_REL = 1e-8


@dataclass(frozen=True)
class IntervalSet:
    """Union of disjoint closed intervals on the real line, endpoints may be +-inf."""

    intervals: tuple[tuple[float, float], ...] = ()
    kind: str = "empty"
    flags: tuple[str, ...] = ()

    @classmethod
    def of(cls, intervals: Sequence[tuple[float, float]], flags: Sequence[str] = ()) -> "IntervalSet":
        pieces = sorted((float(a), float(b)) for a, b in intervals if a <= b)
        merged: list[list[float]] = []
        for a, b in pieces:
            if merged and a <= merged[-1][1]:
                merged[-1][1] = max(merged[-1][1], b)
            else:
                merged.append([a, b])
        ivs = tuple((a, b) for a, b in merged)
        return cls(ivs, _kind(ivs), tuple(flags))

    @classmethod
    def whole_line(cls, flags=()) -> "IntervalSet":
        return cls.of([(-INF, INF)], flags)

    @classmethod
    def empty(cls, flags=()) -> "IntervalSet":
        return cls((), "empty", tuple(flags))

    def contains(self, x: float) -> bool:
        return any(a <= x <= b for a, b in self.intervals)

    __contains__ = contains

    @property
    def bounded(self) -> bool:
        return self.kind == "bounded"

    @property
    def low(self) -> float:
        return self.intervals[0][0] if self.intervals else math.nan

    @property
    def high(self) -> float:
        return self.intervals[-1][1] if self.intervals else math.nan

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "intervals": [[_enc(a), _enc(b)] for a, b in self.intervals],
            "flags": list(self.flags),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IntervalSet":
        ivs = tuple((_dec(a), _dec(b)) for a, b in d["intervals"])
        return cls(ivs, d["kind"], tuple(d.get("flags", ())))


def _kind(ivs) -> str:
    if not ivs:
        return "empty"
    if len(ivs) > 1:
        return "disconnected"
    a, b = ivs[0]
    if a == -INF and b == INF:
        return "whole_line"
    if a == -INF:
        return "unbounded_left"
    if b == INF:
        return "unbounded_right"
    return "bounded"


def _enc(x: float):
    if x == INF:
        return "inf"
    if x == -INF:
        return "-inf"
    return float(x)


def _dec(x) -> float:
    return float(x)


@dataclass
class InferenceResult:
    method: str
    point: float
    ci: IntervalSet
    p_null: float
    alpha: float
    se: float | None = None
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "point": float(self.point),
            "se": None if self.se is None else float(self.se),
            "ci": self.ci.to_dict(),
            "p_null": float(self.p_null),
            "alpha": float(self.alpha),
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "InferenceResult":
        return cls(d["method"], d["point"], IntervalSet.from_dict(d["ci"]), d["p_null"], d["alpha"], d.get("se"), d.get("meta", {}))


def analytic_infer(model: IVModel, spec: VCovSpec = VCovSpec(), alpha: float = 0.05) -> InferenceResult:
    """Normal-reference t-test and Wald interval for the 2SLS coefficient."""
    a_spec = spec.analytic()
    fit = tsls_fit(model, a_spec, alpha=alpha)
    tau, se = float(fit.coef[0]), float(fit.se[0])
    z = stats.norm.ppf(1 - alpha / 2)
    p = float(2 * stats.norm.sf(abs(tau / se))) if se > 0 else (0.0 if tau != 0 else 1.0)
    return InferenceResult("analytic", tau, IntervalSet.of([(tau - z * se, tau + z * se)]), p, alpha, se, {"flavor": a_spec.flavor})


# -- bootstrap ---------------------------------------------------------------


def _quantile(sorted_x: np.ndarray, q: float) -> float:
    return float(np.quantile(sorted_x, q))


def invert_pvalue(excludes: Callable[[float], bool], tol: float = 1e-10) -> float:
    """Smallest level at which ``excludes(level)`` becomes true, by bisection.

    ``excludes`` must be monotone: once true it stays true for larger levels.
    """
    if not excludes(1.0):
        return 1.0
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if excludes(mid):
            hi = mid
        else:
            lo = mid
    return hi


def bootstrap_infer(
    model: IVModel,
    spec: VCovSpec,
    alpha: float = 0.05,
    *,
    n_jobs: int = 1,
    replicates: Replicates | None = None,
) -> tuple[InferenceResult, InferenceResult]:
    """Bootstrap-c and bootstrap-t results for the 2SLS coefficient.

    Bootstrap-c uses percentiles of the replicate estimates.  Bootstrap-t
    studentizes around the full-sample estimate,
    ``t* = (tau* - tau_hat) / se(tau*)``, and forms
    ``[tau_hat - q(1 - a/2) se, tau_hat - q(a/2) se]`` with the full-sample
    analytic SE.  p-values are the smallest level whose interval excludes 0.
    """
    reps = replicates if replicates is not None else draw_replicates(model, spec, n_jobs=n_jobs)
    if reps.n_dropped > MAX_DROP_SHARE * reps.B:
        raise BootstrapInstabilityError(f"{reps.n_dropped} of {reps.B} bootstrap replicates dropped")
    a_spec = spec.analytic()
    fit = tsls_fit(model, a_spec, alpha=alpha)
    tau, se = float(fit.coef[0]), float(fit.se[0])

    taus = np.sort(reps.tau[reps.ok])
    # resamples whose SE is zero up to rounding cannot be studentized
    ok_t = reps.ok & (reps.se > ZERO_SE_REL * se)
    tstar = np.sort((reps.tau[ok_t] - tau) / reps.se[ok_t])
    base = {"B": reps.B, "seed": int(reps.seed), "dropped": reps.n_dropped, "se_flavor": reps.se_flavor}

    def c_ci(a):
        return _quantile(taus, a / 2), _quantile(taus, 1 - a / 2)

    def t_ci(a):
        return tau - _quantile(tstar, 1 - a / 2) * se, tau - _quantile(tstar, a / 2) * se

    def excl(ci_fn):
        def f(a):
            lo, hi = ci_fn(a)
            return not (lo <= 0.0 <= hi)
        return f

    lo, hi = c_ci(alpha)
    meta_c = dict(base)
    if not lo <= tau <= hi:
        meta_c["excludes_point"] = True
    res_c = InferenceResult("bootstrap_c", tau, IntervalSet.of([(lo, hi)]), invert_pvalue(excl(c_ci)), alpha, float(np.std(taus, ddof=1)), meta_c)
    lo, hi = t_ci(alpha)
    meta_t = dict(base, zero_se_dropped=int(reps.ok.sum() - ok_t.sum()))
    res_t = InferenceResult("bootstrap_t", tau, IntervalSet.of([(lo, hi)]), invert_pvalue(excl(t_ci)), alpha, se, meta_t)
    return res_c, res_t


# -- Anderson-Rubin ------------------------------------------------------------


class _ARPieces:
    """``gamma(tau) = g0 - tau g1`` and ``V(tau) = V0 - tau W + tau^2 V2``.

    These are the reduced-form coefficient and its covariance from
    regressing ``y - d * tau`` on the instruments, exactly as a direct
    regression would produce them.
    """

    def __init__(self, model: IVModel, spec: VCovSpec):
        r = model.residualized
        spec = spec.analytic()
        Z = r.Z
        n, p = Z.shape
        k = p + r.absorbed
        B = np.linalg.inv(Z.T @ Z)
        g0 = B @ (Z.T @ r.y)
        g1 = B @ (Z.T @ r.d)
        uy = r.y - Z @ g0
        ud = r.d - Z @ g1
        if spec.flavor == "classic":
            M = lambda a, b: float(a @ b) / (n - k) * (Z.T @ Z)  # noqa: E731
            fac = 1.0
        elif spec.flavor == "hc1":
            M = lambda a, b: (Z * a[:, None]).T @ (Z * b[:, None])  # noqa: E731
            fac = n / (n - k)
        else:
            _, inv = np.unique(model.clusters, return_inverse=True)
            G = int(inv.max()) + 1

            def M(a, b):
                Sa = np.zeros((G, p))
                Sb = np.zeros((G, p))
                np.add.at(Sa, inv, Z * a[:, None])
                np.add.at(Sb, inv, Z * b[:, None])
                return Sa.T @ Sb

            fac = G / (G - 1) * (n - 1) / (n - k)
        myy, myd, mdd = M(uy, uy), M(uy, ud), M(ud, ud)
        self.g0, self.g1, self.p = g0, g1, p
        self.V0 = fac * B @ myy @ B
        self.W = fac * B @ (myd + myd.T) @ B
        self.V2 = fac * B @ mdd @ B
        for name in ("V0", "W", "V2"):
            m = getattr(self, name)
            setattr(self, name, (m + m.T) / 2)

    def gamma(self, tau):
        return self.g0 - tau * self.g1

    def vcov(self, tau):
        return self.V0 - tau * self.W + tau * tau * self.V2

    def stat(self, taus) -> np.ndarray:
        """Vectorized Wald statistic over an array of tau values."""
        taus = np.atleast_1d(np.asarray(taus, dtype=float))
        g = self.g0[None, :] - taus[:, None] * self.g1[None, :]
        V = self.V0[None] - taus[:, None, None] * self.W[None] + (taus**2)[:, None, None] * self.V2[None]
        if self.p == 1:
            with np.errstate(divide="ignore", invalid="ignore"):
                return g[:, 0] ** 2 / V[:, 0, 0]
        return np.einsum("ti,ti->t", g, np.linalg.solve(V, g[..., None])[..., 0])


def ar_statistic(model: IVModel, tau0: float, spec: VCovSpec = VCovSpec()) -> float:
    """Wald statistic from regressing ``y - d * tau0`` on the instruments."""
    r = model.residualized
    fit = ols_fit(
        r.y - r.d * tau0, r.Z, spec.analytic(), names=list(model.instrument_names), intercept=False,
        clusters=model.clusters, absorbed=r.absorbed,
    )
    g, V = fit.coef, fit.vcov
    w = np.linalg.eigvalsh(V)
    if w.max() <= 0 or w.min() <= 1e-13 * w.max():
        raise SingularVCovError("reduced-form covariance is singular")
    return float(g @ np.linalg.solve(V, g))


def ar_test(model: IVModel, tau0: float = 0.0, spec: VCovSpec = VCovSpec()) -> float:
    """Anderson-Rubin p-value for ``tau = tau0`` (chi-square with p_z df)."""
    return float(stats.chi2.sf(ar_statistic(model, tau0, spec), model.p_z))


def ar_accepts(model: IVModel, taus, alpha: float = 0.05, spec: VCovSpec = VCovSpec()) -> np.ndarray:
    """Boolean mask: which candidate values the AR test does not reject."""
    crit = stats.chi2.ppf(1 - alpha, model.p_z)
    return _ARPieces(model, spec).stat(taus) <= crit


def ar_confidence_set(model: IVModel, alpha: float = 0.05, spec: VCovSpec = VCovSpec(), method: str = "exact") -> IntervalSet:
    """Invert the AR test.

    ``method="exact"`` solves the acceptance region exactly: a quadratic
    inequality for one instrument, and the sign pattern of the degree
    ``2 p_z`` polynomial ``det(V(tau) - gamma gamma' / c)`` otherwise.
    ``method="grid"`` scans ``tau_hat +- 50 SE`` (widening while the edges
    are accepted) and flags sets that escape the widest grid.
    """
    pieces = _ARPieces(model, spec)
    crit = float(stats.chi2.ppf(1 - alpha, model.p_z))
    if method == "grid":
        return _ar_grid(model, pieces, crit, spec)
    if method != "exact":
        raise ValueError(f"unknown method {method!r}")
    if model.p_z == 1:
        return _ar_quadratic(pieces, crit)
    return _ar_polynomial(model, pieces, crit, spec)


def _ar_quadratic(pc: _ARPieces, crit: float) -> IntervalSet:
    # (g0 - tau g1)^2 - c (v0 - tau w + tau^2 v2) <= 0
    g0, g1 = float(pc.g0[0]), float(pc.g1[0])
    v0, w, v2 = float(pc.V0[0, 0]), float(pc.W[0, 0]), float(pc.V2[0, 0])
    A = g1 * g1 - crit * v2
    Bq = -2.0 * g0 * g1 + crit * w
    C = g0 * g0 - crit * v0
    scale = max(abs(g1 * g1), abs(crit * v2), 1e-300)
    if abs(A) <= 1e-14 * scale:
        if Bq == 0.0:
            return IntervalSet.whole_line() if C <= 0 else IntervalSet.empty()
        root = -C / Bq
        return IntervalSet.of([(-INF, root)] if Bq > 0 else [(root, INF)])
    disc = Bq * Bq - 4.0 * A * C
    if disc < 0.0:
        return IntervalSet.of([(-INF, INF)]) if A < 0 else IntervalSet.empty()
    sq = math.sqrt(disc)
    q = -0.5 * (Bq + math.copysign(sq, Bq)) if Bq != 0 else -0.5 * sq
    r1 = q / A
    r2 = C / q if q != 0 else -r1
    lo, hi = min(r1, r2), max(r1, r2)
    if A > 0:
        return IntervalSet.of([(lo, hi)])
    if lo == hi:
        return IntervalSet.whole_line()
    return IntervalSet.of([(-INF, lo), (hi, INF)])


def _center_scale(model, spec):
    try:
        fit = tsls_fit(model, spec.analytic())
        center, scale = float(fit.coef[0]), float(fit.se[0])
    except Exception:  # degenerate first stage: fall back to the OLS-free scale
        center, scale = 0.0, 1.0
    if not (np.isfinite(scale) and scale > 0):
        scale = max(abs(center), 1.0)
    return center, scale


def _ar_polynomial(model, pc: _ARPieces, crit: float, spec) -> IntervalSet:
    center, scale = _center_scale(model, spec)
    p = pc.p
    deg = 2 * p
    nodes = np.cos(np.pi * (np.arange(4 * deg + 1) + 0.5) / (4 * deg + 1))

    def detM(s):
        tau = center + scale * s
        g = pc.gamma(tau)
        return np.linalg.det(pc.vcov(tau) - np.outer(g, g) / crit)

    vals = np.array([detM(s) for s in nodes])
    poly = np.polynomial.Chebyshev.fit(nodes, vals, deg, domain=[-1, 1])
    roots = poly.roots()
    real = np.sort(roots[np.abs(roots.imag) <= 1e-7 * np.maximum(1.0, np.abs(roots.real))].real)

    def f(s):
        return float(pc.stat(center + scale * s)[0]) - crit

    # polish roots against the statistic itself
    pts = []
    for s in real:
        h = 1e-6 * max(1.0, abs(s))
        a, b = s - h, s + h
        fa, fb = f(a), f(b)
        if np.sign(fa) != np.sign(fb):
            s = optimize.brentq(f, a, b, xtol=1e-14 * max(1.0, abs(s)), rtol=4 * np.finfo(float).eps)
        pts.append(s)
    pts = sorted(set(pts))
    edges = [-INF] + pts + [INF]
    pieces = []
    for a, b in zip(edges[:-1], edges[1:]):
        if a == -INF and b == INF:
            mid = 0.0
        elif a == -INF:
            mid = b - 1.0 - abs(b)
        elif b == INF:
            mid = a + 1.0 + abs(a)
        else:
            mid = 0.5 * (a + b)
        if f(mid) <= 0.0:
            pieces.append((a, b))
    ivs = [(center + scale * a if np.isfinite(a) else a, center + scale * b if np.isfinite(b) else b) for a, b in pieces]
    return IntervalSet.of(ivs)


def _ar_grid(model, pc: _ARPieces, crit: float, spec, n_points: int = 20001, max_expand: int = 6) -> IntervalSet:
    center, scale = _center_scale(model, spec)
    lo, hi = center - 50 * scale, center + 50 * scale
    flags = []
    # widening adds outer segments; the central resolution is kept
    grid = np.linspace(lo, hi, n_points)
    for _ in range(max_expand + 1):
        acc = pc.stat(grid) <= crit
        left_open, right_open = bool(acc[0]), bool(acc[-1])
        if not (left_open or right_open):
            break
        width = hi - lo
        parts = [grid]
        if left_open:
            parts.insert(0, np.linspace(lo - 3 * width, lo, n_points)[:-1])
            lo -= 3 * width
        if right_open:
            parts.append(np.linspace(hi, hi + 3 * width, n_points)[1:])
            hi += 3 * width
        grid = np.concatenate(parts)
    else:
        flags.append("escape")
        warnings.warn("AR confidence set reaches the widest grid; treating open edges as unbounded", stacklevel=2)
        acc = pc.stat(grid) <= crit
        left_open, right_open = bool(acc[0]), bool(acc[-1])

    def f(t):
        return float(pc.stat(t)[0]) - crit

    pieces = []
    i = 0
    n = len(grid)
    while i < n:
        if not acc[i]:
            i += 1
            continue
        j = i
        while j + 1 < n and acc[j + 1]:
            j += 1
        a = -INF if (i == 0 and left_open) else (grid[i] if i == 0 else optimize.brentq(f, grid[i - 1], grid[i]))
        b = INF if (j == n - 1 and right_open) else (grid[j] if j == n - 1 else optimize.brentq(f, grid[j], grid[j + 1]))
        pieces.append((a, b))
        i = j + 1
    return IntervalSet.of(pieces, flags)


def ar_infer(model: IVModel, spec: VCovSpec = VCovSpec(), alpha: float = 0.05) -> InferenceResult:
    ci = ar_confidence_set(model, alpha, spec)
    try:
        point = float(tsls_fit(model, spec.analytic()).coef[0])
    except Exception:
        point = math.nan
    return InferenceResult("ar", point, ci, ar_test(model, 0.0, spec), alpha, None, {"df": model.p_z, "flavor": spec.analytic().flavor})


# -- tF ------------------------------------------------------------------------


def tf_adjust(t_2sls: float, f_first: float, alpha: float = 0.05, *, point: float | None = None, se: float | None = None) -> InferenceResult:
    """tF inference from the 2SLS t-ratio and the first-stage F.

    With ``point``/``se`` omitted the result is expressed in t units
    (``point = t``, ``se = 1``).  Below the table support the interval is the
    whole line.
    """
    c = tftable.critical_value(f_first, alpha)
    z = float(stats.norm.ppf(1 - alpha / 2))
    if point is None:
        point, se = float(t_2sls), 1.0
    elif se is None:
        se = point / t_2sls if t_2sls != 0 else math.nan
    factor = c / z
    if math.isinf(c):
        ci = IntervalSet.whole_line()
    else:
        ci = IntervalSet.of([(point - c * se, point + c * se)])
    p = tftable.pvalue(t_2sls, f_first)
    return InferenceResult(
        "tf", float(point), ci, p, alpha, float(se * factor) if math.isfinite(factor) else INF,
        {"F": float(f_first), "critical_value": c, "adjustment_factor": factor, "t": float(t_2sls)},
    )


def tf_infer(model: IVModel, spec: VCovSpec = VCovSpec(), alpha: float = 0.05) -> InferenceResult:
    """tF procedure with robust (or cluster-robust) t-ratio and first-stage F."""
    if model.p_z != 1:
        raise PreconditionError("the tF procedure needs exactly one instrument")
    r_spec = spec.robust()
    fit = tsls_fit(model, r_spec, alpha=alpha)
    first, _ = component_fits(model, r_spec)
    F = partial_f(first)
    tau, se = float(fit.coef[0]), float(fit.se[0])
    res = tf_adjust(tau / se, F, alpha, point=tau, se=se)
    res.meta["flavor"] = r_spec.flavor
    return res
