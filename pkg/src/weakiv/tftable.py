"""Lookup into the embedded tF critical-value table.

The table (``data/tf_critical_values.csv``, built by :mod:`weakiv.tfgen`)
holds knots ``(alpha, F, c)``.  Between knots ``c`` is linear in ``log F``.
Below the first knot of a level the tF interval is the whole line; above the
last knot the normal critical value applies.

Confidence intervals are supported at ``alpha`` in ``CI_ALPHAS``; the other
levels in the file only serve p-value inversion.
"""

from __future__ import annotations

import csv
from functools import lru_cache
from importlib import resources

import numpy as np
from scipy import stats

from .errors import UnsupportedAlphaError

CI_ALPHAS = (0.05, 0.01)


@lru_cache(maxsize=1)
def _table() -> dict[float, tuple[np.ndarray, np.ndarray]]:
    rows: dict[float, list[tuple[float, float]]] = {}
    with resources.files("weakiv").joinpath("data/tf_critical_values.csv").open() as fh:
        for rec in csv.DictReader(fh):
            rows.setdefault(float(rec["alpha"]), []).append((float(rec["F"]), float(rec["c"])))
    out = {}
    for a, pts in rows.items():
        F, c = np.array(pts).T
        out[a] = (F, c)
    return out


def table_alphas() -> tuple[float, ...]:
    return tuple(sorted(_table()))


def knots(alpha: float) -> tuple[np.ndarray, np.ndarray]:
    try:
        F, c = _table()[alpha]
    except KeyError:
        raise UnsupportedAlphaError(f"no tF table at alpha = {alpha}") from None
    return F.copy(), c.copy()


def _lookup(F: float, alpha: float) -> float:
    Fk, ck = _table()[alpha]
    if not np.isfinite(F) and F > 0:
        return float(stats.norm.ppf(1 - alpha / 2))
    if not F >= Fk[0]:
        return float("inf")
    if F >= Fk[-1]:
        return float(stats.norm.ppf(1 - alpha / 2))
    return float(np.interp(np.log(F), np.log(Fk), ck))


def critical_value(F: float, alpha: float = 0.05) -> float:
    """tF critical value for first-stage ``F`` (``inf`` below the support)."""
    if alpha not in CI_ALPHAS:
        raise UnsupportedAlphaError(f"tF intervals are tabulated for alpha in {CI_ALPHAS}, got {alpha}")
    return _lookup(F, alpha)


def adjustment_factor(F: float, alpha: float = 0.05) -> float:
    """Multiplier applied to the 2SLS standard error."""
    return critical_value(F, alpha) / float(stats.norm.ppf(1 - alpha / 2))


def pvalue(t: float, F: float) -> float:
    """Smallest level at which ``|t|`` exceeds the tF critical value.

    Inverted over the tabulated levels with linear interpolation in
    ``alpha``; level 1 (critical value 0) closes the grid.  At tabulated
    levels, ``pvalue < alpha`` exactly when the tF test rejects.
    """
    at = abs(float(t))
    alphas = list(table_alphas()) + [1.0]
    g = [(_lookup(F, a) if a < 1.0 else 0.0) - at for a in alphas]
    k = next((i for i, v in enumerate(g) if v < 0.0), None)
    if k is None:
        return 1.0
    if k == 0:
        return float(min(alphas[0], 2.0 * stats.norm.sf(at)))
    a_lo, a_hi = alphas[k - 1], alphas[k]
    if np.isinf(g[k - 1]):
        # interval is unbounded at a_lo; the boundary sits between the
        # support edge and a_hi
        a_support = 2.0 * stats.norm.sf(np.sqrt(F)) if F > 0 else 1.0
        lo = max(a_lo, min(a_support, a_hi))
        return float(0.5 * (lo + a_hi))
    w = g[k - 1] / (g[k - 1] - g[k])
    return float(a_lo + w * (a_hi - a_lo))
