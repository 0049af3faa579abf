"""Generator for the tF critical-value table shipped in ``data/``.

The 2SLS t-ratio and the first-stage t-ratio ``f`` are asymptotically
jointly normal; the size of ``|t| > c(F)`` is maximised when the
correlation between the structural and first-stage errors is +-1.  In that
limit the first-stage ratio is ``f = f0 + e`` with ``e ~ N(0, 1)``, the
Anderson-Rubin ratio is ``e`` itself, and

    |t| = |e| * |f| / |f0|.

For a given observed ``f`` the test therefore accepts exactly when ``f0``
lies inside ``[f**2 / (f + c), f**2 / (f - c)]`` (or the negative-side
analogue), i.e. the critical value function defines a family of confidence
sets for ``f0``.  The table is the function ``c`` whose worst-case rejection
rate equals ``alpha`` for every ``f0`` up to the point where ``c`` falls to
the normal critical value; beyond that ``c`` stays at the normal value.

The march below solves that condition one ``f0`` step at a time.  For
``alpha = 0.05`` it crosses 1.96 at ``F = 104.67`` and gives
``c(10) = 3.43``.  Above the last knot of each level the normal critical
value is used.

Run ``python -m weakiv.tfgen`` to rebuild the CSV.
"""

from __future__ import annotations

import argparse
import csv
from pathlib import Path

import numpy as np
from scipy.special import ndtr, ndtri

ALPHAS = (
    0.001, 0.002, 0.005, 0.01, 0.02, 0.03, 0.04, 0.05,
    0.06, 0.08, 0.10, 0.15, 0.20, 0.30, 0.40, 0.50,
)
N_KNOTS = 400
F0_MAX = 100.0


def march(alpha: float, step: float = 1e-4, f0_max: float = F0_MAX) -> tuple[np.ndarray, np.ndarray]:
    """Solve for the critical value function at level ``alpha``.

    Returns ``(F, c)`` on a dense, increasing grid of ``F`` that ends at the
    first point where ``c`` reaches the normal critical value.  For small
    ``alpha`` (below roughly 0.03) the curve only approaches the normal value
    from above; the march then stops at ``f0 = f0_max``.
    """
    z = float(ndtri(1.0 - alpha / 2.0))
    cap = int(1.5 * (f0_max + 2 * z + 4) / step) + 10
    s = np.empty(cap)
    c = np.empty(cap)
    ln = np.empty(cap)  # f0 bound for negative-side acceptance, increasing
    up = np.empty(cap)  # f0 bound above which positive-side f rejects
    neg_up = np.empty(cap)
    s[0], c[0], ln[0], up[0], neg_up[0] = z, np.inf, 0.0, np.inf, -np.inf
    k = 1
    umin_idx = 0
    f0 = step
    while True:
        # negative side accepts |f| in [z, s1]
        j = int(np.searchsorted(ln[:k], f0, side="right"))
        if j >= k:
            s1 = s[k - 1]
        elif j == 0:
            s1 = z
        else:
            a, b = ln[j - 1], ln[j]
            s1 = s[j - 1] if not np.isfinite(b) else s[j - 1] + (f0 - a) / (b - a) * (s[j] - s[j - 1])

        # positive f below the acceptance interval: U(f) < f0
        loss = 0.0
        if up[umin_idx] < f0:
            i = int(np.searchsorted(neg_up[: umin_idx + 1], -f0, side="left"))
            lo_s = _cross(s, up, i - 1, i, f0) if i > 0 else s[0]
            right = up[umin_idx:k]
            i2 = umin_idx + int(np.searchsorted(right, f0, side="left"))
            hi_s = _cross(s, up, i2 - 1, i2, f0) if i2 < k else s[k - 1]
            loss = float(ndtr(hi_s - f0) - ndtr(lo_s - f0))

        rhs = 1.0 - alpha + float(ndtr(-s1 - f0)) + loss
        s2 = f0 + float(ndtri(rhs))
        c2 = s2 * s2 / f0 - s2
        if k >= cap:
            raise RuntimeError("march did not terminate")
        s[k], c[k] = s2, c2
        ln[k] = s2 * s2 / (c2 - s2) if c2 > s2 else np.inf
        up[k] = s2 * s2 / (s2 - c2) if s2 > c2 else np.inf
        neg_up[k] = -up[k]
        if up[k] <= up[umin_idx]:
            umin_idx = k
        k += 1
        if c2 <= z:
            break
        if f0 >= f0_max:
            return s[1:k] ** 2, c[1:k]
        f0 += step

    F, cv = s[1:k] ** 2, c[1:k]
    # close the curve exactly at the normal critical value
    a, b = cv[-2], cv[-1]
    w = (a - z) / (a - b)
    F_star = F[-2] + w * (F[-1] - F[-2])
    F = np.append(F[:-1], F_star)
    cv = np.append(cv[:-1], z)
    return F, cv


def _cross(s, up, i0, i1, f0):
    a, b = up[i0], up[i1]
    if not (np.isfinite(a) and np.isfinite(b)) or a == b:
        return s[i1] if np.isfinite(b) else s[i0]
    return s[i0] + (f0 - a) / (b - a) * (s[i1] - s[i0])


def knots(alpha: float, step: float = 1e-4, n: int = N_KNOTS) -> tuple[np.ndarray, np.ndarray]:
    """Sparse knots of the critical value function, dense near the lower support."""
    F, cv = march(alpha, step)
    # flat-tail noise can break monotonicity by ~1e-6; round upward
    cv = np.maximum.accumulate(cv[::-1])[::-1]
    q = float(ndtri(1.0 - alpha / 2.0)) ** 2
    gap = np.geomspace(F[0] - q, F[-1] - q, n)
    Fk = q + gap
    Fk[-1] = F[-1]
    ck = np.interp(np.log(Fk), np.log(F), cv)
    ck[-1] = cv[-1]
    return Fk, ck


def write_table(path: Path, alphas=ALPHAS, step: float = 1e-4) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["alpha", "F", "c"])
        for a in alphas:
            Fk, ck = knots(a, step)
            for F, c in zip(Fk, ck):
                w.writerow([repr(a), f"{F:.10g}", f"{c:.10g}"])


def main(argv=None):
    p = argparse.ArgumentParser(description="Rebuild the tF critical-value table.")
    p.add_argument("--out", type=Path, default=Path(__file__).parent / "data" / "tf_critical_values.csv")
    p.add_argument("--step", type=float, default=1e-4)
    args = p.parse_args(argv)
    write_table(args.out, step=args.step)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
