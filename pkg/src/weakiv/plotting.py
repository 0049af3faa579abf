"""Coefficient plot of OLS and 2SLS intervals from a diagnostics report.

One row per estimator/method: a point marker and a horizontal CI segment.
Unbounded sides of a confidence set are drawn as arrows that end at the
plot margin.  Finite endpoints far outside the bulk of the intervals are
clipped to the axis and marked with an open arrow.  Each row's artists
carry SVG ids (``point-<key>``, ``ci-<key>``, ``arrow-<key>-left``,
``clip-<key>-right`` ...) so the output can be inspected programmatically.
The numbers behind the figure, unclipped, are written as CSV.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.patches import FancyArrowPatch  # noqa: E402

from .inference import IntervalSet  # noqa: E402
from .study import DiagnosticsReport, write_report  # noqa: E402

# layout constants
STYLE = {
    "row_height": 0.42,  # inches per row
    "fig_width": 6.5,
    "margin_in": 1.1,  # inches above and below the rows
    "pad_frac": 0.12,  # x padding beyond the finite extent
    "marker_size": 5.5,
    "line_width": 1.8,
    "group_gap": 0.6,  # extra vertical space between OLS and 2SLS groups
    "max_reach": 8.0,  # axis reaches at most this many median widths past the points
    "colors": {"OLS": "#4d4d4d", "2SLS": "#1f5fa8"},
}
LABELS = {
    "analytic": "analytic",
    "bootstrap_c": "bootstrap-c",
    "bootstrap_t": "bootstrap-t",
    "ar": "Anderson-Rubin",
    "tf": "tF",
    "ltz": "local-to-zero",
}
CSV_FIELDS = ("key", "group", "label", "point", "kind", "piece", "low", "high")


@dataclass(frozen=True)
class PlotRow:
    key: str
    group: str
    label: str
    point: float
    ci: IntervalSet


def _num(x):
    if x is None:
        return math.nan
    return float(x)


def plot_rows(report: DiagnosticsReport) -> list[PlotRow]:
    """OLS first, then every successful 2SLS inference method in report order."""
    rows = []
    if report.ols is not None:
        c = report.ols["coefficients"][0]
        rows.append(PlotRow("ols", "OLS", "OLS", c["coef"], IntervalSet.of([(c["ci_low"], c["ci_high"])])))
    for res in report.inference:
        if "ci" not in res:
            continue
        m = res["method"]
        rows.append(PlotRow(f"2sls-{m}", "2SLS", f"2SLS {LABELS[m]}", _num(res["point"]), IntervalSet.from_dict(res["ci"])))
    if report.ltz is not None:
        rows.append(PlotRow("2sls-ltz", "2SLS", f"2SLS {LABELS['ltz']}", _num(report.ltz["point"]), IntervalSet.from_dict(report.ltz["ci"])))
    return rows


def rows_csv(rows: list[PlotRow]) -> str:
    """One line per interval piece; empty sets get a single line with blank bounds."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for r in rows:
        pieces = r.ci.intervals or ((None, None),)
        for i, (a, b) in enumerate(pieces):
            w.writerow([r.key, r.group, r.label, repr(r.point), r.ci.kind, i, "" if a is None else repr(a), "" if b is None else repr(b)])
    return buf.getvalue()


def write_csv(rows: list[PlotRow], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(rows_csv(rows), encoding="utf-8")
    return path


def _xlim(rows):
    points = [r.point for r in rows if math.isfinite(r.point)]
    vals = list(points)
    for r in rows:
        vals += [v for iv in r.ci.intervals for v in iv if math.isfinite(v)]
    if not vals:
        return -1.0, 1.0
    lo, hi = min(vals), max(vals)
    widths = sorted(r.ci.high - r.ci.low for r in rows if r.ci.bounded)
    if widths and points:
        reach = STYLE["max_reach"] * widths[len(widths) // 2]
        lo, hi = max(lo, min(points) - reach), min(hi, max(points) + reach)
    span = hi - lo if hi > lo else max(abs(lo), 1.0)
    pad = STYLE["pad_frac"] * span
    return lo - pad, hi + pad


def render_svg(rows: list[PlotRow], path, title: str | None = None) -> Path:
    """Draw the coefficient plot and save it as SVG."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ys, y, prev = [], 0.0, None
    for r in rows:
        if prev is not None and r.group != prev:
            y += STYLE["group_gap"]
        ys.append(y)
        y += 1.0
        prev = r.group
    height = STYLE["row_height"] * max(len(rows), 1) + STYLE["margin_in"]
    lo, hi = _xlim(rows)

    with plt.rc_context({"svg.hashsalt": "weakiv", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(STYLE["fig_width"], height))
        ax.set_xlim(lo, hi)
        ax.set_ylim(max(ys, default=0.0) + 0.7, -0.7)
        lw, ms = STYLE["line_width"], STYLE["marker_size"]
        for r, yy in zip(rows, ys):
            color = STYLE["colors"][r.group]
            for i, (a, b) in enumerate(r.ci.intervals):
                a_draw, b_draw = max(a, lo), min(b, hi)
                gid = f"ci-{r.key}" if len(r.ci.intervals) == 1 else f"ci-{r.key}-{i}"
                ax.plot([a_draw, b_draw], [yy, yy], color=color, lw=lw, solid_capstyle="butt", gid=gid)
                if a == -math.inf:
                    _arrow(ax, a_draw, yy, -1, color, f"arrow-{r.key}-left")
                elif a < lo:
                    _arrow(ax, a_draw, yy, -1, color, f"clip-{r.key}-left", head="->")
                if b == math.inf:
                    _arrow(ax, b_draw, yy, 1, color, f"arrow-{r.key}-right")
                elif b > hi:
                    _arrow(ax, b_draw, yy, 1, color, f"clip-{r.key}-right", head="->")
            if math.isfinite(r.point):
                ax.plot([r.point], [yy], "o", color=color, ms=ms, gid=f"point-{r.key}")
            if r.ci.kind == "empty":
                ax.text(hi, yy, "empty set ", ha="right", va="center", fontsize=8, color=color, gid=f"empty-{r.key}")
        ax.set_yticks(ys, [r.label for r in rows])
        if lo < 0.0 < hi:
            ax.axvline(0.0, color="#999999", lw=0.8, ls=":", zorder=0)
        ax.set_xlabel("estimate")
        ax.spines[["top", "right"]].set_visible(False)
        if title:
            ax.set_title(title, fontsize=10)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return path


def _arrow(ax, x, y, direction, color, gid, head="-|>"):
    # short arrow whose head sits on the margin
    lo, hi = ax.get_xlim()
    length = 0.06 * (hi - lo)
    ax.add_patch(
        FancyArrowPatch(
            (x - direction * length, y), (x, y), arrowstyle=head, mutation_scale=12,
            color=color, lw=STYLE["line_width"], shrinkA=0, shrinkB=0, gid=gid, clip_on=False,
        )
    )


def emit_outputs(report: DiagnosticsReport, json_path=None, svg_path=None, csv_path=None) -> dict[str, Path]:
    """Write the JSON report, the SVG plot and the CSV behind it."""
    out = {}
    if json_path is not None:
        out["json"] = write_report(report, json_path)
    rows = plot_rows(report)
    if svg_path is not None:
        out["svg"] = render_svg(rows, svg_path, title=report.name)
    if csv_path is not None:
        out["csv"] = write_csv(rows, csv_path)
    return out
