"""Cross-study summary table over a directory of study configs."""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .dataio import load_configs
from .errors import ConfigError
from .inference import METHODS
from .study import DiagnosticsReport, jsonable, run_study

GROUPS = ("experimental", "observational", "all")
P_CUTOFF = 0.05
F_CUTOFF = 10.0
RATIO_CUTOFFS = (1, 5, 10)


@dataclass
class SummaryRow:
    panel: str
    metric: str
    values: dict[str, float | None]  # group -> value
    counts: dict[str, int]  # group -> studies contributing


@dataclass
class BatchSummary:
    rows: list[SummaryRow]
    n_studies: dict[str, int]
    reports: list[DiagnosticsReport]

    def row(self, metric: str) -> SummaryRow:
        return next(r for r in self.rows if r.metric == metric)

    def to_dict(self) -> dict:
        return jsonable({
            "n_studies": self.n_studies,
            "rows": [{"panel": r.panel, "metric": r.metric, "values": r.values, "counts": r.counts} for r in self.rows],
            "studies": [r.name for r in self.reports],
        })

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, allow_nan=False) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["panel", "metric", *GROUPS, *(f"n_{g}" for g in GROUPS)])
        for r in self.rows:
            vals = ["" if r.values[g] is None else repr(float(r.values[g])) for g in GROUPS]
            w.writerow([r.panel, r.metric, *vals, *(r.counts[g] for g in GROUPS)])
        return buf.getvalue()


def _num(x):
    if x is None:
        return None
    if isinstance(x, str):
        return math.inf if x == "inf" else -math.inf
    return float(x)


def _share(flags):
    flags = [f for f in flags if f is not None]
    return (float(np.mean(flags)) if flags else None), len(flags)


def _median(vals):
    vals = [v for v in vals if v is not None]
    return (float(np.median(vals)) if vals else None), len(vals)


def _study_metrics(rep: DiagnosticsReport) -> dict[str, tuple[str, str, object]]:
    """metric -> (panel, reducer, per-study value or None)."""
    st = rep.strength or {}
    disc = rep.discrepancy or {}
    f_eff = _num(st.get("f_effective"))
    f_boot = _num(st.get("f_boot"))
    unreported = rep.provenance.get("unreported_f")
    out = {
        "Unreported F": ("first stage", "share", None if unreported is None else bool(unreported)),
        f"Effective F < {F_CUTOFF:g}": ("first stage", "share", None if f_eff is None else f_eff < F_CUTOFF),
        f"Bootstrapped F < {F_CUTOFF:g}": ("first stage", "share", None if f_boot is None else f_boot < F_CUTOFF),
        "Median effective F": ("first stage", "median", f_eff),
    }
    for m in METHODS:
        res = rep.method(m)
        p = None if res is None or "p_null" not in res else _num(res["p_null"])
        out[f"p > {P_CUTOFF:g} ({m})"] = ("inference", "share", None if p is None else p > P_CUTOFF)
    ratio = _num(disc.get("ratio_abs"))
    out["Same sign"] = ("2SLS vs OLS", "share", disc.get("same_sign"))
    for c in RATIO_CUTOFFS:
        out[f"|2SLS/OLS| > {c}"] = ("2SLS vs OLS", "share", None if ratio is None else ratio > c)
    out["Median |2SLS/OLS|"] = ("2SLS vs OLS", "median", ratio)
    return out


def summarize(reports: list[DiagnosticsReport]) -> BatchSummary:
    """Table of shares and medians over studies, split by design tag.

    Studies without a design tag count only toward ``all``.  Each cell also
    records how many studies contributed (a study missing a statistic is
    left out of that cell).
    """
    if not reports:
        raise ConfigError("no studies to summarize")
    per = [(_study_metrics(r), r.design) for r in reports]
    members = {
        "experimental": [m for m, d in per if d == "experimental"],
        "observational": [m for m, d in per if d == "observational"],
        "all": [m for m, _ in per],
    }
    rows = []
    for metric, (panel, how, _) in per[0][0].items():
        values, counts = {}, {}
        for g in GROUPS:
            vals = [m[metric][2] for m in members[g]]
            values[g], counts[g] = (_share if how == "share" else _median)(vals)
        rows.append(SummaryRow(panel, metric, values, counts))
    return BatchSummary(rows, {g: len(members[g]) for g in GROUPS}, reports)


def batch_summarize(config_dir, *, n_jobs: int = 1, overrides: dict | None = None) -> BatchSummary:
    """Run every study config in ``config_dir`` and summarize.

    Studies run in parallel when ``n_jobs > 1``; the order of results follows
    the sorted config file names.
    """
    configs = [replace(c, **(overrides or {})) for c in load_configs(Path(config_dir))]
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            reports = list(pool.map(run_study, configs))
    else:
        reports = [run_study(c) for c in configs]
    return summarize(reports)
