"""Run one study end to end and serialize the diagnostics report."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from .bootstrap import draw_replicates
from .dataio import StudyConfig
from .errors import BootstrapInstabilityError, IVError
from .inference import analytic_infer, ar_infer, bootstrap_infer, tf_infer
from .iv import IVModel, component_fits, discrepancy, naive_ols, tsls_fit
from .ltz import LTZPrior, ltz_adjust, zfs_placebo
from .regression import VCovSpec
from .strength import strength_report

log = logging.getLogger(__name__)

SCHEMA = "ivdiag/1"
SECTIONS = ("ols", "tsls", "first_stage", "reduced_form", "strength", "inference", "discrepancy", "placebo", "ltz")
FACTORS = {
    "classic": "RSS / (n - k)",
    "hc1": "n / (n - k)",
    "cr1": "G / (G - 1) * (n - 1) / (n - k)",
}


def jsonable(x: Any) -> Any:
    """Plain-JSON form: numpy scalars unwrapped, +-inf as strings, nan as null."""
    if isinstance(x, dict):
        return {str(k): jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return jsonable(x.tolist())
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return None
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return x


@dataclass
class DiagnosticsReport:
    """Everything computed for one study, already in JSON-ready form.

    Failed sections are ``None`` with the error recorded under ``errors``.
    """

    name: str
    design: str | None
    n: int | None
    n_dropped: int | None
    p_z: int | None
    alpha: float
    ols: dict | None = None
    tsls: dict | None = None
    first_stage: dict | None = None
    reduced_form: dict | None = None
    strength: dict | None = None
    inference: list[dict] = field(default_factory=list)
    discrepancy: dict | None = None
    placebo: dict | None = None
    ltz: dict | None = None
    errors: dict[str, dict] = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    schema: str = SCHEMA

    @property
    def complete(self) -> bool:
        return not self.errors

    def method(self, name: str) -> dict | None:
        return next((r for r in self.inference if r.get("method") == name), None)

    def to_dict(self) -> dict:
        keys = ("schema", "name", "design", "n", "n_dropped", "p_z", "alpha") + SECTIONS + ("errors", "provenance")
        return jsonable({k: getattr(self, k) for k in keys})

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, allow_nan=False) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "DiagnosticsReport":
        if d.get("schema") != SCHEMA:
            raise ValueError(f"unsupported report schema {d.get('schema')!r}")
        validate_report(d)
        return cls(**{k: v for k, v in d.items()})

    @classmethod
    def from_json(cls, text: str) -> "DiagnosticsReport":
        return cls.from_dict(json.loads(text))

    @property
    def worst_exit_code(self) -> int:
        return max((e["exit_code"] for e in self.errors.values()), default=0)


def _error(exc: IVError) -> dict:
    return {"type": type(exc).__name__, "message": str(exc), "exit_code": exc.exit_code}


class _Sections:
    def __init__(self, report: DiagnosticsReport):
        self.report = report

    def run(self, key: str, fn: Callable[[], Any]):
        try:
            return fn()
        except IVError as exc:
            log.warning("%s: %s failed: %s", self.report.name, key, exc)
            self.report.errors[key] = _error(exc)
            return None


def run_study(config: StudyConfig, *, n_jobs: int = 1) -> DiagnosticsReport:
    """Full diagnostics pipeline for one study.

    Data and model construction errors propagate; errors inside individual
    sections are recorded and the remaining sections still run.
    """
    data, zfs_mask = config.load_data()
    model = IVModel.from_dataset(data)
    spec = config.vcov_spec()
    alpha = config.alpha
    report = DiagnosticsReport(
        name=config.name,
        design=config.design,
        n=model.n,
        n_dropped=data.n_dropped,
        p_z=model.p_z,
        alpha=alpha,
        provenance={
            "config": config.echo(),
            "version": __version__,
            "seed": config.seed,
            "vcov_factor": FACTORS.get(spec.analytic().flavor),
            "unreported_f": config.unreported_f,
        },
    )
    s = _Sections(report)
    # one resample serves F_boot and both bootstrap intervals
    boot_spec = VCovSpec("bootstrap", spec.cluster_column, spec.boot_reps, spec.seed)
    reps = s.run("bootstrap", lambda: draw_replicates(model, boot_spec, n_jobs=n_jobs, require_iv=False))

    report.ols = s.run("ols", lambda: naive_ols(model, spec, alpha=alpha, n_jobs=n_jobs).summary())
    tsls = s.run("tsls", lambda: tsls_fit(model, spec, alpha=alpha, n_jobs=n_jobs))
    report.tsls = None if tsls is None else tsls.summary()
    comp = s.run("first_stage", lambda: component_fits(model, spec, alpha=alpha, n_jobs=n_jobs))
    if comp is not None:
        report.first_stage, report.reduced_form = comp[0].summary(), comp[1].summary()
    report.strength = s.run(
        "strength",
        lambda: strength_report(model, spec, bootstrap=reps is not None, replicates=reps).to_dict(),
    )
    report.discrepancy = s.run("discrepancy", lambda: discrepancy(model, spec).to_dict())

    boot = None
    for m in config.methods:
        if m == "analytic":
            res = s.run("inference.analytic", lambda: analytic_infer(model, spec, alpha))
        elif m in ("bootstrap_c", "bootstrap_t"):
            if boot is None:
                boot = s.run("inference.bootstrap", lambda: _bootstrap(model, spec, alpha, reps))
            res = None if boot is None else boot[0 if m == "bootstrap_c" else 1]
        elif m == "ar":
            res = s.run("inference.ar", lambda: ar_infer(model, spec, alpha))
        else:
            res = s.run("inference.tf", lambda: tf_infer(model, spec, alpha))
        entry = {"method": m} if res is None else res.to_dict()
        if res is None:
            entry["error"] = report.errors.get(f"inference.{m}") or report.errors.get("inference.bootstrap") or report.errors.get("bootstrap")
        report.inference.append(entry)

    placebo = None
    if zfs_mask is not None:
        placebo = s.run("placebo", lambda: zfs_placebo(model, zfs_mask, spec, alpha))
        report.placebo = None if placebo is None else placebo.to_dict()
    prior = None
    if config.ltz_mu is not None:
        prior = s.run("ltz", lambda: LTZPrior(config.ltz_mu, config.ltz_omega))
    elif config.ltz_from_placebo and placebo is not None:
        prior = LTZPrior.from_placebo(placebo)
    if prior is not None:
        res = s.run("ltz", lambda: ltz_adjust(model, prior, spec, alpha))
        report.ltz = None if res is None else res.to_dict()

    # normalize to the JSON form so in-memory and reloaded reports agree
    return DiagnosticsReport.from_dict(report.to_dict())


def _bootstrap(model, spec, alpha, reps):
    if reps is None:
        raise BootstrapInstabilityError("bootstrap replicates unavailable")
    return bootstrap_infer(model, spec, alpha, replicates=reps)


@lru_cache(maxsize=1)
def _validator():
    import jsonschema

    text = resources.files("weakiv").joinpath("data/report.schema.json").read_text(encoding="utf-8")
    schema = json.loads(text)
    return jsonschema.Draft202012Validator(schema)


def validate_report(d: dict) -> None:
    """Check a report dict against the bundled JSON Schema.

    Raises
    ------
    ValueError
        With the first violation and its path inside the report.
    """
    err = next(iter(sorted(_validator().iter_errors(d), key=lambda e: list(e.path))), None)
    if err is not None:
        where = "/".join(str(p) for p in err.path) or "<root>"
        raise ValueError(f"report does not match schema at {where}: {err.message}")


def write_report(report: DiagnosticsReport, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report.to_json(), encoding="utf-8")
    return path
