"""Command-line entry point: ``weakiv run|batch|simulate|plot``.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numerical
degeneracy.  A study whose sections partly failed still writes its outputs
and exits with the most severe code among the failures.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .errors import ConfigError, IVError

log = logging.getLogger("weakiv")


def _overrides(args, reps_field: str) -> dict:
    out = {}
    if args.seed is not None:
        out["seed"] = args.seed
    if args.reps is not None:
        out[reps_field] = args.reps
    if args.alpha is not None:
        out["alpha"] = args.alpha
    return out


def _emit(text: str, out: Path | None):
    if out is None:
        sys.stdout.write(text)
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text, encoding="utf-8")


def cmd_run(args) -> int:
    from .dataio import StudyConfig
    from .plotting import emit_outputs, plot_rows, rows_csv
    from .study import run_study

    cfg = StudyConfig.load(args.config)
    cfg = replace(cfg, **_overrides(args, "boot_reps"))
    report = run_study(cfg, n_jobs=args.jobs)
    json_path = args.json or cfg.resolve(cfg.json_path)
    svg_path = args.svg or cfg.resolve(cfg.svg_path)
    csv_path = args.csv or cfg.resolve(cfg.csv_path)
    emit_outputs(report, json_path, svg_path, csv_path)
    if args.format == "json":
        _emit(report.to_json(), args.out)
    else:
        _emit(rows_csv(plot_rows(report)), args.out)
    for key, err in report.errors.items():
        log.warning("section %s failed: %s", key, err["message"])
    return report.worst_exit_code


def cmd_batch(args) -> int:
    from .batch import batch_summarize

    summary = batch_summarize(args.dir, n_jobs=args.jobs, overrides=_overrides(args, "boot_reps"))
    _emit(summary.to_json() if args.format == "json" else summary.to_csv(), args.out)
    return 0


def cmd_simulate(args) -> int:
    from .simulate import SimSpec, monte_carlo

    spec = SimSpec.load(args.spec)
    spec = replace(spec, **_overrides(args, "reps"))
    summary = monte_carlo(spec, n_jobs=args.jobs)
    _emit(summary.to_json() if args.format == "json" else summary.to_csv(), args.out)
    return 0


def cmd_plot(args) -> int:
    from .plotting import plot_rows, render_svg, write_csv
    from .study import DiagnosticsReport

    try:
        report = DiagnosticsReport.from_json(Path(args.report).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"report not found: {args.report}") from None
    except ValueError as exc:
        raise ConfigError(f"invalid report {args.report}: {exc}") from None
    rows = plot_rows(report)
    svg = args.svg or Path(args.report).with_suffix(".svg")
    render_svg(rows, svg, title=report.name)
    if args.csv:
        write_csv(rows, args.csv)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="weakiv", description="Weak-instrument-robust IV diagnostics.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, reps_help):
        sp.add_argument("--seed", type=int, help="override the random seed")
        sp.add_argument("--reps", type=int, help=reps_help)
        sp.add_argument("--alpha", type=float, help="override the significance level")
        sp.add_argument("--format", choices=("json", "csv"), default="json", help="stdout format")
        sp.add_argument("--jobs", type=int, default=1, help="parallel workers (results do not depend on it)")
        sp.add_argument("--out", type=Path, help="write the stdout payload to this file instead")

    sp = sub.add_parser("run", help="run one study config")
    sp.add_argument("--config", required=True, type=Path)
    sp.add_argument("--json", type=Path, help="report path (overrides the config)")
    sp.add_argument("--svg", type=Path, help="plot path (overrides the config)")
    sp.add_argument("--csv", type=Path, help="plotted-numbers path (overrides the config)")
    common(sp, "bootstrap replicates")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("batch", help="summarize every study config in a directory")
    sp.add_argument("--dir", required=True, type=Path)
    common(sp, "bootstrap replicates")
    sp.set_defaults(func=cmd_batch)

    sp = sub.add_parser("simulate", help="run a Monte Carlo spec")
    sp.add_argument("--spec", required=True, type=Path)
    common(sp, "Monte Carlo replications")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("plot", help="redraw the SVG from a JSON report")
    sp.add_argument("--report", required=True, type=Path)
    sp.add_argument("--svg", type=Path)
    sp.add_argument("--csv", type=Path)
    sp.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except IVError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
