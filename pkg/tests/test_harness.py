import json
import re
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from weakiv import ClusterCountError, ConfigError, ParseError
from weakiv.batch import batch_summarize, summarize
from weakiv.cli import main
from weakiv.dataio import StudyConfig, load_configs, load_dataset
from weakiv.plotting import plot_rows, render_svg
from weakiv.study import DiagnosticsReport, run_study

from conftest import FIXA, design_columns, write_study

SVG_NS = "{http://www.w3.org/2000/svg}"


def svg_groups(path):
    """gid -> list of x coordinates in the group's path data."""
    root = ET.parse(path).getroot()
    out = {}
    for g in root.iter(f"{SVG_NS}g"):
        gid = g.get("id", "")
        paths = [p.get("d") for p in g.iter(f"{SVG_NS}path") if p.get("d")]
        if paths:
            nums = [float(v) for v in re.findall(r"-?\d+(?:\.\d+)?", paths[0])]
            out[gid] = nums[0::2]
        else:
            out[gid] = []
    return out


def coef(section, name):
    return next(c["coef"] for c in section["coefficients"] if c["name"] == name)


def fixa_config(tmp_path, **kw):
    kw.setdefault("boot_reps", 200)
    kw.setdefault("seed", 1)
    return write_study(tmp_path, "fixa", FIXA, **kw)


class TestLoadDataset:
    def test_missing_cells_are_dropped(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("y,d,z,other\n1,2,0,x\nNA,1,1,x\n3,,1,x\n4,5,1,x\n")
        ds = load_dataset(p, {"y": "outcome", "d": "treatment", "z": "instrument"})
        assert ds.n_dropped == 2
        np.testing.assert_array_equal(ds["y"], [1.0, 4.0])

    def test_parse_error_reports_row_and_column(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("y,d,z\n1,2,0\n2,abc,1\n")
        with pytest.raises(ParseError) as info:
            load_dataset(p, {"y": "outcome", "d": "treatment", "z": "instrument"})
        assert info.value.row == 2 and info.value.column == "d"

    def test_missing_and_duplicate_columns(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("y,d,d\n1,2,3\n")
        with pytest.raises(ConfigError):
            load_dataset(p, {"y": "outcome", "d": "treatment"})
        p.write_text("y,d\n1,2\n")
        with pytest.raises(ConfigError):
            load_dataset(p, {"y": "outcome", "d": "treatment", "z": "instrument"})

    def test_cluster_labels_are_factorized(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("y,d,z,g\n1,2,0,b\n2,1,1,a\n3,3,1,b\n")
        ds = load_dataset(p, {"y": "outcome", "d": "treatment", "z": "instrument", "g": "cluster"})
        np.testing.assert_array_equal(ds.cluster_ids, [1, 0, 1])


class TestConfig:
    def test_tf_needs_one_instrument(self):
        with pytest.raises(ConfigError):
            StudyConfig("x.csv", "y", "d", ["z1", "z2"], methods=["tf"])

    def test_unknown_keys_and_methods(self):
        with pytest.raises(ConfigError):
            StudyConfig.from_dict({"data": "x.csv", "outcome": "y", "treatment": "d", "instruments": ["z"], "colour": 1})
        with pytest.raises(ConfigError):
            StudyConfig("x.csv", "y", "d", ["z"], methods=["jackknife"])

    def test_yaml_config(self, tmp_path):
        write_study(tmp_path, "fixa", FIXA)
        (tmp_path / "s.yaml").write_text("data: fixa.csv\noutcome: y\ntreatment: d\ninstruments: [z]\nboot_reps: 50\n")
        cfg = StudyConfig.load(tmp_path / "s.yaml")
        assert cfg.boot_reps == 50 and cfg.resolve(cfg.data_path).exists()

    def test_empty_directory(self, tmp_path):
        with pytest.raises(ConfigError):
            load_configs(tmp_path)


class TestRunStudy:
    def test_fixa_report(self, tmp_path):
        rep = run_study(StudyConfig.load(fixa_config(tmp_path)))
        assert rep.complete
        assert coef(rep.tsls, "d") == pytest.approx(2.5, abs=1e-14)
        assert coef(rep.ols, "d") == pytest.approx(2.125, abs=1e-14)
        assert rep.strength["f_classic"] == pytest.approx(4.0, rel=1e-12)
        assert [r["method"] for r in rep.inference] == ["analytic", "bootstrap_c", "bootstrap_t", "ar", "tf"]
        assert rep.provenance["vcov_factor"] == "n / (n - k)"

    def test_json_round_trip_and_rerun(self, tmp_path):
        cfg = StudyConfig.load(fixa_config(tmp_path))
        text = run_study(cfg).to_json()
        assert DiagnosticsReport.from_json(text).to_json() == text
        assert run_study(cfg, n_jobs=3).to_json() == text
        json.loads(text)

    def test_schema_violation_rejected(self, tmp_path):
        d = run_study(StudyConfig.load(fixa_config(tmp_path))).to_dict()
        d["inference"][0]["ci"]["kind"] = "sideways"
        with pytest.raises(ValueError, match="inference/0"):
            DiagnosticsReport.from_dict(d)

    def test_wrong_schema_rejected(self):
        with pytest.raises(ValueError):
            DiagnosticsReport.from_dict({"schema": "other/9"})

    def test_single_cluster_rejected(self, tmp_path):
        cols = dict(FIXA, g=[7] * 6)
        path = write_study(tmp_path, "one", cols, vcov="cr1", cluster="g", boot_reps=50)
        with pytest.raises(ClusterCountError):
            run_study(StudyConfig.load(path))
        assert main(["run", "--config", str(path)]) == 2

    def test_failed_section_is_recorded(self, tmp_path):
        # one treated row: most resamples lose all instrument variation
        cols = design_columns(5, n=20)
        cols["z"] = [1] + [0] * 19
        cfg = StudyConfig.load(write_study(tmp_path, "few", cols, boot_reps=100))
        rep = run_study(cfg)
        assert not rep.complete
        assert rep.errors["bootstrap"]["type"] == "BootstrapInstabilityError"
        failed = [r["method"] for r in rep.inference if "error" in r]
        assert failed == ["bootstrap_c", "bootstrap_t"]
        assert rep.method("analytic")["point"] is not None
        assert rep.worst_exit_code == 3

    def test_placebo_and_ltz_sections(self, tmp_path):
        cols = design_columns(0, n=300)
        cols["zfs"] = (np.arange(300) < 100).astype(int)
        cfg = StudyConfig.load(write_study(tmp_path, "pl", cols, zfs_flag="zfs", ltz_from_placebo=True, boot_reps=50))
        rep = run_study(cfg)
        assert rep.placebo["n_rows"] == 100
        assert rep.ltz["method"] == "ltz"


class TestPlot:
    def test_one_segment_per_row_and_wider_2sls(self, tmp_path):
        rep = run_study(StudyConfig.load(fixa_config(tmp_path)))
        rows = plot_rows(rep)
        svg = render_svg(rows, tmp_path / "f.svg")
        groups = svg_groups(svg)
        assert sum(1 for g in groups if g.startswith("ci-")) == len(rows)
        assert sum(1 for g in groups if g.startswith("point-")) == len(rows)
        width = lambda key: max(groups[key]) - min(groups[key])  # noqa: E731
        assert width("ci-2sls-analytic") > width("ci-ols")

    def test_whole_line_set_gets_two_arrows(self, tmp_path):
        cols = design_columns(3, n=60, pi=0.0)
        rep = run_study(StudyConfig.load(write_study(tmp_path, "weak", cols, boot_reps=50, methods=["analytic", "ar"])))
        assert rep.method("ar")["ci"]["kind"] == "whole_line"
        groups = svg_groups(render_svg(plot_rows(rep), tmp_path / "w.svg"))
        assert "arrow-2sls-ar-left" in groups and "arrow-2sls-ar-right" in groups

    def test_svg_is_deterministic(self, tmp_path):
        rows = plot_rows(run_study(StudyConfig.load(fixa_config(tmp_path))))
        a = render_svg(rows, tmp_path / "a.svg").read_bytes()
        b = render_svg(rows, tmp_path / "b.svg").read_bytes()
        assert a == b


class TestBatch:
    def test_shares_match_reports(self, tmp_path):
        write_study(tmp_path, "a", design_columns(1, pi=0.02), design="experimental", boot_reps=100)
        write_study(tmp_path, "b", design_columns(2, pi=1.0), design="observational", boot_reps=100)
        write_study(tmp_path, "c", design_columns(4, pi=0.05), design="observational", boot_reps=100, unreported_f=True)
        summary = batch_summarize(tmp_path, n_jobs=2)
        assert summary.n_studies == {"experimental": 1, "observational": 2, "all": 3}
        effs = [r.strength["f_effective"] for r in summary.reports]
        row = summary.row("Effective F < 10")
        assert row.values["all"] == pytest.approx(np.mean([f < 10 for f in effs]))
        assert row.values["experimental"] == float(effs[0] < 10)
        assert summary.row("Median effective F").values["all"] == pytest.approx(np.median(effs))
        assert summary.row("Unreported F").counts["all"] == 1
        assert summarize(summary.reports).to_csv() == summary.to_csv()

    def test_serial_and_parallel_agree(self, tmp_path):
        for i in range(3):
            write_study(tmp_path, f"s{i}", design_columns(i), boot_reps=60)
        assert batch_summarize(tmp_path).to_json() == batch_summarize(tmp_path, n_jobs=3).to_json()


class TestCLI:
    def test_run_writes_outputs(self, tmp_path, capsys):
        cfg = fixa_config(tmp_path)
        code = main(["run", "--config", str(cfg), "--json", str(tmp_path / "r.json"), "--svg", str(tmp_path / "r.svg"),
                     "--csv", str(tmp_path / "r.csv"), "--format", "csv"])
        assert code == 0
        assert (tmp_path / "r.svg").exists() and (tmp_path / "r.json").exists()
        assert capsys.readouterr().out.startswith("key,group,label")

    def test_missing_config_exits_1(self, tmp_path):
        assert main(["run", "--config", str(tmp_path / "nope.json")]) == 1

    def test_bad_cell_exits_2(self, tmp_path):
        cfg = write_study(tmp_path, "bad", {"y": [1, 2, 3, 4], "d": [1, "x", 2, 3], "z": [0, 1, 0, 1]})
        assert main(["run", "--config", str(cfg)]) == 2

    def test_degenerate_first_stage_exits_3(self, tmp_path):
        cfg = write_study(tmp_path, "flat", {"y": [1, 3, 2, 5, 4, 6], "d": [1, 2, 1, 1, 2, 1], "z": [0, 0, 0, 1, 1, 1]},
                          boot_reps=50, methods=["analytic"])
        assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o.json")]) == 3

    def test_plot_from_report(self, tmp_path):
        cfg = fixa_config(tmp_path)
        assert main(["run", "--config", str(cfg), "--json", str(tmp_path / "r.json"), "--out", str(tmp_path / "o.json")]) == 0
        assert main(["plot", "--report", str(tmp_path / "r.json"), "--svg", str(tmp_path / "p.svg")]) == 0
        assert "ci-2sls-analytic" in svg_groups(tmp_path / "p.svg")

    def test_reps_override(self, tmp_path):
        cfg = fixa_config(tmp_path)
        assert main(["run", "--config", str(cfg), "--reps", "30", "--out", str(tmp_path / "o.json")]) == 0
        rep = json.loads((tmp_path / "o.json").read_text())
        assert rep["provenance"]["config"]["boot_reps"] == 30
