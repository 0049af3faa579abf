import json
import math

import numpy as np
import pytest

from weakiv import ConfigError
from weakiv.cli import main
from weakiv.simulate import COLUMNS, SimSpec, _median_se, draw, monte_carlo


class TestSpec:
    def test_population_bias_ratio_matches_formula(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            spec = SimSpec(n=500, pi=float(rng.uniform(0.02, 1)), rho_de=float(rng.uniform(-0.8, 0.8)),
                           rho_ze=float(rng.uniform(-0.1, 0.1)), reps=100)
            pop = spec.population()
            assert pop["bias_ratio"] == pytest.approx(pop["bias_ratio_formula"], rel=1e-12)

    def test_concentration(self):
        assert SimSpec(n=1000, pi=math.sqrt(2 / 1000), reps=100).population()["concentration_f"] == pytest.approx(2.0)

    def test_validation(self):
        with pytest.raises(ConfigError):
            SimSpec(reps=50)
        with pytest.raises(ConfigError):
            SimSpec(rho_de=0.9, rho_ze=0.9, reps=100)
        with pytest.raises(ConfigError):
            SimSpec(p_z=2, methods=("tf",), reps=100)
        with pytest.raises(ConfigError):
            SimSpec.from_dict({"reps": 100, "sample_size": 3})

    def test_pi_broadcast(self):
        assert SimSpec(p_z=3, pi=0.2, reps=100, methods=("analytic",)).pi == (0.2, 0.2, 0.2)


class TestDraw:
    def test_moments(self):
        spec = SimSpec(n=200_000, pi=0.5, rho_de=0.6, rho_ze=0.1, reps=100)
        m = draw(spec, 0)
        z, d, y = m.Z[:, 0], m.d, m.y
        e = y - spec.tau_true * d
        v = d - 0.5 * z
        assert np.corrcoef(z, e)[0, 1] == pytest.approx(0.1, abs=0.01)
        assert np.corrcoef(e, v)[0, 1] == pytest.approx(0.6, abs=0.01)
        assert np.var(d) == pytest.approx(1.25, rel=0.02)

    def test_cluster_intraclass_correlation(self):
        spec = SimSpec(n=40_000, pi=0.5, n_clusters=2000, icc=0.4, reps=100)
        m = draw(spec, 1)
        e = m.y - m.d
        g = m.clusters
        a, b = e[:-1][g[:-1] == g[1:]], e[1:][g[:-1] == g[1:]]
        assert np.corrcoef(a, b)[0, 1] == pytest.approx(0.4, abs=0.03)
        assert np.var(e) == pytest.approx(1.0, rel=0.05)

    def test_replicate_streams_are_fixed(self):
        spec = SimSpec(n=50, reps=100)
        assert np.array_equal(draw(spec, 7).y, draw(spec, 7).y)
        assert not np.array_equal(draw(spec, 7).y, draw(spec, 8).y)


def test_median_se_matches_normal_theory():
    x = np.random.default_rng(2).standard_normal(20_000)
    assert _median_se(x) == pytest.approx(math.sqrt(math.pi / 2) / math.sqrt(len(x)), rel=0.1)


class TestMonteCarlo:
    def test_parallel_run_identical(self):
        spec = SimSpec(n=200, pi=0.2, reps=120, seed=4)
        a, b = monte_carlo(spec), monte_carlo(spec, n_jobs=2)
        assert a.to_json() == b.to_json()
        assert a.to_csv() == b.to_csv()

    def test_tf_never_rejects_more_than_analytic(self):
        s = monte_carlo(SimSpec(n=300, pi=0.1, rho_de=0.8, reps=300, seed=1))
        ana = s.draws[:, COLUMNS.index("reject_analytic")]
        tf = s.draws[:, COLUMNS.index("reject_tf")]
        assert np.all(tf <= ana)

    def test_strong_design_sizes(self):
        s = monte_carlo(SimSpec(n=500, pi=0.5, rho_de=0.5, reps=600, seed=3))
        for m in ("analytic", "ar", "tf"):
            assert abs(s.rejection[m]["rate"] - 0.05) < 0.035

    def test_bootstrap_columns(self):
        spec = SimSpec(n=100, pi=0.5, reps=100, methods=("bootstrap_c", "bootstrap_t"), boot_reps=49, seed=2)
        s = monte_carlo(spec)
        for m in ("bootstrap_c", "bootstrap_t"):
            col = s.draws[:, COLUMNS.index(f"reject_{m}")]
            assert set(np.unique(col[np.isfinite(col)])) <= {0.0, 1.0}
            assert s.rejection[m]["n"] >= 95

    def test_summary_json_valid(self):
        s = monte_carlo(SimSpec(n=100, reps=100))
        d = json.loads(s.to_json())
        assert d["n_valid"] + d["n_failed"] == 100
        assert s.to_csv().splitlines()[0] == ",".join(COLUMNS)


def test_cli_simulate_jobs_identical(tmp_path):
    spec = tmp_path / "s.json"
    spec.write_text(json.dumps({"n": 150, "pi": 0.3, "reps": 100, "seed": 5}))
    assert main(["simulate", "--spec", str(spec), "--out", str(tmp_path / "a.json")]) == 0
    assert main(["simulate", "--spec", str(spec), "--jobs", "3", "--out", str(tmp_path / "b.json")]) == 0
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    assert main(["simulate", "--spec", str(tmp_path / "missing.json")]) == 1
