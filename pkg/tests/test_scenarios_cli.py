import json

import numpy as np
import pytest

from hesslab.cli import main
from hesslab.errors import ConfigError
from hesslab.scenarios import (DEFAULT_EPS, LIBRARY, STATEMENT_IDS, make_scenario, run_rate_suite, run_scenario,
                               validate_config)

SMALL = {"grid": 16, "eps_list": [0.02, 0.012, 0.0072, 0.00432]}


class TestConfig:
    def test_defaults(self):
        assert DEFAULT_EPS == pytest.approx([0.2 * 0.6 ** k for k in range(6)])
        assert validate_config(None) == {}
        assert validate_config('{"seed": 3}') == {"seed": 3}

    @pytest.mark.parametrize("cfg,path", [({"grid": 4}, "grid"), ({"eps_list": [0.1, -1, 0.2, 0.3]}, "eps_list/1"),
                                          ({"bogus": 1}, ""), ({"scenarios": [{"id": "x"}]}, "scenarios/0")])
    def test_schema_errors_carry_path(self, cfg, path):
        with pytest.raises(ConfigError) as ei:
            validate_config(cfg)
        assert ei.value.path == path

    def test_bad_file(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("{not json")
        with pytest.raises(ConfigError):
            validate_config(p)

    def test_unknown_scenario(self):
        with pytest.raises(ConfigError):
            make_scenario("nope")
        with pytest.raises(ConfigError, match="kind"):
            make_scenario({"id": "a", "kind": "nope"})
        with pytest.raises(ConfigError):
            make_scenario({"id": "a", "kind": "smooth", "params": {"wrong": 1}})


class TestScenarios:
    @pytest.mark.parametrize("sid", sorted(LIBRARY))
    def test_library_admissible(self, sid):
        sc = make_scenario(sid, 16)
        ok, _ = sc.check_admissible()
        assert ok

    def test_custom_spec(self):
        sc = make_scenario({"id": "s2", "kind": "smooth", "grid": 20, "params": {"amp": 0.01}})
        assert sc.id == "s2" and sc.grid == 20
        phi = sc.build()
        assert np.abs(phi.values).max() == pytest.approx(0.01, rel=1e-2)

    def test_inadmissible_skipped(self):
        run = run_scenario(make_scenario({"id": "bad", "kind": "smooth", "params": {"amp": 0.5}}, 16), DEFAULT_EPS)
        assert run.skipped and "not admissible" in run.note and run.checks == []

    def test_constant_smoke(self):
        rep = run_rate_suite(SMALL | {"scenarios": ["torus_constant"]})
        (run,) = rep.runs
        assert run.fits["l1"].slope == pytest.approx(1.0, abs=1e-9)
        assert run.fits["sup_gap"].slope == pytest.approx(1.0, abs=1e-9)
        assert max(run.fits["hessian_floor"].values) == 0.0
        assert rep.passed

    def test_checks_traceable(self):
        rep = run_rate_suite(SMALL | {"scenarios": ["torus_smooth"]})
        for c in rep.runs[0].checks:
            assert c.statement == STATEMENT_IDS[c.name]
        # every Holder radius falls under the 4h floor on a 16 grid
        assert "empirical_holder not run" in rep.runs[0].note
        d = rep.to_dict()
        json.dumps(d)
        assert "wall_time" not in d

    def test_threads_deterministic(self, monkeypatch):
        cfg = SMALL | {"scenarios": ["torus_constant", "torus_smooth"]}
        a = run_rate_suite(cfg).csv_text()
        monkeypatch.setenv("HESSLAB_THREADS", "2")
        assert run_rate_suite(cfg).csv_text() == a

    def test_write(self, tmp_path):
        rep = run_rate_suite(SMALL | {"scenarios": ["torus_constant"], "out": str(tmp_path)})
        names = sorted(p.name for p in tmp_path.iterdir())
        assert names == ["checks.csv", "rates.csv", "rates.gp", "report.json"]
        assert (tmp_path / "rates.csv").read_text() == rep.csv_text()
        assert json.loads((tmp_path / "report.json").read_text())["passed"]


class TestCli:
    def test_no_args(self, capsys):
        assert main([]) == 2
        assert "usage" in capsys.readouterr().err

    def test_unknown_verb(self, capsys):
        assert main(["frobnicate"]) == 2
        assert "usage" in capsys.readouterr().err

    def test_exponent(self, capsys, tmp_path):
        assert main(["exponent", "--q0n", "4", "--out", str(tmp_path)]) == 0
        out = capsys.readouterr().out
        assert "mu_0 = 0.095238" in out and "limit 0.100000" in out
        assert (tmp_path / "exponents.csv").read_text().startswith("k,mu\n")
        assert main(["exponent", "--p", "4", "--n", "2", "--m", "1"]) == 0
        assert "0.100000" in capsys.readouterr().out
        assert main(["exponent"]) == 2

    def test_degiorgi(self, capsys):
        assert main(["degiorgi", "--b0", "1", "--mu", "1", "--s0", "0", "--phi0", "0.25"]) == 0
        assert "threshold 1.000000" in capsys.readouterr().out
        assert main(["degiorgi", "--b0", "1", "--mu", "0.3", "--phi0", "1", "--profile", "1,1,3"]) == 0
        assert "PASS" in capsys.readouterr().out
        assert main(["degiorgi", "--b0", "1", "--mu", "0", "--phi0", "1"]) == 2

    def test_cone_check(self, capsys):
        assert main(["cone-check", "--n", "3", "--m", "2", "--samples", "200", "--hermitian", "50"]) == 0
        assert main(["cone-check", "--operator", "quotient", "--samples", "200", "--hermitian", "10"]) == 1
        assert main(["cone-check", "--operator", "quotient", "--samples", "200", "--hermitian", "10",
                     "--expect-fail", "4_det_floor"]) == 0
        capsys.readouterr()

    def test_manifold_check(self, capsys, tmp_path):
        assert main(["manifold-check", "--manifold", "p1", "--seed", "1", "--out", str(tmp_path)]) == 0
        assert json.loads((tmp_path / "manifold_check.json").read_text())["round_trip"]["passed"]
        assert main(["manifold-check", "--manifold", "torus", "--n", "2"]) == 0
        capsys.readouterr()

    def test_supconv(self, capsys, tmp_path):
        assert main(["supconv", "--scenario", "torus_smooth", "--grid", "16", "--eps", "0.02",
                     "--out", str(tmp_path)]) == 0
        assert "lower_bound=PASS" in capsys.readouterr().out
        assert (tmp_path / "supconv.json").exists()

    def test_stability(self, capsys, tmp_path):
        assert main(["stability", "--scenario", "torus_smooth", "--grid", "16", "--eps", "0.02",
                     "--out", str(tmp_path)]) == 0
        assert (tmp_path / "profile.csv").read_text().startswith("s,vol,A\n")
        capsys.readouterr()

    def test_rate_suite_config(self, capsys, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps(SMALL | {"scenarios": ["torus_constant"]}))
        assert main(["rate-suite", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
        assert (tmp_path / "o" / "rates.csv").exists()
        cfg.write_text(json.dumps({"grid": 2}))
        assert main(["rate-suite", "--config", str(cfg)]) == 2
        assert "grid" in capsys.readouterr().err

    def test_bad_eps_list(self, capsys):
        assert main(["supconv", "--eps-list", "0.1,x"]) == 2
        capsys.readouterr()
