import json
import os

import numpy as np
import pytest

from metastab.cli import main
from metastab.harness import ConfigError, ExperimentConfig, run_experiment


class TestConfig:
    def test_roundtrip_identity(self):
        cfg = ExperimentConfig(mode="exact", N=10, beta=1.5, h=0.1, p=0.5,
                               replicas=3, master_seed=7, m1=-0.4, m2=0.4)
        again = ExperimentConfig.from_dict(cfg.to_dict())
        assert again.to_dict() == cfg.to_dict()

    def test_unknown_field_rejected(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"mode": "exact", "N": 8, "beta": 1.0, "bogus": 1})

    def test_missing_required_field(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"mode": "bounds", "N": 8, "beta": 1.0})

    def test_bad_mode(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"mode": "frobnicate"})

    def test_toml_and_json_files(self, tmp_path):
        toml = tmp_path / "cfg.toml"
        toml.write_text('mode = "cw"\nbeta = 1.5\nh = 0.1\nN_list = [100, 200]\n')
        cfg = ExperimentConfig.from_file(str(toml))
        assert cfg.N_list == [100, 200]
        js = tmp_path / "cfg.json"
        js.write_text(json.dumps(cfg.to_dict()))
        assert ExperimentConfig.from_file(str(js)).to_dict() == cfg.to_dict()


class TestReports:
    def test_byte_identical_reruns(self):
        cfg = ExperimentConfig(mode="ratio-study", N=10, beta=1.5, h=0.1, p=0.5,
                               replicas=4, master_seed=11, s=3.0)
        a = run_experiment(cfg)
        b = run_experiment(cfg)
        assert a.data_json() == b.data_json()
        # timestamps live outside the data payload
        assert "timestamp" not in a.data_json()

    def test_thread_count_invariance(self):
        cfg = ExperimentConfig(mode="bounds", N=10, beta=1.5, h=0.2, p=0.5,
                               replicas=6, master_seed=3, m1=-0.4, m2=0.4)
        old = os.environ.get("METASTAB_THREADS")
        try:
            os.environ["METASTAB_THREADS"] = "1"
            a = run_experiment(cfg)
            os.environ["METASTAB_THREADS"] = "4"
            b = run_experiment(cfg)
        finally:
            if old is None:
                os.environ.pop("METASTAB_THREADS", None)
            else:
                os.environ["METASTAB_THREADS"] = old
        assert a.data_json() == b.data_json()

    def test_ratio_study_contents(self):
        cfg = ExperimentConfig(mode="ratio-study", N=10, beta=1.5, h=0.1, p=0.5,
                               replicas=5, master_seed=17, s=3.0)
        rep = run_experiment(cfg)
        assert rep.summary["numerator"] == "exact"
        lo, hi = rep.summary["band"]
        assert 0 < lo < hi
        for rec in rep.records:
            assert np.isfinite(rec["ratio"]) and rec["ratio"] > 0

    def test_exact_mode_embeds_lumping_check(self):
        cfg = ExperimentConfig(mode="exact", N=10, beta=1.5, h=0.1, p=1.0,
                               replicas=1, master_seed=0)
        rep = run_experiment(cfg)
        from metastab.landscape import critical_points
        from metastab.lumped import build_chain, log_capacity

        ls = critical_points(1.5, 0.1)
        mmN, _, mpN = ls.grid_points(10)
        expect, _ = log_capacity(build_chain(10, 1.5, 0.1), mmN, mpN)
        assert rep.summary["log_cap_cw"] == pytest.approx(expect, abs=1e-12)
        assert rep.summary["results"][0]["log_cap"] == pytest.approx(expect, abs=1e-9)

    def test_partial_failure_flagged(self):
        # N above the enumeration cap makes every replica fail, recorded not raised
        cfg = ExperimentConfig(mode="exact", N=18, beta=1.0, p=0.5,
                               replicas=2, master_seed=0, m1=-0.5, m2=0.5)
        rep = run_experiment(cfg)
        assert rep.n_failed == 2
        assert all("error" in r for r in rep.records)


class TestCli:
    def test_landscape_run(self, tmp_path):
        out = tmp_path / "ls"
        code = main(["landscape", "--N", "60", "--beta", "1.5", "--h", "0.1",
                     "--out", str(out)])
        assert code == 0
        data = json.loads((tmp_path / "ls.json").read_text())
        assert data["schema_version"].startswith("metastab-report")
        assert (tmp_path / "ls.csv").read_text().startswith("m,")

    def test_mc_run(self, tmp_path):
        out = tmp_path / "mc"
        code = main(["mc", "--N", "10", "--beta", "1.5", "--h", "0.1", "--p", "1.0",
                     "--trajectories", "50", "--seed", "5", "--out", str(out)])
        assert code == 0
        data = json.loads((tmp_path / "mc.json").read_text())
        assert data["summary"]["n_completed"] + data["summary"]["timeouts"] == 50
        assert data["summary"]["ek_prediction"] > 0

    def test_concentration_run(self, tmp_path):
        out = tmp_path / "conc"
        code = main(["concentration", "--N", "10", "--beta", "1.0", "--p", "0.5",
                     "--replicas", "120", "--seed", "9", "--g", "uniform",
                     "--out", str(out)])
        assert code == 0
        data = json.loads((tmp_path / "conc.json").read_text())
        assert data["summary"]["constants"]["c1_placeholder"] == 1.0
        csv = (tmp_path / "conc.csv").read_text().splitlines()
        assert csv[0] == "seed,F,Y"
        assert len(csv) == 121

    def test_validation_exit_code(self, tmp_path, capsys):
        assert main(["exact", "--beta", "1.0"]) == 2  # missing N
        assert main(["landscape", "--N", "50", "--beta", "1.5", "--h", "0.5"]) == 2

    def test_partial_failure_exit_code(self, tmp_path):
        out = tmp_path / "px"
        code = main(["exact", "--N", "18", "--beta", "1.0", "--p", "0.5",
                     "--m1", "-0.5", "--m2", "0.5", "--replicas", "2",
                     "--out", str(out)])
        assert code == 3

    def test_config_file_with_override(self, tmp_path):
        cfg = tmp_path / "c.toml"
        cfg.write_text('mode = "mc"\nN = 10\nbeta = 1.5\nh = 0.1\np = 1.0\n'
                       "trajectories = 30\nmaster_seed = 4\n")
        out = tmp_path / "mcc"
        code = main(["mc", "--config", str(cfg), "--trajectories", "40",
                     "--out", str(out)])
        assert code == 0
        data = json.loads((tmp_path / "mcc.json").read_text())
        assert data["config"]["trajectories"] == 40
