import json

import pytest

from opsgd.cli import format_regimes, main
from opsgd.experiments import ConfigError, list_regimes, parse_config

SMALL = {
    "version": 1,
    "experiment": "rate_check",
    "problem": {"dim_in": 20, "dim_out": 3, "regularity": "weak", "r": 0.5, "s": 0.5, "sigma2": 0.01},
    "schedule": {"kind": "constant", "eta": "cap"},
    "horizons": [16, 32, 64, 128, 256],
    "n_replicates": 3,
    "master_seed": 5,
}


def write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


class TestListRegimes:
    def test_table(self, capsys):
        assert main(["list-regimes"]) == 0
        out = capsys.readouterr().out
        assert len(out.strip().splitlines()) == 2 + len(list_regimes())
        assert "-0.0000" not in out

    def test_rows(self):
        rows = list_regimes()
        assert len(rows) == 33
        weak_est = [r for r in rows if r["regularity"] == "weak" and r["error"] == "estimation"]
        assert not weak_est
        for r in rows:
            if (r["regularity"], r["error"], r["schedule"]) == ("strong", "estimation", "constant"):
                assert r["minimax_gap"] == 0.0
        assert format_regimes(rows).count("\n") == len(rows) + 1


class TestRun:
    def test_outputs_and_determinism(self, tmp_path, capsys):
        cfg = write(tmp_path, SMALL)
        code = main(["run", cfg, "--out", str(tmp_path / "a")])
        assert code in (0, 2)
        main(["run", cfg, "--out", str(tmp_path / "b")])
        for name in ("results.csv", "plotdata.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        head = (tmp_path / "a" / "results.csv").read_text().splitlines()[0]
        assert head == "series,t,mean_err,se_err,n"
        summary = json.loads((tmp_path / "a" / "summary.json").read_text())
        for key in ("experiment", "fingerprint", "verdicts", "fitted", "theory", "minimax",
                    "runtime_seconds", "overall", "config"):
            assert key in summary
        assert summary["overall"] == ("PASS" if code == 0 else "FAIL")

    def test_jobs_invariant(self, tmp_path):
        cfg = write(tmp_path, SMALL)
        main(["run", cfg, "--out", str(tmp_path / "a"), "--jobs", "1"])
        main(["run", cfg, "--out", str(tmp_path / "b"), "--jobs", "2"])
        assert (tmp_path / "a" / "results.csv").read_bytes() == (tmp_path / "b" / "results.csv").read_bytes()

    def test_seed_override(self, tmp_path):
        cfg = write(tmp_path, SMALL)
        main(["run", cfg, "--out", str(tmp_path / "a")])
        main(["run", cfg, "--out", str(tmp_path / "b"), "--seed", "6"])
        assert (tmp_path / "a" / "results.csv").read_bytes() != (tmp_path / "b" / "results.csv").read_bytes()
        summary = json.loads((tmp_path / "b" / "summary.json").read_text())
        assert summary["config"]["master_seed"] == 6

    def test_env_output_dir(self, tmp_path, monkeypatch):
        monkeypatch.setenv("OPSGD_OUTPUT_DIR", str(tmp_path / "env"))
        main(["run", write(tmp_path, SMALL)])
        assert (tmp_path / "env" / "results.csv").exists()

    def test_config_roundtrip(self, tmp_path):
        main(["run", write(tmp_path, SMALL), "--out", str(tmp_path / "a")])
        summary = json.loads((tmp_path / "a" / "summary.json").read_text())
        again = parse_config(summary["config"])
        assert again == parse_config(SMALL)


class TestConfigErrors:
    def test_missing_s(self, tmp_path, capsys):
        cfg = json.loads(json.dumps(SMALL))
        del cfg["problem"]["s"]
        assert main(["run", write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 1
        assert "problem.s" in capsys.readouterr().err
        assert not (tmp_path / "o").exists()

    def test_malformed_json(self, tmp_path, capsys):
        p = tmp_path / "bad.json"
        p.write_text('{"experiment": "rate_check",\n  "problem": }')
        assert main(["run", str(p)]) == 1
        assert "line 2" in capsys.readouterr().err

    def test_unknown_experiment(self, tmp_path):
        assert main(["run", write(tmp_path, {**SMALL, "experiment": "nope"})]) == 1

    def test_strict_feasibility(self, tmp_path, capsys):
        cfg = {**SMALL, "schedule": {"kind": "constant", "eta": 0.5}}
        assert main(["run", write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 1
        assert "strict_feasibility" in capsys.readouterr().err

    def test_norm_condition_always_fatal(self, tmp_path):
        cfg = {**SMALL, "schedule": {"kind": "decaying", "eta": 5.0, "strict_feasibility": False}, "T": 64}
        assert main(["run", write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 1

    def test_relaxed_feasibility_noted(self, tmp_path):
        cfg = {**SMALL, "schedule": {"kind": "decaying", "eta": 0.5, "strict_feasibility": False}, "T": 256}
        main(["run", write(tmp_path, cfg), "--out", str(tmp_path / "o")])
        summary = json.loads((tmp_path / "o" / "summary.json").read_text())
        assert any("moment" in n for n in summary["notes"])

    @pytest.mark.parametrize("patch", [
        {"error": "estimation"},
        {"horizons": []},
        {"n_replicates": 0},
        {"version": 2},
        {"extra": 1},
    ])
    def test_invalid_fields(self, patch):
        with pytest.raises(ConfigError):
            parse_config({**SMALL, **patch})

    def test_weak_estimation_message(self):
        with pytest.raises(ConfigError, match="Hilbert-Schmidt"):
            parse_config({**SMALL, "error": "estimation"})


class TestVerifyMinimax:
    def test_report(self, tmp_path, capsys):
        cfg = {"version": 1, "experiment": "minimax_verify", "master_seed": 0,
               "options": {"families": [{"regime": "strong", "m": 8, "sigma2": 1.0},
                                        {"regime": "weak", "m": 3, "sigma2": 1.0, "mc_draws": 20000}]}}
        assert main(["verify-minimax", write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 0
        rep = json.loads((tmp_path / "o" / "minimax_report.json").read_text())
        assert [f["regime"] for f in rep["families"]] == ["strong", "weak"]
        assert "norm_within_R" in rep["families"][1]
        assert rep["families"][1]["caveat"]

    def test_missing_regime(self, tmp_path):
        cfg = {"version": 1, "experiment": "minimax_verify", "options": {"families": [{"m": 8}]}}
        assert main(["verify-minimax", write(tmp_path, cfg)]) == 1
