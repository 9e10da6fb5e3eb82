"""End-to-end tests of the command-line interface."""
import json

import pytest

from vlc_fingerprint import fileio
from vlc_fingerprint.cli import main

SMALL = {
    "population": {"n_devices": 3},
    "geometry": {"n_positions": 3},
    "grid": {"n_points": 120},
    "reps": 2,
    "seeds": [0],
    "classifiers": ["fine-knn", "gaussian-nb"],
    "noise_levels_dbm": [-60.0, -30.0],
}


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "config.json"
    cfg.write_text(json.dumps(SMALL))
    assert main(["synth", "--config", str(cfg), "--out", str(root / "data")]) == 0
    assert main(["extract", "--config", str(cfg), "--in", str(root / "data"), "--out", str(root / "fps.json")]) == 0
    assert main(["train", "--in", str(root / "fps.json"), "--out", str(root / "db.json")]) == 0
    return root


class TestPipeline:
    def test_synth_layout(self, work):
        manifest = fileio.read_manifest(work / "data" / "manifest.json")
        assert len(manifest["sweeps"]) == 3 * 3 * 2
        first = manifest["sweeps"][0]
        sweep = fileio.read_sweep(work / "data" / first["file"])
        assert sweep.device_id == first["device_id"] and len(sweep.freqs) == 120

    def test_extract_set(self, work):
        data = fileio.read_json(work / "fps.json")
        assert data["format"] == "vlc-fingerprint-set"
        assert len(data["fingerprints"]) == 18
        assert all(f["mse"] < 1e-6 for f in data["fingerprints"])

    def test_extract_single_file(self, work, tmp_path, capsys):
        src = sorted((work / "data" / "sweeps").glob("*.csv"))[0]
        assert main(["extract", "--in", str(src), "--out", str(tmp_path / "fit.json")]) == 0
        fit = fileio.read_json(tmp_path / "fit.json")
        assert fit["converged"] and "mse=" in capsys.readouterr().out
        assert len(fileio.read_fingerprints(tmp_path / "fit.json")) == 1

    def test_verify_own_sweep(self, work, tmp_path, capsys):
        out = tmp_path / "v.json"
        assert main(["verify", "--db", str(work / "db.json"), "--in", str(work / "fps.json"),
                     "--claim", "led01", "--out", str(out)]) == 0
        verdicts = fileio.read_json(out)["verdicts"]
        owners = [f["device_id"] for f in fileio.read_json(work / "fps.json")["fingerprints"]]
        for owner, v in zip(owners, verdicts):
            if owner != "led01":
                assert not v["accepted"]
        assert sum(v["accepted"] for v, o in zip(verdicts, owners) if o == "led01") >= 5
        assert "claimed=led01" in capsys.readouterr().out

    def test_register_and_duplicate(self, work, tmp_path):
        db_copy = tmp_path / "db.json"
        db_copy.write_text((work / "db.json").read_text())
        data = fileio.read_json(work / "fps.json")
        led03 = {"fingerprints": [f for f in data["fingerprints"] if f["device_id"] == "led03"]}
        (tmp_path / "new.json").write_text(json.dumps(led03))
        assert main(["register", "--db", str(db_copy), "--in", str(tmp_path / "new.json"), "--id", "led99"]) == 0
        assert fileio.read_db(db_copy).version == 2
        assert main(["register", "--db", str(db_copy), "--in", str(tmp_path / "new.json"), "--id", "led99"]) == 1
        assert fileio.read_db(db_copy).version == 2

    def test_auth_sim(self, work, tmp_path):
        fp = fileio.read_json(work / "fps.json")["fingerprints"][0]
        scenario = {"format": "vlc-fingerprint-scenario", "version": 1, "events": [{"type": "report", "time": 0.0, "ue": "ue1", "claimed_id": fp["device_id"],
                                "fingerprint": [fp["r_c"], fp["c_j"], fp["r_q"]]}]}
        (tmp_path / "s.json").write_text(json.dumps(scenario))
        out = tmp_path / "t.json"
        assert main(["auth-sim", "--db", str(work / "db.json"), "--scenario", str(tmp_path / "s.json"),
                     "--out", str(out)]) == 0
        kinds = [m["kind"] for m in fileio.read_json(out)["messages"]]
        assert kinds[:3] == ["OFReport", "VerifyRequest", "VerifyResult"]

    def test_noisy_synth_is_deterministic(self, work, tmp_path):
        cfg = str(work / "config.json")
        for name in ("a", "b"):
            assert main(["synth", "--config", cfg, "--noise-dbm", "-40", "--out", str(tmp_path / name)]) == 0
        a = sorted((tmp_path / "a" / "sweeps").iterdir())
        b = sorted((tmp_path / "b" / "sweeps").iterdir())
        assert [p.read_bytes() for p in a] == [p.read_bytes() for p in b]


class TestBenchCommands:
    def test_noise_bench_twice_identical(self, work, tmp_path):
        cfg = str(work / "config.json")
        for name in ("a", "b"):
            assert main(["bench-noise", "--config", cfg, "--out", str(tmp_path / name), "--emit-plot-data"]) == 0
        assert (tmp_path / "a" / "report.json").read_bytes() == (tmp_path / "b" / "report.json").read_bytes()
        assert (tmp_path / "a" / "fig8_noise.csv").exists()

    def test_seed_override(self, work, tmp_path):
        assert main(["bench-accuracy", "--config", str(work / "config.json"), "--seed", "4",
                     "--out", str(tmp_path)]) == 0
        assert fileio.read_json(tmp_path / "report.json")["header"]["config"]["seeds"] == [4]


class TestErrors:
    def test_unknown_subcommand(self):
        with pytest.raises(SystemExit) as exc:
            main(["dance"])
        assert exc.value.code == 2

    def test_missing_required(self, capsys):
        assert main(["verify", "--claim", "x"]) == 1
        assert "--db is required" in capsys.readouterr().err

    def test_bad_config_key(self, tmp_path, capsys):
        (tmp_path / "c.json").write_text(json.dumps({"population": {"tolerence": 0.1}}))
        assert main(["bench-accuracy", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path)]) == 1
        assert "population.tolerence" in capsys.readouterr().err

    def test_corrupt_db(self, work, tmp_path, capsys):
        (tmp_path / "db.json").write_text("{not json")
        assert main(["verify", "--db", str(tmp_path / "db.json"), "--in", str(work / "fps.json"),
                     "--claim", "led01"]) == 1
        assert "error" in capsys.readouterr().err
