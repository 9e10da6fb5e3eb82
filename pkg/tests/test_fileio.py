"""Tests for file formats: sweeps, Touchstone, database, config, reports."""
import json
import math
import os

import numpy as np
import pytest

from vlc_fingerprint import fileio
from vlc_fingerprint.authproto import FingerprintDatabase, enroll, verify
from vlc_fingerprint.bench import BenchConfig, run_accuracy_bench
from vlc_fingerprint.circuit import NOMINAL_PARAMS, ChannelGeometry, FrequencyGrid, LinkScale, sweep_response
from vlc_fingerprint.extract import OpticFingerprint
from vlc_fingerprint.synth import PopulationSpec, S21Sweep, add_noise, sample_geometries, sample_population

GRID = FrequencyGrid.logspace()


@pytest.fixture
def sweep():
    s = S21Sweep(GRID, sweep_response(NOMINAL_PARAMS, LinkScale(123.4), GRID), device_id="led03",
                 geometry=ChannelGeometry(d=0.31, phi=0.1, psi=0.05))
    return add_noise(s, -40.0, seed=3)


@pytest.fixture(scope="module")
def small_db():
    devs = sample_population(PopulationSpec())
    fps = enroll(devs, sample_geometries(3, seed=0), 3, GRID, 0.01, 0, 1e6)
    return FingerprintDatabase.build(fps), fps


class TestSweepCsv:
    def test_round_trip(self, tmp_path, sweep):
        path = tmp_path / "s.csv"
        fileio.write_sweep(path, sweep)
        back = fileio.read_sweep(path)
        np.testing.assert_array_equal(back.values, sweep.values)
        np.testing.assert_array_equal(back.freqs, sweep.freqs)
        assert back.device_id == "led03"
        assert back.geometry == sweep.geometry
        assert back.noise_power_dbm == -40.0 and back.signal_power_dbm == -5.0

    def test_decreasing_frequency_names_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("freq_hz,s21_real,s21_imag\n1e5,1,0\n3e5,1,0\n2e5,1,0\n")
        with pytest.raises(fileio.FormatError, match=r"bad.csv:4"):
            fileio.read_sweep(path)

    @pytest.mark.parametrize("row,what", [("1e5,abc,0", "s21_real"), ("1e5,1", "expected 3"),
                                          ("1e5,nan,0", "finite"), ("-1,1,0", "positive")])
    def test_malformed_row(self, tmp_path, row, what):
        path = tmp_path / "bad.csv"
        path.write_text(f"# device_id: x\nfreq_hz,s21_real,s21_imag\n{row}\n2e5,1,0\n")
        with pytest.raises(fileio.FormatError, match=f"bad.csv:3.*{what}"):
            fileio.read_sweep(path)

    def test_unknown_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("# colour: red\nfreq_hz,s21_real,s21_imag\n1,1,0\n2,1,0\n")
        with pytest.raises(fileio.FormatError, match="colour"):
            fileio.read_sweep(path)

    def test_missing_columns(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("1,1,0\n2,1,0\n")
        with pytest.raises(fileio.FormatError, match="columns"):
            fileio.read_sweep(path)


class TestTouchstone:
    @pytest.mark.parametrize("fmt", ["RI", "MA", "DB"])
    @pytest.mark.parametrize("unit", ["HZ", "KHZ", "MHZ", "GHZ"])
    def test_encodings_agree(self, tmp_path, sweep, fmt, unit):
        path = tmp_path / f"s.{fmt}.{unit}.s2p"
        fileio.write_touchstone(path, sweep, fmt, unit)
        back = fileio.read_touchstone(path)
        np.testing.assert_allclose(back.freqs, sweep.freqs, rtol=1e-14)
        np.testing.assert_allclose(back.values, sweep.values, rtol=1e-12, atol=1e-12 * abs(sweep.values).max())

    def test_hand_written_db_and_ri(self, tmp_path):
        # 0.5 at -90 degrees is -6.0206 dB, i.e. 0 - 0.5j
        ma = tmp_path / "a.s2p"
        ma.write_text("! two points\n# MHZ S DB R 50\n"
                      "1 0 0 -6.020599913279624 -90 0 0 0 0\n"
                      "2 0 0\n 0 0 0 0 0 0\n")
        ri = tmp_path / "b.s2p"
        ri.write_text("# MHZ S RI R 50\n1 0 0 0 -0.5 0 0 0 0\n2 0 0 1 0 0 0 0 0\n")
        a, b = fileio.read_touchstone(ma), fileio.read_touchstone(ri)
        np.testing.assert_allclose(a.values, b.values, atol=1e-15)
        np.testing.assert_array_equal(a.freqs, [1e6, 2e6])

    def test_incomplete_row(self, tmp_path):
        path = tmp_path / "c.s2p"
        path.write_text("# HZ S RI R 50\n1 0 0 1 0 0 0 0\n")
        with pytest.raises(fileio.FormatError):
            fileio.read_touchstone(path)


class TestDatabase:
    def test_round_trip_preserves_verdicts(self, tmp_path, small_db):
        db, fps = small_db
        path = tmp_path / "db.json"
        fileio.write_db(path, db)
        loaded = fileio.read_db(path)
        assert loaded.version == db.version and loaded.tau == db.tau
        for claim in db.ids:
            for dev, items in fps.items():
                for fp in items:
                    assert verify(loaded, fp, claim) == verify(db, fp, claim)

    def test_empty(self, tmp_path):
        path = tmp_path / "empty.json"
        fileio.write_db(path, FingerprintDatabase())
        v = verify(fileio.read_db(path), OpticFingerprint(5.0, 5e-10, 15.0), "led01")
        assert v.reason == "unknown id"

    def test_version_checks(self, tmp_path, small_db):
        data = fileio.db_to_dict(small_db[0])
        for mutate, msg in [(lambda d: d.pop("version"), "missing version"),
                            (lambda d: d.update(version=99), "unsupported version")]:
            d = json.loads(json.dumps(data))
            mutate(d)
            path = tmp_path / "x.json"
            path.write_text(json.dumps(d))
            with pytest.raises(fileio.FormatError, match=msg):
                fileio.read_db(path)

    def test_corrupted_entry_fails_whole_load(self, tmp_path, small_db):
        d = fileio.db_to_dict(small_db[0])
        d["entries"]["led02"][3] = [1.0, -1.0, "x"]
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(d))
        with pytest.raises(fileio.FormatError, match="corrupted"):
            fileio.read_db(path)

    def test_atomic_write_keeps_old_file_on_failure(self, tmp_path, small_db):
        path = tmp_path / "db.json"
        fileio.write_db(path, small_db[0])
        before = path.read_text()
        with pytest.raises(ValueError):
            fileio.write_json(path, {"bad": math.nan})
        assert path.read_text() == before
        assert [p.name for p in tmp_path.iterdir()] == ["db.json"]


class TestConfig:
    def test_round_trip(self):
        cfg = BenchConfig(seeds=(3, 4), reps=2, classifiers=("fine-knn",))
        again = fileio.config_from_dict(fileio.config_to_dict(cfg))
        assert again.describe() == cfg.describe()

    @pytest.mark.parametrize("data,key", [({"populaton": {}}, "populaton"),
                                          ({"population": {"tolerence": 0.1}}, "population.tolerence"),
                                          ({"fit": {"lambda": 1}}, "fit.lambda"),
                                          ({"hyper": {"fine-knn": {"kk": 1}}}, "hyper.fine-knn.kk")])
    def test_unknown_keys_named(self, data, key):
        with pytest.raises(fileio.FormatError, match=key.replace(".", r"\.")):
            fileio.config_from_dict(data)

    def test_invalid_values(self):
        with pytest.raises(fileio.FormatError):
            fileio.config_from_dict({"noise_levels_dbm": [-20, -40]})

    def test_partial(self):
        cfg = fileio.config_from_dict({"population": {"tolerance": [0.1, 0.1, 0.1, 0.0]}, "seeds": [7]})
        assert cfg.seeds == (7,)
        assert cfg.population.tolerances.tolist() == [0.1, 0.1, 0.1, 0.0]


class TestReports:
    def test_writes_report_files(self, tmp_path):
        cfg = BenchConfig(population=PopulationSpec(n_devices=2), reps=2, seeds=(0,),
                          classifiers=("fine-knn",))
        from dataclasses import replace
        cfg = replace(cfg, geometry=replace(cfg.geometry, n_positions=2))
        rep = run_accuracy_bench(cfg)
        written = fileio.write_report(tmp_path, rep, emit_plot_data=True)
        names = sorted(p.name for p in written)
        assert names == ["accuracy.csv", "fig5_fit_overlay.csv", "fig6_parameters.csv", "fig7_accuracy.csv",
                         "report.json", "runtime.json", "summary.txt"]
        lines = (tmp_path / "accuracy.csv").read_text().splitlines()
        assert lines[0] == "classifier,representation,noise_dbm,mean,std,n_seeds"
        assert len(lines) == 3
        assert json.loads((tmp_path / "report.json").read_text()) == json.loads(rep.body_json())
        assert not any(name.endswith(".tmp") for name in os.listdir(tmp_path))
