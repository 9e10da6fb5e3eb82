"""Tests for the accuracy and noise benchmarks on reduced configurations."""
from dataclasses import replace

import numpy as np
import pytest

from vlc_fingerprint.bench import BenchConfig, GeometrySettings, run_accuracy_bench, run_noise_bench
from vlc_fingerprint.circuit import FrequencyGrid
from vlc_fingerprint.synth import PopulationSpec

SMALL = BenchConfig(
    geometry=GeometrySettings(n_positions=4),
    reps=4,
    grid=FrequencyGrid.logspace(n=120),
    noise_levels=(-80.0, -50.0, -35.0, -20.0),
    classifiers=("fine-tree", "fine-knn", "gaussian-nb"),
    seeds=(0,),
)


@pytest.fixture(scope="module")
def noise_report():
    return run_noise_bench(SMALL)


class TestAccuracyBench:
    def test_identical_body(self):
        cfg = replace(SMALL, seeds=(2,), classifiers=("fine-knn",))
        assert run_accuracy_bench(cfg).body_json() == run_accuracy_bench(cfg).body_json()

    def test_cells_complete(self):
        rep = run_accuracy_bench(SMALL)
        assert len(rep.cells) == 3 * 2
        for kind in SMALL.classifiers:
            for r in ("OF", "rawS21"):
                c = rep.cell(kind, r)
                assert 0 <= c["mean"] <= 1 and len(c["per_seed"]) == 1
        acct = rep.header["accounting"]
        assert acct["sweeps_per_seed"] == 4 * 4 * 4
        assert acct["train_per_seed"] + acct["test_per_seed"] == 64
        assert rep.cell("fine-knn", "OF")["mean"] >= 0.9

    def test_identical_devices_give_chance(self):
        pop = PopulationSpec(tolerance=0.0, intra_device_jitter=0.01)
        cfg = replace(SMALL, population=pop, geometry=GeometrySettings(n_positions=5), reps=5,
                      classifiers=("fine-knn", "gaussian-nb"), seeds=(0, 1, 2))
        rep = run_accuracy_bench(cfg)
        for kind in cfg.classifiers:
            assert rep.cell(kind, "OF")["mean"] == pytest.approx(0.25, abs=0.1)

    def test_std_over_seeds(self):
        cfg = replace(SMALL, seeds=(0, 1), classifiers=("fine-knn",))
        c = run_accuracy_bench(cfg).cell("fine-knn", "OF")
        assert c["std"] == pytest.approx(np.std(c["per_seed"]))


class TestNoiseBench:
    def test_cells_complete(self, noise_report):
        levels = noise_report.header["noise_levels_dbm"]
        assert levels == list(SMALL.noise_levels)
        for kind in SMALL.classifiers:
            for r in ("OF", "rawS21"):
                for lv in levels:
                    noise_report.cell(kind, r, lv)
                noise_report.cell(kind, r, None)
        assert noise_report.header["accounting"]["cells"] == 3 * 2 * 4

    def test_degrades_monotonically(self, noise_report):
        for kind in SMALL.classifiers:
            means = [noise_report.cell(kind, "OF", lv)["mean"] for lv in SMALL.noise_levels]
            assert all(b <= a + 0.05 for a, b in zip(means, means[1:]))

    def test_low_noise_matches_clean(self, noise_report):
        for kind in SMALL.classifiers:
            clean = noise_report.cell(kind, "OF")["mean"]
            assert noise_report.cell(kind, "OF", -80.0)["mean"] == pytest.approx(clean, abs=0.02)

    def test_fit_mse_grows_with_noise(self, noise_report):
        mse = noise_report.fit_mse
        assert mse["-80"]["mean"] < mse["-50"]["mean"] < mse["-20"]["mean"]

    def test_zeta_does_not_separate_devices(self, noise_report):
        fr = noise_report.separability["fisher_ratio"]
        assert fr["zeta"] < 1e-6 < fr["c_q"]

    def test_needs_two_levels(self):
        with pytest.raises(ValueError):
            run_noise_bench(replace(SMALL, noise_levels=(-40.0,)))

    def test_level_list_does_not_change_shared_levels(self, noise_report):
        fewer = run_noise_bench(replace(SMALL, noise_levels=(-50.0, -20.0)))
        for kind in SMALL.classifiers:
            for lv in (-50.0, -20.0):
                assert fewer.cell(kind, "OF", lv)["mean"] == noise_report.cell(kind, "OF", lv)["mean"]


class TestConfig:
    def test_unsorted_levels(self):
        with pytest.raises(ValueError):
            BenchConfig(noise_levels=(-20.0, -40.0))

    def test_unknown_classifier(self):
        with pytest.raises(ValueError):
            BenchConfig(classifiers=("svm",))

    def test_no_seeds(self):
        with pytest.raises(ValueError):
            BenchConfig(seeds=())
