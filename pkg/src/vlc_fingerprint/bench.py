"""Desk-scale identification benchmarks.

Two experiments share one pipeline per seed::

    synth -> fit every sweep -> stratified split -> train -> evaluate

The accuracy bench scores clean test sweeps; the noise bench superimposes
white noise on the test sweeps only, re-extracts fingerprints from the
noisy sweeps and scores again at every configured noise power. Each
(classifier, representation) pair is reported as mean and standard
deviation over seeds.

The synthetic population is fixed by ``PopulationSpec.seed``; the bench
seeds vary positions, measurement drift, the split and the noise draws.
"""
from __future__ import annotations

import json
import logging
import math
import time
from collections import defaultdict
from dataclasses import asdict, dataclass, field

import numpy as np

from .circuit import FrequencyGrid, magnitude_db, sweep_response
from .classify import (
    KINDS,
    FeatureMatrix,
    evaluate,
    fisher_ratio,
    fit_normalizer,
    normalize_matrix,
    raw_s21_features,
    split_dataset,
    train_classifier,
)
from .extract import FitOptions, FitResult, fit_sweep
from .synth import (
    DEFAULT_SIGNAL_POWER_DBM,
    PopulationSpec,
    add_noise,
    sample_geometries,
    sample_population,
    simulate_dataset,
)

log = logging.getLogger(__name__)

REPRESENTATIONS = ("OF", "rawS21")
FIVE_PARAMS = ("r_c", "c_j", "r_q", "c_q", "zeta")
MAX_UNCONVERGED_FRACTION = 0.05


class SeedAborted(RuntimeError):
    pass


@dataclass(frozen=True)
class GeometrySettings:
    """Where the receiver goes and how strong the link is.

    ``electronics_gain`` lumps amplifier, driver, receiver and quantum
    efficiency. It sets the S21 level relative to the absolute noise
    floor, so it decides where accuracy starts to fall off with noise.
    """

    n_positions: int = 15
    d_range: tuple = (0.1, 0.6)
    angle_max: float = math.radians(20)
    phi_half: float = math.pi / 3
    a_r: float = 1e-4
    g_psi: float = 1.0
    electronics_gain: float = 1e6


@dataclass(frozen=True)
class BenchConfig:
    population: PopulationSpec = field(default_factory=PopulationSpec)
    geometry: GeometrySettings = field(default_factory=GeometrySettings)
    reps: int = 10
    grid: FrequencyGrid = field(default_factory=FrequencyGrid.logspace)
    noise_levels: tuple = tuple(float(x) for x in range(-90, -15, 5))
    classifiers: tuple = KINDS
    train_fraction: float = 0.5
    seeds: tuple = (0, 1, 2, 3, 4)
    fit: FitOptions = field(default_factory=FitOptions)
    signal_power_dbm: float = DEFAULT_SIGNAL_POWER_DBM
    hyper: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("at least one seed is required")
        levels = list(self.noise_levels)
        if levels != sorted(levels):
            raise ValueError("noise_levels must be sorted ascending")
        for kind in self.classifiers:
            if kind not in KINDS:
                raise ValueError(f"unknown classifier {kind!r}")
        if self.reps < 1:
            raise ValueError("reps must be >= 1")

    def describe(self) -> dict:
        """JSON-ready echo of the configuration."""
        geo = asdict(self.geometry)
        geo["d_range"] = list(geo["d_range"])
        pop = asdict(self.population)
        tol = pop["tolerance"]
        pop["tolerance"] = list(tol) if isinstance(tol, (tuple, list)) else tol
        return {
            "population": pop,
            "geometry": geo,
            "reps": self.reps,
            "grid": {"f_start_hz": float(self.grid.points[0]), "f_stop_hz": float(self.grid.points[-1]),
                     "n_points": len(self.grid)},
            "noise_levels_dbm": [float(x) for x in self.noise_levels],
            "classifiers": list(self.classifiers),
            "train_fraction": self.train_fraction,
            "seeds": list(self.seeds),
            "fit": asdict(self.fit),
            "signal_power_dbm": self.signal_power_dbm,
            "hyper": self.hyper,
        }


@dataclass
class BenchReport:
    """Aggregated results plus per-figure series for plotting.

    ``body()`` holds everything that must reproduce exactly; wall-clock
    timings live outside it.
    """

    kind: str
    header: dict
    cells: list
    fit_mse: dict
    separability: dict
    reference_cells: list = field(default_factory=list)
    runtime_s: dict = field(default_factory=dict)
    series: dict = field(default_factory=dict)

    def body(self) -> dict:
        return {
            "format": "vlc-fingerprint-bench",
            "version": 1,
            "kind": self.kind,
            "header": self.header,
            "cells": self.cells,
            "reference_cells": self.reference_cells,
            "fit_mse": self.fit_mse,
            "separability": self.separability,
        }

    def body_json(self) -> str:
        return json.dumps(self.body(), indent=2, sort_keys=True)

    def to_dict(self) -> dict:
        return {**self.body(), "runtime_s": self.runtime_s}

    def cell(self, classifier: str, representation: str, noise_dbm=None) -> dict:
        pool = self.cells + self.reference_cells
        for c in pool:
            if c["classifier"] == classifier and c["representation"] == representation and c["noise_dbm"] == noise_dbm:
                return c
        raise KeyError((classifier, representation, noise_dbm))

    def table(self) -> str:
        """Plain-text accuracy table (mean +/- std over seeds)."""
        levels = sorted({c["noise_dbm"] for c in self.cells}, key=lambda v: (v is not None, v))
        head = ["classifier", "repr"] + ["clean" if v is None else f"{v:g} dBm" for v in levels]
        rows = [head]
        for clf in self.header["classifiers"]:
            for rep in REPRESENTATIONS:
                row = [clf, rep]
                for v in levels:
                    c = self.cell(clf, rep, v)
                    row.append(f"{c['mean']:.3f}+/-{c['std']:.3f}")
                rows.append(row)
        widths = [max(len(r[i]) for r in rows) for i in range(len(head))]
        lines = ["  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() for r in rows]
        hdr = self.header
        lines.insert(0, f"features: OF={hdr['feature_counts']['OF']} rawS21={hdr['feature_counts']['rawS21']}; "
                        f"seeds used {hdr['seeds_used']} of {hdr['seeds']}")
        return "\n".join(lines) + "\n"


# --- per-seed pipeline -----------------------------------------------------

def _noise_seed(seed: int, level: float, index: int) -> np.random.SeedSequence:
    # keyed by the level value so a level's draws do not depend on the level list
    return np.random.SeedSequence(int(seed), spawn_key=(5, int(round((level + 1000.0) * 1000)), index))


def _of_matrix(fits: list[FitResult], labels) -> FeatureMatrix:
    rows = [[f.params.r_c, f.params.c_j, f.params.r_q] for f in fits]
    return FeatureMatrix(np.array(rows), labels)


def _five_matrix(fits: list[FitResult], labels) -> FeatureMatrix:
    rows = [[f.params.r_c, f.params.c_j, f.params.r_q, f.params.c_q, f.zeta.zeta] for f in fits]
    return FeatureMatrix(np.array(rows), labels)


def _check_convergence(fits, seed, stage):
    bad = sum(not f.converged for f in fits)
    if bad > MAX_UNCONVERGED_FRACTION * len(fits):
        raise SeedAborted(f"seed {seed}: {bad}/{len(fits)} fits did not converge during {stage}")
    return bad


def _train_all(cfg: BenchConfig, of_train, raw_train, seed):
    models = {}
    for kind in cfg.classifiers:
        hyper = dict(cfg.hyper.get(kind, {}))
        hyper.setdefault("seed", seed)
        models[(kind, "OF")] = train_classifier(kind, of_train, hyper)
        models[(kind, "rawS21")] = train_classifier(kind, raw_train, hyper)
    return models


def _run_seed(cfg: BenchConfig, seed: int, levels) -> dict:
    timer = defaultdict(float)
    t0 = time.perf_counter()
    devices = sample_population(cfg.population)
    g = cfg.geometry
    geoms = sample_geometries(g.n_positions, g.d_range, g.angle_max, phi_half=g.phi_half,
                              a_r=g.a_r, g_psi=g.g_psi, seed=seed)
    data = simulate_dataset(devices, geoms, cfg.reps, cfg.grid, cfg.population.intra_device_jitter,
                            seed, g.electronics_gain)
    timer["synth"] += time.perf_counter() - t0

    t0 = time.perf_counter()
    fits = [fit_sweep(s, cfg.fit) for s in data.sweeps]
    timer["extract"] += time.perf_counter() - t0
    unconverged = {"clean": _check_convergence(fits, seed, "clean extraction")}

    labels = tuple(data.labels)
    index = FeatureMatrix(np.arange(len(labels), dtype=float)[:, None], labels)
    train_ix, test_ix = split_dataset(index, cfg.train_fraction, seed)
    tr = train_ix.rows[:, 0].astype(int)
    te = test_ix.rows[:, 0].astype(int)

    of_all = _of_matrix(fits, labels)
    raw_all = FeatureMatrix(np.array([raw_s21_features(s) for s in data.sweeps]), labels)
    norm = fit_normalizer(of_all.subset(tr))
    of_train = normalize_matrix(norm, of_all.subset(tr))
    raw_train = raw_all.subset(tr)

    t0 = time.perf_counter()
    models = _train_all(cfg, of_train, raw_train, seed)
    timer["train"] += time.perf_counter() - t0

    def score(of_test, raw_test):
        out = {}
        for (kind, rep), model in models.items():
            out[(kind, rep)] = evaluate(model, of_test if rep == "OF" else raw_test).accuracy
        return out

    t0 = time.perf_counter()
    acc = {None: score(normalize_matrix(norm, of_all.subset(te)), raw_all.subset(te))}
    timer["evaluate"] += time.perf_counter() - t0

    mse = {"clean": [f.mse for f in fits]}
    test_labels = tuple(labels[i] for i in te)
    for level in levels:
        t0 = time.perf_counter()
        noisy = [add_noise(data.sweeps[i], level, cfg.signal_power_dbm, _noise_seed(seed, level, int(i)))
                 for i in te]
        timer["synth"] += time.perf_counter() - t0
        t0 = time.perf_counter()
        noisy_fits = [fit_sweep(s, cfg.fit) for s in noisy]
        timer["extract"] += time.perf_counter() - t0
        unconverged[float(level)] = _check_convergence(noisy_fits, seed, f"extraction at {level:g} dBm")
        mse[float(level)] = [f.mse for f in noisy_fits]
        t0 = time.perf_counter()
        of_test = normalize_matrix(norm, _of_matrix(noisy_fits, test_labels))
        raw_test = FeatureMatrix(np.array([raw_s21_features(s) for s in noisy]), test_labels)
        acc[float(level)] = score(of_test, raw_test)
        timer["evaluate"] += time.perf_counter() - t0

    return {
        "seed": seed,
        "accuracy": acc,
        "mse": mse,
        "unconverged": unconverged,
        "fits": fits,
        "data": data,
        "n_train": len(tr),
        "n_test": len(te),
        "runtime": dict(timer),
    }


# --- aggregation -----------------------------------------------------------

def _cells(results, classifiers, level):
    cells = []
    for kind in classifiers:
        for rep in REPRESENTATIONS:
            vals = [r["accuracy"][level][(kind, rep)] for r in results]
            cells.append({
                "classifier": kind,
                "representation": rep,
                "noise_dbm": level,
                "mean": float(np.mean(vals)),
                "std": float(np.std(vals)),
                "per_seed": [float(v) for v in vals],
            })
    return cells


def _summary(values) -> dict:
    v = np.asarray(values, dtype=float)
    return {"mean": float(v.mean()), "median": float(np.median(v)), "max": float(v.max()), "n": int(v.size)}


def _series(cfg: BenchConfig, first: dict) -> dict:
    """Figure-ready rows from the first successful seed."""
    data, fits = first["data"], first["fits"]
    fig5, fig6 = [], []
    shown = set()
    for i, (sweep, fit) in enumerate(zip(data.sweeps, fits)):
        pos = data.positions[i]
        fig6.append({"device_id": sweep.device_id, "position": pos, "r_c": fit.params.r_c,
                     "c_j": fit.params.c_j, "r_q": fit.params.r_q, "c_q": fit.params.c_q,
                     "zeta": fit.zeta.zeta, "mse": fit.mse})
        # one overlay per (device, position)
        if (sweep.device_id, pos) in shown:
            continue
        shown.add((sweep.device_id, pos))
        model = sweep_response(fit.params, fit.zeta, sweep.grid)
        for f_hz, meas, fitted in zip(sweep.freqs, magnitude_db(sweep.values), magnitude_db(model)):
            fig5.append({"device_id": sweep.device_id, "position": pos, "freq_hz": float(f_hz),
                         "measured_db": float(meas), "fitted_db": float(fitted)})
    return {"fig5_fit_overlay": fig5, "fig6_parameters": fig6}


def _separability(results) -> dict:
    """Per-dimension Fisher ratios of the five fitted parameters (mean over seeds)."""
    ratios = defaultdict(list)
    for r in results:
        fm = _five_matrix(r["fits"], tuple(r["data"].labels))
        for j, name in enumerate(FIVE_PARAMS):
            ratios[name].append(fisher_ratio(fm, j))
    return {"fisher_ratio": {k: float(np.mean(v)) for k, v in ratios.items()}}


def _run(cfg: BenchConfig, levels, kind: str) -> BenchReport:
    results, aborted = [], []
    for seed in cfg.seeds:
        try:
            results.append(_run_seed(cfg, seed, levels))
        except SeedAborted as exc:
            log.warning("%s", exc)
            aborted.append({"seed": seed, "diagnostic": str(exc)})
    if not results:
        raise SeedAborted("every seed aborted: " + "; ".join(a["diagnostic"] for a in aborted))

    cell_levels = [None] if kind == "accuracy" else [float(x) for x in levels]
    cells = [c for lv in cell_levels for c in _cells(results, cfg.classifiers, lv)]
    reference = [] if kind == "accuracy" else _cells(results, cfg.classifiers, None)

    fit_mse = {"clean": _summary([m for r in results for m in r["mse"]["clean"]])}
    for lv in levels:
        fit_mse[f"{float(lv):g}"] = _summary([m for r in results for m in r["mse"][float(lv)]])
    unconverged = {}
    for r in results:
        for key, n in r["unconverged"].items():
            name = "clean" if key == "clean" else f"{key:g}"
            unconverged[name] = unconverged.get(name, 0) + n
    fit_mse["unconverged"] = unconverged

    first = results[0]
    n_sweeps = len(first["data"])
    header = {
        "feature_counts": {"OF": 3, "rawS21": len(cfg.grid)},
        "classifiers": list(cfg.classifiers),
        "representations": list(REPRESENTATIONS),
        "n_devices": cfg.population.n_devices,
        "seeds": list(cfg.seeds),
        "seeds_used": [r["seed"] for r in results],
        "aborted_seeds": aborted,
        "noise_levels_dbm": [float(x) for x in levels],
        "accounting": {
            "sweeps_per_seed": n_sweeps,
            "train_per_seed": first["n_train"],
            "test_per_seed": first["n_test"],
            "noisy_test_sweeps_per_seed": first["n_test"] * len(levels),
            "noisy_test_sweeps_total": first["n_test"] * len(levels) * len(results),
            "cells": len(cells),
        },
        "config": cfg.describe(),
    }
    runtime = defaultdict(float)
    for r in results:
        for stage, sec in r["runtime"].items():
            runtime[stage] += sec

    series = _series(cfg, first)
    series["fig7_accuracy"] = [
        {k: c[k] for k in ("classifier", "representation", "mean", "std")}
        for c in (cells if kind == "accuracy" else reference)
    ]
    if kind == "noise":
        series["fig8_noise"] = [
            {k: c[k] for k in ("classifier", "representation", "noise_dbm", "mean", "std")} for c in cells
        ]
    return BenchReport(kind, header, cells, fit_mse, _separability(results), reference,
                       dict(runtime), series)


def run_accuracy_bench(cfg: BenchConfig) -> BenchReport:
    """Clean-test accuracy per classifier for OF and raw-S21 features."""
    return _run(cfg, [], "accuracy")


def run_noise_bench(cfg: BenchConfig) -> BenchReport:
    """Accuracy versus noise power; noise hits the test sweeps only."""
    if len(cfg.noise_levels) < 2:
        raise ValueError("the noise bench needs at least two noise levels")
    return _run(cfg, list(cfg.noise_levels), "noise")
