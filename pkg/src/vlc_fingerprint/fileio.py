"""Readers and writers for every on-disk artifact.

Sweeps and figure series are CSV; the fingerprint database, configs,
scenarios, transcripts and reports are JSON objects carrying ``format``
and ``version`` fields. Field names are documented in docs/FORMATS.md.
Every writer goes through :func:`atomic_write`.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import re
import tempfile
from dataclasses import fields
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .authproto import AuthMessage, FingerprintDatabase
from .bench import BenchConfig, BenchReport, GeometrySettings
from .circuit import ChannelGeometry, CircuitParams, FrequencyGrid
from .classify import KINDS, Normalizer, model_from_dict
from .extract import FitOptions, FitResult, OpticFingerprint
from .synth import PopulationSpec, S21Sweep

DB_FORMAT = "vlc-fingerprint-db"
DB_VERSION = 1
CONFIG_FORMAT = "vlc-fingerprint-config"
SCENARIO_FORMAT = "vlc-fingerprint-scenario"
TRANSCRIPT_FORMAT = "vlc-fingerprint-transcript"
FIT_FORMAT = "vlc-fingerprint-fit"
MANIFEST_FORMAT = "vlc-fingerprint-manifest"


class FormatError(ValueError):
    """A file exists but its content does not follow the expected layout."""


# --- plumbing --------------------------------------------------------------

def atomic_write(path, text: str) -> None:
    """Write ``text`` to a sibling temp file, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(path, obj) -> None:
    atomic_write(path, dump_json(obj))


def read_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None


def _check_header(data, fmt: str, path, supported=(1,)) -> None:
    if not isinstance(data, dict):
        raise FormatError(f"{path}: expected a JSON object")
    if data.get("format") != fmt:
        raise FormatError(f"{path}: format must be {fmt!r}, got {data.get('format')!r}")
    if "version" not in data:
        raise FormatError(f"{path}: missing version field")
    if data["version"] not in supported:
        raise FormatError(f"{path}: unsupported version {data['version']!r}")


def write_csv(path, header: Iterable[str], rows: Iterable[Iterable]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(header))
    for row in rows:
        w.writerow([repr(v) if isinstance(v, float) else ("" if v is None else v) for v in row])
    atomic_write(path, buf.getvalue())


# --- sweeps ----------------------------------------------------------------

SWEEP_COLUMNS = ("freq_hz", "s21_real", "s21_imag")
_GEOMETRY_KEYS = ("d", "phi", "psi", "phi_half", "a_r", "g_psi")


def write_sweep(path, sweep: S21Sweep) -> None:
    """CSV with ``# key: value`` header lines; floats use shortest round-trip repr."""
    lines = []
    if sweep.device_id is not None:
        lines.append(f"# device_id: {sweep.device_id}")
    if sweep.geometry is not None:
        g = sweep.geometry
        lines.append("# geometry: " + json.dumps({k: getattr(g, k) for k in _GEOMETRY_KEYS}))
    if sweep.noise_power_dbm is not None:
        lines.append(f"# noise_power_dbm: {sweep.noise_power_dbm!r}")
    lines.append(f"# signal_power_dbm: {float(sweep.signal_power_dbm)!r}")
    lines.append(",".join(SWEEP_COLUMNS))
    for f, v in zip(sweep.freqs, sweep.values):
        lines.append(f"{float(f)!r},{float(v.real)!r},{float(v.imag)!r}")
    atomic_write(path, "\n".join(lines) + "\n")


def _float_field(text: str, path, lineno: int, what: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise FormatError(f"{path}:{lineno}: {what} is not a number: {text.strip()!r}") from None
    if not math.isfinite(value):
        raise FormatError(f"{path}:{lineno}: {what} must be finite")
    return value


def read_sweep(path) -> S21Sweep:
    meta = {}
    freqs, values = [], []
    seen_columns = False
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, sep, value = line[1:].partition(":")
                if not sep:
                    raise FormatError(f"{path}:{lineno}: header lines look like '# key: value'")
                meta[key.strip()] = (value.strip(), lineno)
                continue
            cells = [c.strip() for c in line.split(",")]
            if not seen_columns:
                if tuple(cells) != SWEEP_COLUMNS:
                    raise FormatError(f"{path}:{lineno}: expected columns {','.join(SWEEP_COLUMNS)}")
                seen_columns = True
                continue
            if len(cells) != 3:
                raise FormatError(f"{path}:{lineno}: expected 3 values, got {len(cells)}")
            f = _float_field(cells[0], path, lineno, "freq_hz")
            re_, im = (_float_field(c, path, lineno, n) for c, n in zip(cells[1:], SWEEP_COLUMNS[1:]))
            if f <= 0:
                raise FormatError(f"{path}:{lineno}: frequency must be positive")
            if freqs and f <= freqs[-1]:
                raise FormatError(f"{path}:{lineno}: frequency {f!r} does not increase")
            freqs.append(f)
            values.append(complex(re_, im))
    if not seen_columns or len(freqs) < 2:
        raise FormatError(f"{path}: no sweep data")

    kwargs = {}
    unknown = set(meta) - {"device_id", "geometry", "noise_power_dbm", "signal_power_dbm"}
    if unknown:
        key = sorted(unknown)[0]
        raise FormatError(f"{path}:{meta[key][1]}: unknown header key {key!r}")
    if "device_id" in meta:
        kwargs["device_id"] = meta["device_id"][0]
    if "geometry" in meta:
        text, lineno = meta["geometry"]
        try:
            kwargs["geometry"] = ChannelGeometry(**json.loads(text))
        except (ValueError, TypeError) as exc:
            raise FormatError(f"{path}:{lineno}: bad geometry: {exc}") from None
    for key in ("noise_power_dbm", "signal_power_dbm"):
        if key in meta:
            text, lineno = meta[key]
            try:
                kwargs[key] = float(text)
            except ValueError:
                raise FormatError(f"{path}:{lineno}: {key} is not a number") from None
    return S21Sweep(FrequencyGrid(np.array(freqs)), np.array(values), **kwargs)


_TS_UNITS = {"HZ": 1.0, "KHZ": 1e3, "MHZ": 1e6, "GHZ": 1e9}


def read_touchstone(path, device_id: str | None = None) -> S21Sweep:
    """Import S21 from a version-1 Touchstone two-port file.

    The option line selects the frequency unit and one of the RI, MA or DB
    pair encodings (angles in degrees). Columns follow the
    ``f S11 S21 S12 S22`` order; lines may wrap.
    """
    unit, fmt = 1e9, "MA"        # Touchstone defaults
    numbers: list[tuple[float, int]] = []
    seen_option = False
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("!", 1)[0].strip()
            if not line:
                continue
            if line.startswith("#"):
                if seen_option:
                    continue        # later option lines are ignored by convention
                seen_option = True
                for tok in line[1:].upper().split():
                    if tok in _TS_UNITS:
                        unit = _TS_UNITS[tok]
                    elif tok in ("RI", "MA", "DB"):
                        fmt = tok
                    elif tok in ("S",) or re.fullmatch(r"[0-9.eE+-]+", tok) or tok == "R":
                        continue
                    else:
                        raise FormatError(f"{path}:{lineno}: unsupported option {tok!r}")
                continue
            for tok in line.split():
                numbers.append((_float_field(tok, path, lineno, "value"), lineno))
    if not numbers or len(numbers) % 9:
        raise FormatError(f"{path}: two-port data must come in groups of 9 numbers")
    arr = np.array([v for v, _ in numbers]).reshape(-1, 9)
    lines = [numbers[9 * i][1] for i in range(arr.shape[0])]
    freqs = arr[:, 0] * unit
    for i in range(1, len(freqs)):
        if freqs[i] <= freqs[i - 1]:
            raise FormatError(f"{path}:{lines[i]}: frequency does not increase")
    p, q = arr[:, 3], arr[:, 4]
    if fmt == "RI":
        s21 = p + 1j * q
    else:
        mag = p if fmt == "MA" else 10.0 ** (p / 20.0)
        s21 = mag * np.exp(1j * np.deg2rad(q))
    return S21Sweep(FrequencyGrid(freqs), s21, device_id=device_id)


def write_touchstone(path, sweep: S21Sweep, fmt: str = "RI", unit: str = "HZ") -> None:
    """Two-port export with S21 filled in and the other parameters zero."""
    fmt, unit = fmt.upper(), unit.upper()
    if fmt not in ("RI", "MA", "DB") or unit not in _TS_UNITS:
        raise ValueError("fmt must be RI/MA/DB and unit HZ/KHZ/MHZ/GHZ")
    lines = ["! S21 export", f"# {unit} S {fmt} R 50"]
    for f, v in zip(sweep.freqs, sweep.values):
        if fmt == "RI":
            a, b = v.real, v.imag
        else:
            mag = abs(v)
            a = mag if fmt == "MA" else 20 * math.log10(mag)
            b = math.degrees(math.atan2(v.imag, v.real))
        row = [float(f) / _TS_UNITS[unit], 0.0, 0.0, a, b, 0.0, 0.0, 0.0, 0.0]
        lines.append(" ".join(repr(float(x)) for x in row))
    atomic_write(path, "\n".join(lines) + "\n")


def load_any_sweep(path) -> S21Sweep:
    suffix = Path(path).suffix.lower()
    return read_touchstone(path) if suffix == ".s2p" else read_sweep(path)


# --- fit results -----------------------------------------------------------

def fit_to_dict(fit: FitResult, source: str | None = None) -> dict:
    p = fit.params
    return {
        "format": FIT_FORMAT,
        "version": 1,
        "source": source,
        "fingerprint": {"r_c": p.r_c, "c_j": p.c_j, "r_q": p.r_q},
        "c_q": p.c_q,
        "zeta": fit.zeta.zeta,
        "mse": fit.mse,
        "iterations": fit.iterations,
        "converged": fit.converged,
        "reason": fit.reason,
    }


def read_fingerprints(path) -> list[OpticFingerprint]:
    """Fingerprints from a fit file (one) or a fingerprint list file (many)."""
    data = read_json(path)
    if isinstance(data, dict) and data.get("format") == FIT_FORMAT:
        items = [data["fingerprint"]]
    elif isinstance(data, dict) and isinstance(data.get("fingerprints"), list):
        items = data["fingerprints"]
    elif isinstance(data, list):
        items = data
    else:
        raise FormatError(f"{path}: no fingerprints found")
    out = []
    for n, item in enumerate(items):
        try:
            if isinstance(item, Mapping):
                out.append(OpticFingerprint(float(item["r_c"]), float(item["c_j"]), float(item["r_q"])))
            else:
                out.append(OpticFingerprint(*(float(v) for v in item)))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}: fingerprint {n} is malformed: {exc}") from None
    return out


# --- fingerprint database --------------------------------------------------

def db_to_dict(db: FingerprintDatabase) -> dict:
    return {
        "format": DB_FORMAT,
        "version": DB_VERSION,
        "db_version": db.version,
        "kind": db.kind,
        "hyper": db.hyper,
        "tau": db.tau,
        "entries": {k: [[f.r_c, f.c_j, f.r_q] for f in v] for k, v in db.entries.items()},
        "normalizer": db.normalizer.to_dict() if db.normalizer is not None else None,
        "centroids": {k: [float(x) for x in v] for k, v in db.centroids.items()},
        "model": db.model.to_dict() if db.model is not None else None,
    }


def db_from_dict(data, path="<db>") -> FingerprintDatabase:
    """Rebuild a database without retraining. Any bad field fails the whole load."""
    _check_header(data, DB_FORMAT, path, (DB_VERSION,))
    try:
        entries = {}
        for dev_id, fps in data["entries"].items():
            if not fps:
                raise ValueError(f"device {dev_id!r} has no fingerprints")
            entries[str(dev_id)] = [OpticFingerprint(*(float(v) for v in fp)) for fp in fps]
        normalizer = Normalizer.from_dict(data["normalizer"]) if data["normalizer"] is not None else None
        model = model_from_dict(data["model"]) if data["model"] is not None else None
        centroids = {k: np.asarray(v, dtype=float) for k, v in data["centroids"].items()}
        tau = float(data["tau"])
        version = int(data["db_version"])
        kind = data["kind"]
        if kind not in KINDS:
            raise ValueError(f"unknown classifier kind {kind!r}")
        if set(centroids) != set(entries):
            raise ValueError("centroids do not match entries")
        if entries and normalizer is None:
            raise ValueError("non-empty database without normalizer")
        if len(entries) > 1 and model is None:
            raise ValueError("multi-device database without model")
        if not (math.isfinite(tau) and tau >= 0):
            raise ValueError("tau must be finite and >= 0")
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise FormatError(f"{path}: corrupted database: {exc}") from None
    return FingerprintDatabase(entries=dict(sorted(entries.items())), normalizer=normalizer, model=model, tau=tau,
                               version=version, kind=kind, hyper=dict(data.get("hyper") or {}),
                               centroids=centroids)


def write_db(path, db: FingerprintDatabase) -> None:
    write_json(path, db_to_dict(db))


def read_db(path) -> FingerprintDatabase:
    return db_from_dict(read_json(path), path)


# --- config ----------------------------------------------------------------

def _strict(section: str, data, allowed) -> dict:
    if not isinstance(data, Mapping):
        raise FormatError(f"config: {section or 'top level'} must be an object")
    for key in data:
        if key not in allowed:
            where = f"{section}.{key}" if section else key
            raise FormatError(f"config: unknown key {where!r}")
    return dict(data)


def config_from_dict(data) -> BenchConfig:
    """Build a :class:`BenchConfig`; any key not understood is an error naming it."""
    top = _strict("", data, {"format", "version", "population", "geometry", "reps", "grid", "fit",
                             "classifiers", "noise_levels_dbm", "seeds", "train_fraction",
                             "signal_power_dbm", "hyper"})
    if "format" in top and top["format"] != CONFIG_FORMAT:
        raise FormatError(f"config: format must be {CONFIG_FORMAT!r}")
    if "version" in top and top["version"] != 1:
        raise FormatError(f"config: unsupported version {top['version']!r}")
    kw = {}
    try:
        if "population" in top:
            pop = _strict("population", top["population"], {f.name for f in fields(PopulationSpec)})
            if "nominal" in pop:
                nom = _strict("population.nominal", pop["nominal"], {"r_c", "c_j", "r_q", "c_q"})
                pop["nominal"] = CircuitParams(**{k: float(v) for k, v in nom.items()})
            if isinstance(pop.get("tolerance"), list):
                pop["tolerance"] = tuple(float(v) for v in pop["tolerance"])
            kw["population"] = PopulationSpec(**pop)
        if "geometry" in top:
            geo = _strict("geometry", top["geometry"], {f.name for f in fields(GeometrySettings)})
            if "d_range" in geo:
                geo["d_range"] = tuple(float(v) for v in geo["d_range"])
            kw["geometry"] = GeometrySettings(**geo)
        if "grid" in top:
            grid = _strict("grid", top["grid"], {"f_start_hz", "f_stop_hz", "n_points"})
            kw["grid"] = FrequencyGrid.logspace(float(grid.get("f_start_hz", 100e3)),
                                                float(grid.get("f_stop_hz", 100e6)),
                                                int(grid.get("n_points", 750)))
        if "fit" in top:
            kw["fit"] = FitOptions(**_strict("fit", top["fit"], {f.name for f in fields(FitOptions)}))
        if "noise_levels_dbm" in top:
            kw["noise_levels"] = tuple(float(v) for v in top["noise_levels_dbm"])
        if "classifiers" in top:
            kw["classifiers"] = tuple(top["classifiers"])
        if "seeds" in top:
            kw["seeds"] = tuple(int(s) for s in top["seeds"])
        if "hyper" in top:
            hyper = _strict("hyper", top["hyper"], set(KINDS))
            for kind, h in hyper.items():
                _strict(f"hyper.{kind}", h, {"max_leaves", "k", "var_smoothing", "n_trees", "seed"})
            kw["hyper"] = hyper
        for key in ("reps",):
            if key in top:
                kw[key] = int(top[key])
        for key in ("train_fraction", "signal_power_dbm"):
            if key in top:
                kw[key] = float(top[key])
        return BenchConfig(**kw)
    except FormatError:
        raise
    except (TypeError, ValueError) as exc:
        raise FormatError(f"config: {exc}") from None


def config_to_dict(cfg: BenchConfig) -> dict:
    out = {"format": CONFIG_FORMAT, "version": 1, **cfg.describe()}
    return out


def read_config(path) -> BenchConfig:
    return config_from_dict(read_json(path))


# --- scenarios and transcripts ---------------------------------------------

def read_scenario(path) -> dict:
    data = read_json(path)
    _check_header(data, SCENARIO_FORMAT, path)
    return data


def write_scenario(path, events: list, **extra) -> None:
    write_json(path, {"format": SCENARIO_FORMAT, "version": 1, "events": events, **extra})


def transcript_to_dict(messages: list[AuthMessage]) -> dict:
    return {"format": TRANSCRIPT_FORMAT, "version": 1, "messages": [m.to_dict() for m in messages]}


def write_transcript(path, messages: list[AuthMessage]) -> None:
    write_json(path, transcript_to_dict(messages))


# --- bench reports ---------------------------------------------------------

_SERIES_COLUMNS = {
    "fig5_fit_overlay": ("device_id", "position", "freq_hz", "measured_db", "fitted_db"),
    "fig6_parameters": ("device_id", "position", "r_c", "c_j", "r_q", "c_q", "zeta", "mse"),
    "fig7_accuracy": ("classifier", "representation", "mean", "std"),
    "fig8_noise": ("classifier", "representation", "noise_dbm", "mean", "std"),
}


def write_report(out_dir, report: BenchReport, emit_plot_data: bool = False) -> list[Path]:
    """``report.json`` (body), ``runtime.json``, ``summary.txt`` and ``accuracy.csv``.

    ``accuracy.csv`` has one row per (classifier, representation, level);
    clean rows carry an empty ``noise_dbm``.
    """
    out = Path(out_dir)
    written = []

    def emit(name, writer, *args):
        writer(out / name, *args)
        written.append(out / name)

    emit("report.json", lambda p: atomic_write(p, report.body_json() + "\n"))
    emit("runtime.json", write_json, report.runtime_s)
    emit("summary.txt", atomic_write, report.table())
    rows = [(c["classifier"], c["representation"], c["noise_dbm"], c["mean"], c["std"], len(c["per_seed"]))
            for c in report.reference_cells + report.cells]
    emit("accuracy.csv", write_csv, ("classifier", "representation", "noise_dbm", "mean", "std", "n_seeds"), rows)
    if emit_plot_data:
        for name, cols in _SERIES_COLUMNS.items():
            if name in report.series:
                emit(f"{name}.csv", write_csv, cols, ([row[c] for c in cols] for row in report.series[name]))
    return written


# --- synthetic dataset manifests -------------------------------------------

def manifest_dict(devices, geometries, files, cfg: BenchConfig, seed: int) -> dict:
    return {
        "format": MANIFEST_FORMAT,
        "version": 1,
        "seed": seed,
        "devices": [{"device_id": d.device_id, "r_c": d.true_params.r_c, "c_j": d.true_params.c_j,
                     "r_q": d.true_params.r_q, "c_q": d.true_params.c_q} for d in devices],
        "geometries": [{k: getattr(g, k) for k in _GEOMETRY_KEYS} for g in geometries],
        "sweeps": files,
        "config": cfg.describe(),
    }


def read_manifest(path) -> dict:
    data = read_json(path)
    _check_header(data, MANIFEST_FORMAT, path)
    return data
