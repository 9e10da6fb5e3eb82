"""Command-line entry point: ``vlc-fingerprint <subcommand> ...``."""
from __future__ import annotations

import argparse
import logging
import sys
from collections import defaultdict
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import fileio
from .authproto import FingerprintDatabase, InsufficientSamples, MalformedFingerprint, ScenarioError, register, run_scenario, verify
from .bench import BenchConfig, SeedAborted, run_accuracy_bench, run_noise_bench
from .circuit import DomainError
from .classify import KINDS
from .extract import FitError, fit_sweep
from .synth import add_noise, sample_geometries, sample_population, simulate_dataset

log = logging.getLogger("vlc_fingerprint")

FINGERPRINT_SET_FORMAT = "vlc-fingerprint-set"


class CliError(Exception):
    pass


def _config(args) -> BenchConfig:
    cfg = fileio.read_config(args.config) if args.config else BenchConfig()
    if args.seed is not None:
        cfg = replace(cfg, seeds=(args.seed,))
    return cfg


def _need(args, *names):
    for name in names:
        if getattr(args, name) is None:
            raise CliError(f"--{name.replace('_', '-')} is required for {args.command}")


# --- subcommands -----------------------------------------------------------

def cmd_synth(args) -> int:
    _need(args, "out")
    cfg = _config(args)
    seed = cfg.seeds[0]
    out = Path(args.out)
    g = cfg.geometry
    devices = sample_population(cfg.population)
    geoms = sample_geometries(g.n_positions, g.d_range, g.angle_max, phi_half=g.phi_half,
                              a_r=g.a_r, g_psi=g.g_psi, seed=seed)
    data = simulate_dataset(devices, geoms, cfg.reps, cfg.grid, cfg.population.intra_device_jitter,
                            seed, g.electronics_gain)
    files = []
    rep_counter = defaultdict(int)
    for i, sweep in enumerate(data.sweeps):
        pos = data.positions[i]
        rep = rep_counter[(sweep.device_id, pos)]
        rep_counter[(sweep.device_id, pos)] += 1
        if args.noise_dbm is not None:
            sweep = add_noise(sweep, args.noise_dbm, cfg.signal_power_dbm, seed=np.random.SeedSequence(seed, spawn_key=(6, i)))
        name = f"sweeps/{sweep.device_id}_p{pos:02d}_r{rep:02d}.csv"
        fileio.write_sweep(out / name, sweep)
        files.append({"file": name, "device_id": sweep.device_id, "position": pos, "rep": rep})
    fileio.write_json(out / "manifest.json", fileio.manifest_dict(devices, geoms, files, cfg, seed))
    print(f"wrote {len(files)} sweeps and manifest.json to {out}")
    return 0


def _sweep_inputs(paths):
    """Expand manifests and directories into (path, device_id) pairs."""
    items = []
    for p in map(Path, paths):
        if p.is_dir():
            if (p / "manifest.json").exists():
                p = p / "manifest.json"
            else:
                items.extend((f, None) for f in sorted(p.glob("*.csv")) + sorted(p.glob("*.s2p")))
                continue
        if p.suffix == ".json":
            manifest = fileio.read_manifest(p)
            items.extend((p.parent / s["file"], s["device_id"]) for s in manifest["sweeps"])
        else:
            items.append((p, None))
    if not items:
        raise CliError("no sweep files found")
    return items


def cmd_extract(args) -> int:
    _need(args, "inputs", "out")
    cfg = _config(args)
    items = _sweep_inputs(args.inputs)
    single = len(items) == 1 and len(args.inputs) == 1 and Path(args.inputs[0]).is_file() \
        and Path(args.inputs[0]).suffix != ".json"
    records = []
    for path, dev in items:
        sweep = fileio.load_any_sweep(path)
        fit = fit_sweep(sweep, cfg.fit)
        rec = fileio.fit_to_dict(fit, str(path))
        rec["device_id"] = dev or sweep.device_id
        records.append(rec)
    if single:
        fileio.write_json(args.out, records[0])
        r = records[0]
        print(f"mse={r['mse']:.3e} converged={r['converged']} ({r['reason']})")
        return 0
    fps = []
    for r in records:
        if not r["converged"]:
            log.warning("skipping unconverged fit of %s (%s)", r["source"], r["reason"])
            continue
        fps.append({"device_id": r["device_id"], **r["fingerprint"], "mse": r["mse"], "source": r["source"]})
    fileio.write_json(args.out, {"format": FINGERPRINT_SET_FORMAT, "version": 1, "fingerprints": fps})
    print(f"extracted {len(fps)} of {len(records)} fingerprints")
    return 0


def _grouped_fingerprints(path) -> dict:
    data = fileio.read_json(path)
    if not (isinstance(data, dict) and data.get("format") == FINGERPRINT_SET_FORMAT):
        raise CliError(f"{path}: expected a {FINGERPRINT_SET_FORMAT} file (from extract)")
    fps = fileio.read_fingerprints(path)
    groups = defaultdict(list)
    for item, fp in zip(data["fingerprints"], fps):
        if not item.get("device_id"):
            raise CliError(f"{path}: every fingerprint needs a device_id to train")
        groups[item["device_id"]].append(fp)
    return dict(groups)


def cmd_train(args) -> int:
    _need(args, "inputs", "out")
    groups = {}
    for path in args.inputs:
        for dev, fps in _grouped_fingerprints(path).items():
            groups.setdefault(dev, []).extend(fps)
    hyper = {"seed": args.seed} if args.seed is not None else {}
    db = FingerprintDatabase.build(groups, kind=args.classifier, hyper=hyper)
    fileio.write_db(args.out, db)
    print(f"trained {args.classifier} on {sum(map(len, groups.values()))} fingerprints "
          f"from {len(groups)} devices; tau={db.tau:.4g}")
    return 0


def cmd_verify(args) -> int:
    _need(args, "db", "inputs", "claim")
    db = fileio.read_db(args.db)
    verdicts = [verify(db, fp, args.claim).to_dict()
                for path in args.inputs for fp in fileio.read_fingerprints(path)]
    text = fileio.dump_json({"claimed_id": args.claim, "verdicts": verdicts})
    if args.out:
        fileio.atomic_write(args.out, text)
    for v in verdicts:
        print(f"{'ACCEPT' if v['accepted'] else 'REJECT'} claimed={args.claim} matched={v['matched_id']} "
              f"distance={v['distance']:.4g} reason={v['reason']}")
    return 0


def cmd_register(args) -> int:
    _need(args, "db", "inputs", "id")
    db = fileio.read_db(args.db)
    fps = [fp for path in args.inputs for fp in fileio.read_fingerprints(path)]
    result = register(db, args.id, fps)
    if result.accepted:
        fileio.write_db(args.out or args.db, db)
    print(f"{'registered' if result.accepted else 'rejected'} {args.id}: {result.reason} (version {result.version})")
    return 0 if result.accepted else 1


def _bench(args, runner) -> int:
    _need(args, "out")
    cfg = _config(args)
    report = runner(cfg)
    fileio.write_report(args.out, report, args.emit_plot_data)
    sys.stdout.write(report.table())
    return 0


def cmd_auth_sim(args) -> int:
    _need(args, "db", "scenario", "out")
    db = fileio.read_db(args.db)
    scenario = fileio.read_scenario(args.scenario)
    transcript = run_scenario(db, scenario)
    fileio.write_transcript(args.out, transcript)
    if args.db_out:
        fileio.write_db(args.db_out, db)
    for m in transcript:
        print(f"{m.time:.6f} {m.sender}->{m.receiver} {m.kind}")
    return 0


# --- argument parsing ------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="override the seed (bench: run this single seed)")
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--out", help="output file or directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="vlc-fingerprint", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("synth", parents=[common], help="simulate a sweep dataset")
    p.add_argument("--noise-dbm", type=float, help="superimpose noise at this power")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", parents=[common], help="fit sweeps and write fingerprints")
    p.add_argument("--in", dest="inputs", nargs="+", help="sweep CSV/.s2p files, directories or manifests")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", parents=[common], help="build a fingerprint database")
    p.add_argument("--in", dest="inputs", nargs="+", help="fingerprint set files from extract")
    p.add_argument("--classifier", choices=KINDS, default="fine-knn")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("verify", parents=[common], help="check fingerprints against a claimed id")
    p.add_argument("--db", help="fingerprint database")
    p.add_argument("--in", dest="inputs", nargs="+", help="fit or fingerprint set files")
    p.add_argument("--claim", help="claimed device id")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("register", parents=[common], help="add a new device to a database")
    p.add_argument("--db", help="fingerprint database (rewritten unless --out is given)")
    p.add_argument("--in", dest="inputs", nargs="+", help="fit or fingerprint set files")
    p.add_argument("--id", help="new device id")
    p.set_defaults(func=cmd_register)

    for name, runner, text in (("bench-accuracy", run_accuracy_bench, "clean identification accuracy"),
                               ("bench-noise", run_noise_bench, "accuracy versus noise power")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--emit-plot-data", action="store_true", help="also write per-figure CSV series")
        p.set_defaults(func=lambda a, r=runner: _bench(a, r))

    p = sub.add_parser("auth-sim", parents=[common], help="run a protocol scenario")
    p.add_argument("--db", help="fingerprint database")
    p.add_argument("--scenario", help="scenario JSON")
    p.add_argument("--db-out", help="where to save the database after registrations")
    p.set_defaults(func=cmd_auth_sim)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CliError, fileio.FormatError, FitError, DomainError, InsufficientSamples, MalformedFingerprint,
            ScenarioError, SeedAborted, ValueError, OSError, KeyError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"vlc-fingerprint {args.command}: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
