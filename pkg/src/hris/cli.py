"""Command-line entry point: ``hris run | design-codebook | inspect-codebook | probe-demo``."""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .codebook import METHODS, beam_gain, design_codebook, load_codebook, save_codebook
from .experiment import (ExperimentConfig, export_results, generate_scenario, probing_codebook,
                         run_experiment, trial_rng)
from .geometry import Scenario, build_channels
from .protocol import DetectionError, ProtocolParams, TraceLog, find_peaks, probe_sweep

log = logging.getLogger("hris")


def _writer(path):
    fh = sys.stdout if path in (None, "-") else open(path, "w", newline="")
    return fh, csv.writer(fh, lineterminator="\n")


def cmd_run(args) -> int:
    config = ExperimentConfig.from_yaml(args.config)
    overrides = {k: v for k, v in (("n_trials", args.trials), ("seed", args.seed),
                                   ("workers", args.workers)) if v is not None}
    if overrides:
        config = replace(config, **overrides)
    table = run_experiment(config)
    out = Path(args.output) if args.output else Path(config.output_dir) / "summary.csv"
    summary, trials = export_results(table, out)
    for r in table.rows:
        print(f"{config.sweep_variable}={r['sweep_value']:<6} {r['method']:<14} "
              f"{r['mean_sum_rate']:8.3f} +/- {r['stderr']:.3f}  (n={r['n_trials']})")
    print(f"wrote {summary} and {trials}")
    return 0


def _scenario_from_args(args) -> Scenario:
    return Scenario(Nx=args.Nx, Nz=args.Nz, fc=args.fc, area_side=args.area, ue_height=args.u_z)


def cmd_design(args) -> int:
    scenario = _scenario_from_args(args)
    book = design_codebook(scenario, args.L, args.method, args.epsilon, args.Q,
                           grid_density=args.grid_density, n_randomizations=args.randomizations,
                           seed=args.seed)
    save_codebook(book, args.output)
    n_bad = sum(not f for f in book.feasible)
    print(f"wrote {book.L} codewords (N={book.N}, method={book.method}) to {args.output}")
    if n_bad:
        print(f"warning: {n_bad} codewords exceed the leakage bound", file=sys.stderr)
    return 0


def cmd_inspect(args) -> int:
    book = load_codebook(args.codebook)
    nx = book.N // args.Nz
    scenario = Scenario(Nx=nx, Nz=args.Nz, fc=args.fc)
    if scenario.N != book.N:
        raise ValueError(f"codebook has N={book.N}, not a multiple of Nz={args.Nz}")
    phi = np.linspace(0.0, np.pi, args.points)
    gains = np.array([beam_gain(c, phi, scenario, book.design_elevation) for c in book.codewords])
    fh, w = _writer(args.output)
    try:
        w.writerow(["phi"] + [f"c{i}" for i in book.indices])
        for j, p in enumerate(phi):
            w.writerow([repr(float(p))] + [repr(float(g)) for g in gains[:, j]])
    finally:
        if fh is not sys.stdout:
            fh.close()
    return 0


def cmd_probe_demo(args) -> int:
    config = ExperimentConfig.from_yaml(args.config) if args.config else ExperimentConfig()
    if args.K is not None:
        config = replace(config, K=args.K)
    Q = args.Q
    scenario, links = generate_scenario(config, trial_rng(args.seed, args.trial))
    channels = build_channels(scenario, links)
    book = probing_codebook(config, Q)
    params = ProtocolParams(quantization_bits=Q, kappa=config.kappa,
                            local_maxima_only=config.local_maxima_only,
                            wrap_sectors=config.wrap_sectors)
    trace = TraceLog()
    bs = probe_sweep(book, channels, "bs", scenario, params=params, trace=trace, trial_id=args.trial)
    ue = probe_sweep(book, channels, "ue", scenario, params=params, trace=trace, trial_id=args.trial)
    fh, w = _writer(args.output)
    try:
        w.writerow(["codeword", "phi_lo", "phi_hi", "rho_bs", "rho_ue"])
        for i, sector, rb, ru in zip(book.indices, book.sectors, bs.rho, ue.rho):
            w.writerow([i, repr(float(sector[0])), repr(float(sector[1])), repr(float(rb)),
                        repr(float(ru))])
    finally:
        if fh is not sys.stdout:
            fh.close()
    if args.trace:
        trace.write(args.trace)
    for name, prof in (("BS", bs), ("UE", ue)):
        peaks = find_peaks(prof, params)
        print(f"{name} peaks: {list(peaks.indices)} (tau={peaks.threshold_used:.3e} W)",
              file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hris", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a Monte Carlo experiment from a YAML config")
    r.add_argument("config")
    r.add_argument("-o", "--output", help="summary CSV (default <output_dir>/summary.csv)")
    r.add_argument("--trials", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--workers", type=int)
    r.set_defaults(func=cmd_run)

    def geometry(sp):
        sp.add_argument("--Nx", type=int, default=8)
        sp.add_argument("--Nz", type=int, default=4)
        sp.add_argument("--fc", type=float, default=28e9)
        sp.add_argument("--area", type=float, default=50.0, help="area side in meters")
        sp.add_argument("--u-z", dest="u_z", type=float, default=1.5, help="UE height")

    d = sub.add_parser("design-codebook", help="design a probing codebook and save it")
    geometry(d)
    d.add_argument("-o", "--output", required=True)
    d.add_argument("--L", type=int, default=32)
    d.add_argument("--method", default="max-min-discretized",
                   choices=[m for m in METHODS if m != "hybrid"])
    d.add_argument("--epsilon", type=float, help="leakage bound in gain units (default 0.1 N)")
    d.add_argument("--Q", type=int, help="phase bits (default: continuous)")
    d.add_argument("--grid-density", type=int, default=16)
    d.add_argument("--randomizations", type=int, default=100)
    d.add_argument("--seed", type=int, default=0)
    d.set_defaults(func=cmd_design)

    i = sub.add_parser("inspect-codebook", help="beampattern table of a codebook file")
    i.add_argument("codebook")
    i.add_argument("--Nz", type=int, default=4)
    i.add_argument("--fc", type=float, default=28e9)
    i.add_argument("--points", type=int, default=721)
    i.add_argument("-o", "--output", help="CSV path (default stdout)")
    i.set_defaults(func=cmd_inspect)

    pd = sub.add_parser("probe-demo", help="power profiles of one trial's probing sweeps")
    pd.add_argument("--config")
    pd.add_argument("--seed", type=int, default=0)
    pd.add_argument("--trial", type=int, default=0)
    pd.add_argument("--K", type=int)
    pd.add_argument("--Q", type=int)
    pd.add_argument("--trace", help="also write a per-activation trace log")
    pd.add_argument("-o", "--output", help="CSV path (default stdout)")
    pd.set_defaults(func=cmd_probe_demo)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError, RuntimeError, DetectionError) as exc:
        print(f"hris: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
