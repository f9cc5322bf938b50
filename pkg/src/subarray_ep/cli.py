"""Command line interface: ``simulate``, ``evolve``, ``complexity`` and ``trace``."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import analysis
from .detector import detect, write_trace
from .harness import ConfigError, RunSpec, load_config, run_sweep, write_csv
from .model import gen_channel, transmit, trial_seed
from .partition import partition_uniform, trim


class UsageError(Exception):
    pass


def _open_out(path):
    return sys.stdout if path in (None, "-") else Path(path).open("w", newline="")


def _spec_from_args(args) -> RunSpec:
    if args.config is not None:
        if not Path(args.config).is_file():
            raise UsageError(f"config file not found: {args.config}")
        spec = load_config(args.config)
    else:
        spec = RunSpec()
    overrides = {
        "n": args.n,
        "k": args.k,
        "qam": args.qam,
        "channel": args.channel,
        "kappa": args.kappa,
        "mode": args.mode,
        "iters": args.iters,
        "trim_threshold": args.trim,
        "secondary_size": args.secondary,
    }
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if args.nc is not None:
        overrides["subarray_sizes"] = (args.nc,)
    if args.snr is not None:
        overrides["snr_db_list"] = (args.snr,)
    if args.seed is not None:
        overrides["seed"] = args.seed
    return replace(spec, **overrides)


def cmd_simulate(args) -> int:
    if not Path(args.config).is_file():
        raise UsageError(f"config file not found: {args.config}")
    spec = load_config(args.config)
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    rows = run_sweep(spec, workers=args.threads)
    with _open_out(args.out) as f:
        write_csv(rows, f)
    return 0


def cmd_evolve(args) -> int:
    spec = _spec_from_args(args)
    nc, snr = spec.subarray_sizes[0], spec.snr_db_list[0]
    noise_var = spec.noise_var(snr)
    system = spec.system_config(noise_var)
    h = gen_channel(system, trial_seed(spec.seed, 0, 0)).h
    spectra = analysis.eigen_spectra(h, partition_uniform(spec.n, nc))
    state = analysis.evolve(spectra, noise_var, system.constellation, spec.iters)
    with _open_out(args.out) as f:
        analysis.write_evolution_csv(state, f)
    return 0


def cmd_complexity(args) -> int:
    n_c = args.nc if args.nc is not None else args.n
    if n_c is None:
        raise UsageError("complexity needs --n or --nc")
    rep = analysis.complexity_count(args.scenario, n_c=n_c, k=args.k, t=args.t, qam_order=args.qam, c=args.c, k_c=args.kc)
    print(f"scenario={rep.scenario}")
    print(f"Mult={rep.mults}")
    print(f"Exp={rep.exps}")
    print(f"Trans={rep.trans}")
    print(f"LPM Mult={rep.mults_lpm} Exp={rep.exps_lpm} Trans={rep.trans_lpm}")
    print(f"CPM Mult={rep.mults_cpm} Exp={rep.exps_cpm} Trans={rep.trans_cpm}")
    return 0


def cmd_trace(args) -> int:
    spec = _spec_from_args(args)
    nc, snr = spec.subarray_sizes[0], spec.snr_db_list[0]
    noise_var = spec.noise_var(snr)
    system = spec.system_config(noise_var)
    h = gen_channel(system, trial_seed(spec.seed, 0, 0)).h
    tx = transmit(h, system.constellation, noise_var, trial_seed(spec.seed, 0, 1))
    part = partition_uniform(spec.n, nc)
    if spec.trim_threshold is not None and spec.mode in ("trimmed", "oneshot", "local_ep"):
        part = trim(h, part, spec.trim_threshold)
    out = detect(tx.y, h, part, spec.detector_config(workers=args.threads), system.constellation, noise_var, tx.x)
    with _open_out(args.out) as f:
        write_trace(out.trace, f)
    return 0


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="base seed")
    p.add_argument("--out", default=None, help="output CSV path (default stdout)")
    p.add_argument("--threads", type=int, default=1, help="worker threads")


def _add_system(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="key=value config file supplying defaults")
    p.add_argument("--n", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--qam", type=int)
    p.add_argument("--channel", choices=("iid", "corr", "nonstat"))
    p.add_argument("--kappa", type=float)
    p.add_argument("--nc", type=int, help="subarray size")
    p.add_argument("--snr", type=float, help="SNR in dB")
    p.add_argument("--iters", type=int)
    p.add_argument("--mode", choices=("full", "trimmed", "hier", "oneshot", "local_ep"))
    p.add_argument("--trim", type=float, help="trimming power threshold")
    p.add_argument("--secondary", type=int, help="secondary subarray size")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="subarray-ep", description="Subarray EP MIMO detector simulations")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="Monte Carlo sweep from a config file")
    p.add_argument("config", help="key=value config file")
    _add_common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("evolve", help="state-evolution trajectory for one channel draw")
    _add_system(p)
    _add_common(p)
    p.set_defaults(func=cmd_evolve)

    p = sub.add_parser("complexity", help="operation counts")
    p.add_argument("--scenario", required=True, choices=analysis.SCENARIOS)
    p.add_argument("--n", type=int, help="antennas (centralized) or subarray size")
    p.add_argument("--nc", type=int, help="subarray size")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--kc", type=int, default=None)
    p.add_argument("--c", type=int, default=1)
    p.add_argument("--t", type=int, required=True)
    p.add_argument("--qam", type=int, required=True)
    p.set_defaults(func=cmd_complexity)

    p = sub.add_parser("trace", help="per-iteration trace of one realization")
    _add_system(p)
    _add_common(p)
    p.set_defaults(func=cmd_trace)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else 0
    try:
        return args.func(args)
    except (UsageError, ConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
