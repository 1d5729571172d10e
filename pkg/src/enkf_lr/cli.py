"""Command-line entry point.

Subcommands:

* ``synth``      generate an analytic truth and write it as an SNP1 file
* ``assimilate`` run one configured twin experiment
* ``sweep``      run every config in a directory, aggregate one CSV table
* ``metrics``    recompute error metrics from two SNP1 files

Failures exit nonzero after printing a one-line JSON error object to stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .experiment import load_config, run_experiment, run_sweep
from .metrics import mae, rrmse
from .snapshots import FieldMeta
from .snp_io import read_snapshot_file, write_snapshot_file
from .synth import TruthSpec, generate_truth


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="enkf-lr",
        description="Ensemble Kalman assimilation on downsampled fields "
        "with SVD-based super-resolution",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="generate a synthetic truth as SNP1")
    synth.add_argument("--kind", required=True,
                       choices=("traveling_wave", "oscillating_wake"))
    synth.add_argument("--n-comp", type=int, default=1)
    synth.add_argument("--nx", type=int, required=True)
    synth.add_argument("--ny", type=int, required=True)
    synth.add_argument("--nz", type=int, default=1)
    synth.add_argument("--nt", type=int, required=True)
    synth.add_argument("--dt", type=float, default=0.2)
    synth.add_argument("--amplitude", type=float, default=1.0)
    synth.add_argument("--wavelength", type=float, default=16.0)
    synth.add_argument("--period", type=float, default=5.0)
    synth.add_argument("--convection-speed", type=float, default=None)
    synth.add_argument("--output", required=True, help="SNP1 file to write")

    assim = sub.add_parser("assimilate", help="run one twin experiment")
    assim.add_argument("--config", required=True, help="TOML experiment config")
    assim.add_argument("--seed", type=int, default=None, help="override the RNG seed")
    assim.add_argument("--mode", choices=("hr", "lr"), default=None,
                       help="override the configured mode")
    assim.add_argument("--output", default=None, help="override the output directory")

    sweep = sub.add_parser("sweep", help="run every *.toml config in a directory")
    sweep.add_argument("--config-dir", required=True)
    sweep.add_argument("--output", required=True, help="aggregated CSV path")

    met = sub.add_parser("metrics", help="recompute metrics from two SNP1 files")
    met.add_argument("reference", help="reference SNP1 file")
    met.add_argument("reconstruction", help="reconstruction SNP1 file")

    return parser


def _cmd_synth(args) -> int:
    meta = FieldMeta(
        n_comp=args.n_comp, n_x=args.nx, n_y=args.ny,
        n_t=args.nt, dt=args.dt, n_z=args.nz,
    )
    spec = TruthSpec(
        kind=args.kind,
        meta=meta,
        amplitude=args.amplitude,
        wavelength=args.wavelength,
        period=args.period,
        convection_speed=args.convection_speed,
    )
    write_snapshot_file(args.output, generate_truth(spec))
    print(f"wrote {args.output} ({meta.J} x {meta.n_t})")
    return 0


def _cmd_assimilate(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config.enkf = dataclasses.replace(config.enkf, seed=args.seed)
    if args.mode is not None:
        overrides = {"mode": args.mode}
        if args.mode == "hr":
            overrides["ub_compression"] = 1.0
        config = dataclasses.replace(config, **overrides)
    if args.output is not None:
        config.output_dir = Path(args.output)
    report = run_experiment(config)
    print(report.to_csv(), end="")
    return 0


def _cmd_sweep(args) -> int:
    config_dir = Path(args.config_dir)
    paths = sorted(config_dir.glob("*.toml"))
    if not paths:
        raise ValueError(f"no *.toml configs found in {config_dir}")
    configs = [load_config(p) for p in paths]
    table = run_sweep(configs, output_path=args.output)
    print(table, end="")
    return 0


def _cmd_metrics(args) -> int:
    reference = read_snapshot_file(args.reference)
    reconstruction = read_snapshot_file(args.reconstruction)
    mae_val = mae(reference.data, reconstruction.data)
    sigma_t = float(reference.data.std())
    out = {
        "rrmse": rrmse(reference.data, reconstruction.data),
        "mae": mae_val,
        "mae_pct": 100.0 * mae_val / sigma_t if sigma_t > 0 else None,
    }
    print(json.dumps(out, indent=2))
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "assimilate": _cmd_assimilate,
    "sweep": _cmd_sweep,
    "metrics": _cmd_metrics,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except Exception as exc:  # noqa: BLE001 - uniform machine-readable failure
        payload = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(payload), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
