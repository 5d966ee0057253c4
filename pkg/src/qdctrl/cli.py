"""Command-line entry points.

    qdctrl simulate --config cfg.json --out results/
    qdctrl example1 --out results/
    qdctrl example2 --out results/
    qdctrl stp-surface --out results/
    qdctrl oscillate --out results/ --phi1 0.5
    qdctrl sigma-check --config cfg.json
    qdctrl verify --out results/

Exit code 0 on success, 2 when a validation step aborts the run.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .controller import (
    ControlModel,
    build_R_mixture,
    sigma_weights,
    solve_sigma,
    stochasticity_check,
    validate_sigma,
)
from .experiments import (
    ExperimentConfig,
    ValidationAbort,
    example1_config,
    example2_config,
    emit,
    oscillation_config,
    run_oscillation,
    run_stp_surface,
    run_sweep,
    run_verify,
    stp_config,
    trajectory_columns,
    _resolve_target,
)

STP_COLUMNS = ["phi1", "phi3", "p_e1", "p_e2", "p_gamma", "violated"]


def _load_config(path: str) -> ExperimentConfig:
    try:
        return ExperimentConfig.from_json(path)
    except (OSError, ValueError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        raise SystemExit(2)


def _write_run_header(config: ExperimentConfig, out: Path, fmt: str) -> None:
    header = {
        "qdctrl_version": __version__,
        "config": dataclasses.asdict(config),
        "drift_tolerance": config.drift_tolerance(),
        "format": fmt,
    }
    (out / "run.json").write_text(json.dumps(header, indent=2, default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj)}")


def _run_trajectories(config: ExperimentConfig, out: Path, workers: int, fmt: str) -> int:
    out.mkdir(parents=True, exist_ok=True)
    try:
        rows = run_sweep(config, workers=workers)
    except ValidationAbort as exc:
        print(f"validation abort: {exc}", file=sys.stderr)
        return 2
    suffix = "csv" if fmt == "csv" else "json"
    emit(
        [r.to_dict() for r in rows],
        trajectory_columns(config.m),
        out / f"trajectory.{suffix}",
        fmt,
    )
    _write_run_header(config, out, fmt)
    print(f"wrote {out / f'trajectory.{suffix}'} ({len(rows)} rows)")
    return 0


def _cmd_simulate(args) -> int:
    config = _load_config(args.config)
    if args.seed is not None:
        config = dataclasses.replace(config, seeds=(args.seed,))
    if args.substep:
        config = dataclasses.replace(config, substep=True)
    return _run_trajectories(config, Path(args.out), args.workers, args.format)


def _cmd_example(which: int, args) -> int:
    config = example1_config() if which == 1 else example2_config()
    if args.seed is not None:
        config = dataclasses.replace(config, seeds=(args.seed,))
    return _run_trajectories(config, Path(args.out), args.workers, args.format)


def _cmd_stp(args) -> int:
    config = _load_config(args.config) if args.config else stp_config()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = run_stp_surface(config)
    emit(rows, STP_COLUMNS, out / "stp.csv", "csv")
    violated = sum(r["violated"] for r in rows)
    print(f"wrote {out / 'stp.csv'} ({len(rows)} rows, {violated} violations)")
    return 0


def _cmd_oscillate(args) -> int:
    config = _load_config(args.config) if args.config else oscillation_config()
    if args.phi1 is not None:
        config = dataclasses.replace(config, phi1=args.phi1)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = run_oscillation(config)
    columns = ["time"] + [f"p_a{a}" for a in range(config.m)]
    emit(rows, columns, out / "oscillation.csv", "csv")
    print(f"wrote {out / 'oscillation.csv'} ({len(rows)} rows)")
    return 0


def _cmd_sigma_check(args) -> int:
    config = _load_config(args.config)
    seed = config.seeds[0]
    params = config.model_params(seed)
    nature = config.nature_model()
    model = ControlModel(params, nature.prior.copy(), config.t_distribution())
    n_bar = _resolve_target(config, nature.prior, params)
    try:
        r = build_R_mixture(params, model.alpha, model.tdist)
        check = stochasticity_check(r)
        print(f"P row-sum deviation: {check['row_sum_max_dev']:.3e}")
        print(f"P min entry:         {check['min_entry']:.3e}")
        weights = solve_sigma(r, n_bar)
        resid = float(np.abs(r.mat @ weights.sigma).max())  # lambda ~ R sigma
        print(f"sigma[{n_bar}] = 0, min off-target sigma: "
              f"{min(s for i, s in enumerate(weights.sigma) if i != n_bar):.6g}")
        print(f"epsilon: {weights.epsilon:.6g}")
        validation = validate_sigma(model, weights, grid_points=41)
        print(f"classifications: {validation.classifications}")
        if not validation.passed:
            print("sigma validation FAILED", file=sys.stderr)
            return 2
        print("sigma validation passed")
        return 0
    except ValueError as exc:
        print(f"sigma construction failed: {exc}", file=sys.stderr)
        return 2


def _cmd_verify(args) -> int:
    config = _load_config(args.config) if args.config else example1_config(seeds=(0,))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        report = run_verify(config)
    except ValidationAbort as exc:
        print(f"validation abort: {exc}", file=sys.stderr)
        return 2
    (out / "verify.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    for name in ("halving", "random-walk", "decision-loop"):
        print(f"{name}: {'pass' if report[name]['passed'] else 'fail'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qdctrl", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, config_required=True):
        if config_required:
            p.add_argument("--config", required=True, help="experiment config JSON")
        else:
            p.add_argument("--config", default=None, help="experiment config JSON")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="run a single seed")
        p.add_argument("--workers", type=int, default=1, help="parallel seed workers")
        p.add_argument("--substep", action="store_true",
                       help="compose T single-step channels instead of one T-step")
        p.add_argument("--format", choices=("csv", "json"), default="csv")

    p = sub.add_parser("simulate", help="closed-loop runs from a config file")
    add_common(p, config_required=True)

    for which in (1, 2):
        p = sub.add_parser(f"example{which}", help=f"built-in example {which} config")
        add_common(p, config_required=False)

    p = sub.add_parser("stp-surface", help="total-probability violation sweep")
    p.add_argument("--config", default=None)
    p.add_argument("--out", default="out")

    p = sub.add_parser("oscillate", help="uncontrolled preference oscillation")
    p.add_argument("--config", default=None)
    p.add_argument("--out", default="out")
    p.add_argument("--phi1", type=float, default=None)

    p = sub.add_parser("sigma-check", help="build and validate sigma weights")
    p.add_argument("--config", required=True)

    p = sub.add_parser("verify", help="stochastic Lyapunov verifier reports")
    p.add_argument("--config", default=None)
    p.add_argument("--out", default="out")

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "simulate":
        return _cmd_simulate(args)
    if args.command == "example1":
        return _cmd_example(1, args)
    if args.command == "example2":
        return _cmd_example(2, args)
    if args.command == "stp-surface":
        return _cmd_stp(args)
    if args.command == "oscillate":
        return _cmd_oscillate(args)
    if args.command == "sigma-check":
        return _cmd_sigma_check(args)
    if args.command == "verify":
        return _cmd_verify(args)
    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
