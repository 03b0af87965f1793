"""Command-line interface.

Subcommands:
  run       full Monte Carlo experiment, results written as CSV/JSON tables
  codebook  export a pilot codebook to a text file
  single    one verbose trial with a per-round trace
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .beamcontrol import build_codebook, export_codebook
from .channel import make_bs_ris_channel, make_channel, sample_user
from .estimator import SearchGrid
from .geometry import DirectionParams
from .harness import (
    ConfigError,
    ExperimentConfig,
    ExperimentInterrupted,
    derive_seed,
    emit_results,
    run_experiment,
)
from .metrics import capacity_bound
from .protocol import Scenario, run_adaptive_estimation, run_passive_baseline


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", metavar="PATH", help="JSON experiment config file")
    parser.add_argument("--seed", type=int, metavar="U64", help="override base seed")
    parser.add_argument("--trials", type=int, metavar="N", help="override trial count")
    parser.add_argument("--out", metavar="DIR", help="override output directory")
    parser.add_argument("--format", choices=("csv", "json"), help="output format")
    parser.add_argument("--regime", choices=("near", "far", "both"),
                        help="user placement regime(s)")
    parser.add_argument("--mode", choices=("active", "passive", "both"),
                        help="surface mode(s)")
    parser.add_argument("--workers", type=int, metavar="N", help="parallel workers")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="arisce",
        description="Active-RIS parametric channel estimation experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the full experiment")
    _add_common(p_run)

    p_cb = sub.add_parser("codebook", help="export the pilot codebook")
    _add_common(p_cb)
    p_cb.add_argument("--codebook-regime", choices=("near", "far"), default="far",
                      help="codebook flavor to export")

    p_single = sub.add_parser("single", help="trace one trial round by round")
    _add_common(p_single)
    p_single.add_argument("--model", choices=("near-field", "far-field"),
                          default="near-field", help="estimator model")
    p_single.add_argument("--pilots", type=int, default=10, help="pilot budget")
    p_single.add_argument("--trial", type=int, default=0, help="trial index for seeding")
    return parser


def load_config(args) -> ExperimentConfig:
    data = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise ConfigError("<root>", "config file must hold a JSON object")
    config = ExperimentConfig.from_dict(data)
    updates = {}
    if args.seed is not None:
        updates["base_seed"] = args.seed
    if args.trials is not None:
        updates["trials"] = args.trials
    if args.out is not None:
        updates["output_dir"] = args.out
    if args.format is not None:
        updates["output_format"] = args.format
    if args.workers is not None:
        updates["workers"] = args.workers
    if args.regime is not None:
        updates["regimes"] = ("near", "far") if args.regime == "both" else (args.regime,)
    if args.mode is not None:
        updates["modes"] = ("active", "passive") if args.mode == "both" else (args.mode,)
    if updates:
        merged = config.to_dict()
        merged.update(updates)
        config = ExperimentConfig.from_dict(merged)
    return config


def _cmd_run(args) -> int:
    config = load_config(args)
    try:
        table = run_experiment(config)
        code = 0
    except ExperimentInterrupted as exc:
        table = exc.partial
        code = 130
        print("interrupted; flushing partial results", file=sys.stderr)
    written = emit_results(table, config.output_dir, config.output_format)
    for path in written:
        print(path)
    for row in table.aggregates:
        print(f"{row.regime:>4} {row.mode:>7} {row.model:>10} L={row.pilots:<2d} "
              f"nmse={row.mean_nmse:.3e} rate={row.mean_rate_bps_hz:.4f} "
              f"capacity={row.mean_capacity_bps_hz:.4f}")
    return code


def _cmd_codebook(args) -> int:
    config = load_config(args)
    geom = config.geometry()
    codebook = build_codebook(geom, args.codebook_regime,
                              near_distance_rings=config.near_distance_rings)
    out = args.out or f"codebook_{args.codebook_regime}.txt"
    export_codebook(codebook, out)
    print(f"{out}: {codebook.size} entries for a {geom.n_h}x{geom.n_v} surface")
    return 0


def _cmd_single(args) -> int:
    config = load_config(args)
    regime = (args.regime or "near").replace("both", "near")
    mode = (args.mode or "active").replace("both", "active")
    geom = config.geometry()
    bs = make_bs_ris_channel(geom, config.bs_distance_m, DirectionParams(0.0, 0.0))
    codebook = build_codebook(geom, "near" if args.model == "near-field" else "far",
                              near_distance_rings=config.near_distance_rings)
    grid = SearchGrid.from_codebook(codebook, refine_depth=config.refine_depth,
                                    shrink=config.refine_shrink,
                                    refine_points=config.refine_points)
    seed = derive_seed(config.base_seed, args.trial, regime, mode, args.model)
    rng = np.random.default_rng(seed)
    user = sample_user(geom, regime, rng)
    g = make_channel(geom, user).g
    ris_mode = config.ris_mode(mode)
    noise = config.noise_model(mode)
    scenario = Scenario(user=user, g=g, bs=bs, noise=noise, mode=ris_mode)
    runner = run_adaptive_estimation if mode == "active" else run_passive_baseline
    _, history = runner(scenario, geom, grid, codebook.fresh(), args.pilots, rng)
    capacity = capacity_bound(ris_mode, bs.h, g, noise)

    print(f"trial {args.trial} seed {seed} regime={regime} mode={mode} model={args.model}")
    print(f"user: az={user.dir.azimuth:+.4f} el={user.dir.elevation:+.4f} "
          f"r={user.dir.distance:.3f} m, capacity={capacity:.4f} bps/Hz")
    print("round pilots codeword       nmse        rate")
    for rnd, rec in enumerate(history, start=2):
        sel = "-" if rec.selected_index is None else str(rec.selected_index)
        print(f"{rnd:>5d} {rec.pilots_used:>6d} {sel:>8} {rec.nmse:11.3e} "
              f"{rec.rate_bps_hz:11.4f}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {"run": _cmd_run, "codebook": _cmd_codebook, "single": _cmd_single}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        json.dump({"error": "config", "field": exc.field, "message": exc.message},
                  sys.stderr)
        sys.stderr.write("\n")
        return 2
    except (OSError, json.JSONDecodeError) as exc:
        json.dump({"error": "io", "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
