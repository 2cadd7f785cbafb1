"""Command-line entry point: ``table``, ``estimate`` and ``sweep`` subcommands.

Exit codes: 0 success, 1 estimator failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
import warnings
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from .baselines import ALS_WARNING, als_parameters, matched_filter_range_velocity, music_angles
from .beam_squint import Alg2Options, SegmentTensorSet, run_algorithm2
from .config import FIGURES, ConfigError, figure_configs, load_config
from .errors import EstimationError
from .experiments import SweepConfig, make_trial, match_by_sine, noise_stream, run_sweep, write_results
from .extraction import Alg1Options, ParamEstimates, run_algorithm1
from .signal_model import SPEED_OF_LIGHT, ScatterSet
from .tensor import add_noise
from .vandermonde import resolvable_table

EXIT_OK, EXIT_ESTIMATOR, EXIT_USAGE = 0, 1, 2


def _int_list(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values or any(v < 1 for v in values):
        raise argparse.ArgumentTypeError("values must be positive integers")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="isactensor", description="Tensor-based ISAC parameter estimation")
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("table", help="maximum number of resolvable targets")
    t.add_argument("--k", type=int, default=16, help="number of subcarriers")
    t.add_argument("--m-re", type=int, default=8, help="receive antennas")
    t.add_argument("--n", type=_int_list, default=[10, 12, 14, 16, 18, 20], help="symbol counts, comma separated")
    t.add_argument("--k3", type=_int_list, default=[3, 5, 7], help="smoothing window lengths, comma separated")
    t.add_argument("--out", type=Path, help="also write the CSV to this file")

    e = sub.add_parser("estimate", help="simulate one scenario and run one estimator")
    e.add_argument("--config", type=Path, required=True)
    e.add_argument("--algorithm", choices=("alg1", "alg2", "als", "music", "mf"))
    e.add_argument("--seed", type=int)
    e.add_argument("--json", type=Path, help="write true and estimated parameters as JSON")

    s = sub.add_parser("sweep", help="Monte Carlo sweep writing CSV and a JSON sidecar")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", type=Path)
    src.add_argument("--figure", choices=sorted(FIGURES))
    s.add_argument("--out", type=Path, default=Path("results"))
    s.add_argument("--seed", type=int)
    s.add_argument("--trials", type=int, help="override the configured trial count")
    s.add_argument("--jobs", type=int, default=None, help="worker processes (default: all cores)")
    return parser


def cmd_table(args) -> int:
    for v in (args.k, args.m_re):
        if v < 1:
            print("error: --k and --m-re must be positive", file=sys.stderr)
            return EXIT_USAGE
    csv_text = resolvable_table(args.m_re, args.k, args.n, args.k3).to_csv()
    sys.stdout.write(csv_text)
    if args.out is not None:
        args.out.write_text(csv_text)
    return EXIT_OK


def _estimate(cfg: SweepConfig, algo: str, y, training, q) -> tuple[ParamEstimates | None, list, list[str]]:
    """Run one estimator; returns full estimates (or None), MF peaks, and notes."""
    notes: list[str] = []
    if algo == "alg1":
        return run_algorithm1(y, training, cfg.array, q, Alg1Options(cfg.k3, cfg.i_iter), cfg.rx), [], notes
    if algo == "alg2":
        ts = SegmentTensorSet.from_echo(y, cfg.segment)
        est = run_algorithm2(ts, training, cfg.array, q, Alg2Options(cfg.segment_k3, align=cfg.align,
                                                                     coeff=cfg.coeff_mode), cfg.rx)
        return est.consensus(), [], notes
    if algo == "als":
        notes.append(ALS_WARNING)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return als_parameters(y, training, cfg.array, q, rng=np.random.default_rng(cfg.seed), rx=cfg.rx), [], notes
    if algo == "music":
        aoa, aod = music_angles(y, training, cfg.array, q)
        nan = np.full(q, np.nan)
        notes.append("MUSIC estimates angles only; AoA and AoD are matched independently")
        return ParamEstimates(aoa, nan, aod, nan, nan.astype(complex)), [], notes
    notes.append("matched filter estimates range and velocity only")
    return None, matched_filter_range_velocity(y, cfg.array, q), notes


def _table(truth: ScatterSet, est: ParamEstimates | None, peaks, cfg: SweepConfig) -> tuple[str, list[dict]]:
    factor = 2.0 if cfg.round_trip else 1.0
    rng_of = lambda tau: SPEED_OF_LIGHT * tau / factor  # noqa: E731
    vel_of = lambda nu: SPEED_OF_LIGHT * nu / (factor * cfg.array.f_c)  # noqa: E731
    records = []
    if est is not None:
        ti, ei = match_by_sine(truth.aoas, est.aoa)
        for i, j in zip(ti, ei):
            records.append({
                "aoa_deg": (math.degrees(truth.aoas[i]), math.degrees(est.aoa[j])),
                "aod_deg": (math.degrees(truth.aods[i]), math.degrees(est.aod[j])),
                "range_m": (rng_of(truth.delays[i]), rng_of(est.delay[j])),
                "velocity_mps": (vel_of(truth.dopplers[i]), vel_of(est.doppler[j])),
                "coeff_abs": (abs(truth.coeffs[i]), abs(est.coeff[j])),
            })
    else:
        tau = np.array([p.delay for p in peaks])
        nu = np.array([p.doppler for p in peaks])
        cost = np.abs(truth.delays[:, None] - tau[None, :]) * cfg.array.delta_f
        ti, ei = linear_sum_assignment(cost)
        for i, j in zip(ti, ei):
            records.append({"range_m": (rng_of(truth.delays[i]), rng_of(tau[j])),
                            "velocity_mps": (vel_of(truth.dopplers[i]), vel_of(nu[j]))})
    cols = list(records[0]) if records else []
    header = "target  " + "  ".join(f"{c + ' true':>18}{c + ' est':>18}" for c in cols)
    lines = [header]
    for q, rec in enumerate(records):
        cells = "  ".join(f"{rec[c][0]:>18.8g}{rec[c][1]:>18.8g}" for c in cols)
        lines.append(f"{q:>6}  {cells}")
    return "\n".join(lines), records


def cmd_estimate(args) -> int:
    try:
        cfg = load_config(args.config)
        changes = {}
        if args.seed is not None:
            changes["seed"] = args.seed
        if args.algorithm is not None:
            changes["algorithms"] = (args.algorithm,)
        cfg = dataclasses.replace(cfg, **changes) if changes else cfg
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    algo = cfg.algorithms[0]
    q = cfg.num_targets[0]
    snr = cfg.snr_db[0]
    truth, training, clean = make_trial(cfg, q, 0)
    y = add_noise(clean, snr, noise_stream(cfg.seed, q, 0, snr))[0]
    true_only = ScatterSet(truth.scatterers[:q], truth.kind)
    try:
        est, peaks, notes = _estimate(cfg, algo, y, training, q + cfg.n_interferers)
    except (EstimationError, np.linalg.LinAlgError, ValueError) as exc:
        kind = getattr(exc, "kind", type(exc).__name__)
        print(f"estimator failure ({kind}): {exc}", file=sys.stderr)
        return EXIT_ESTIMATOR
    text, records = _table(true_only, est, peaks, cfg)
    print(f"algorithm {algo}, {q} scatterers, SNR {snr:g} dB, seed {cfg.seed}")
    print(text)
    for note in notes:
        print(f"note: {note}")
    if args.json is not None:
        args.json.write_text(json.dumps({"algorithm": algo, "seed": cfg.seed, "snr_db": snr if math.isfinite(snr) else "inf",
                                         "targets": records, "notes": notes}, indent=2) + "\n")
    return EXIT_OK


def cmd_sweep(args) -> int:
    try:
        configs = figure_configs(args.figure) if args.figure else [load_config(args.config)]
        changes = {}
        if args.seed is not None:
            changes["seed"] = args.seed
        if args.trials is not None:
            changes["trials"] = args.trials
        configs = [dataclasses.replace(c, **changes) for c in configs] if changes else configs
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.jobs is not None and args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    for cfg in configs:
        rows = run_sweep(cfg, jobs=args.jobs)
        csv_path, json_path = write_results(rows, cfg, args.out)
        print(f"wrote {csv_path} and {json_path}")
    return EXIT_OK


COMMANDS = {"table": cmd_table, "estimate": cmd_estimate, "sweep": cmd_sweep}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    return COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
