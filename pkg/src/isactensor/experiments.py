"""Metrics, ground-truth matching and Monte Carlo sweeps.

A sweep draws a fresh scenario and training pattern per trial, builds the
noisy tensor at every SNR (scenario and training are shared across SNR
points, noise is not), runs every selected estimator on the same tensor
and aggregates trimmed RMSE, NMSE and success-rate rows.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .baselines import als_cpd_detailed, als_parameters, matched_filter_range_velocity, music_angles
from .beam_squint import Alg2Options, SegmentTensorSet, run_algorithm2
from .errors import EstimationError
from .extraction import Alg1Options, ParamEstimates, channel_nmse, run_algorithm1
from .signal_model import (SPEED_OF_LIGHT, ArrayConfig, ScatterKind, ScatterSet, ScenarioBounds,
                           generate_scenario)
from .tensor import add_noise
from .vandermonde import TrainingPattern, noiseless_echo, random_training

ALGORITHMS = ("alg1", "alg2", "als", "music", "mf")
METRICS = ("rmse_aoa", "rmse_aod", "rmse_range", "rmse_velocity", "nmse", "success_rate", "runtime_s")
PARAM_METRICS = ("rmse_aoa", "rmse_aod", "rmse_range", "rmse_velocity")


# ---------------------------------------------------------------- metrics

def match_by_sine(true_angles, est_angles) -> tuple[np.ndarray, np.ndarray]:
    """Optimal assignment minimizing the summed ``|sin(theta) - sin(theta_hat)|``.

    Returns index arrays ``(true_idx, est_idx)``; with unequal counts only
    ``min(len)`` pairs are formed.
    """
    c = np.abs(np.sin(np.asarray(true_angles))[:, None] - np.sin(np.asarray(est_angles))[None, :])
    return linear_sum_assignment(c)


def rmse(est, truth, matching=None) -> float:
    """``sqrt(mean_q (est_q - truth_q)^2)`` after applying ``matching = (true_idx, est_idx)``."""
    est = np.asarray(est, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if matching is not None:
        ti, ei = matching
        truth, est = truth[ti], est[ei]
    if est.shape != truth.shape or est.size == 0:
        raise ValueError("estimate and truth lengths differ")
    return float(np.sqrt(np.mean((est - truth) ** 2)))


def nmse(h_est: Sequence[np.ndarray], h_true: Sequence[np.ndarray]) -> float:
    """``sum_k ||H_k - H_hat_k||_F^2 / sum_k ||H_k||_F^2``."""
    if len(h_est) != len(h_true):
        raise ValueError("channel lists differ in length")
    num = sum(float(np.linalg.norm(np.asarray(t) - np.asarray(e)) ** 2) for e, t in zip(h_est, h_true))
    den = sum(float(np.linalg.norm(np.asarray(t)) ** 2) for t in h_true)
    if den == 0:
        raise ValueError("true channel is identically zero")
    return num / den


def trial_success(true_aoas, est_aoas, m_rx: int) -> bool:
    """Every true AoA is matched to an estimate within ``1 / (2 m_rx)`` in the sine domain."""
    true_aoas = np.asarray(true_aoas)
    est_aoas = np.asarray(est_aoas)
    if est_aoas.size < true_aoas.size:
        return False
    ti, ei = match_by_sine(true_aoas, est_aoas)
    return bool(np.all(np.abs(np.sin(true_aoas[ti]) - np.sin(est_aoas[ei])) <= 1.0 / (2 * m_rx)))


def success_rate(trials_est: Sequence, truths: Sequence, m_rx: int) -> float:
    """Fraction of trials passing :func:`trial_success`; ``None`` estimates count as failures."""
    if len(trials_est) == 0 or len(trials_est) != len(truths):
        raise ValueError("need one estimate list per trial")
    ok = [e is not None and trial_success(t, e, m_rx) for e, t in zip(trials_est, truths)]
    return float(np.mean(ok))


def trimmed_rms(values: Sequence[float], trim: float = 0.05) -> float:
    """Drop the ``floor(trim * n)`` largest values, then ``sqrt(mean(v^2))``."""
    v = np.sort(np.asarray([x for x in values if np.isfinite(x)], dtype=float))
    if v.size == 0:
        return math.nan
    drop = int(math.floor(trim * v.size))
    kept = v[: v.size - drop] if drop else v
    return float(np.sqrt(np.mean(kept ** 2)))


def trimmed_mean(values: Sequence[float], trim: float = 0.05) -> float:
    v = np.sort(np.asarray([x for x in values if np.isfinite(x)], dtype=float))
    if v.size == 0:
        return math.nan
    drop = int(math.floor(trim * v.size))
    return float(np.mean(v[: v.size - drop] if drop else v))


def _wrap(d, period):
    return (np.asarray(d) + period / 2) % period - period / 2


def parameter_errors(est: ParamEstimates, truth: ScatterSet, cfg: ArrayConfig, round_trip: bool = True,
                     matching=None) -> dict[str, float]:
    """Per-trial RMSE of all four parameters over one shared AoA-based matching.

    Angles in degrees, range in metres, velocity in m/s. Delay differences
    are wrapped to the observable period ``K0 / f_s``.
    """
    ti, ei = match_by_sine(truth.aoas, est.aoa) if matching is None else matching
    if len(ti) < len(truth):
        raise ValueError("fewer estimates than scatterers")
    factor = 2.0 if round_trip else 1.0
    d_aoa = np.degrees(est.aoa[ei] - truth.aoas[ti])
    d_aod = np.degrees(est.aod[ei] - truth.aods[ti])
    d_range = SPEED_OF_LIGHT * _wrap(est.delay[ei] - truth.delays[ti], cfg.delay_period) / factor
    d_vel = SPEED_OF_LIGHT * (est.doppler[ei] - truth.dopplers[ti]) / (factor * cfg.f_c)
    return {name: float(np.sqrt(np.mean(d ** 2)))
            for name, d in zip(PARAM_METRICS, (d_aoa, d_aod, d_range, d_vel))}


# ---------------------------------------------------------------- configuration

@dataclass(frozen=True)
class SweepConfig:
    """Everything that defines a sweep; JSON-serializable through :meth:`to_dict`."""

    array: ArrayConfig = ArrayConfig()
    bounds: ScenarioBounds = ScenarioBounds()
    num_targets: tuple[int, ...] = (4,)
    n_symbols: int = 16
    n_subcarriers: int = 16
    segment: tuple[int, int] | None = None
    scenario: str = "targets"
    rx: str = "bs"
    n_interferers: int = 0
    beam_squint: bool = False
    snr_db: tuple[float, ...] = (0.0, 10.0, 20.0, 30.0)
    trials: int = 100
    algorithms: tuple[str, ...] = ("alg1", "als", "music")
    seed: int = 0
    trim: float = 0.05
    k3: int | None = None
    i_iter: int = 30
    segment_k3: int | None = None
    align: str = "doppler"
    coeff_mode: str = "average"
    timing: bool = False
    name: str = "sweep"

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not 0 <= self.trim < 0.5:
            raise ValueError("trim must lie in [0, 0.5)")
        unknown = set(self.algorithms) - set(ALGORITHMS)
        if unknown:
            raise ValueError(f"unknown algorithms: {sorted(unknown)}")
        if not self.algorithms:
            raise ValueError("select at least one algorithm")
        if "alg2" in self.algorithms and self.segment is None:
            raise ValueError("alg2 requires a segment layout (n_d, l_segments)")
        if self.segment is not None and self.segment[0] * self.segment[1] != self.n_symbols:
            raise ValueError("n_d * l_segments must equal n_symbols")
        if self.n_subcarriers > self.array.k0:
            raise ValueError("n_subcarriers exceeds k0")
        if any(q < 1 for q in self.num_targets):
            raise ValueError("num_targets must be >= 1")
        ScatterKind(self.scenario)
        self.array.rx_antennas(self.rx)

    @property
    def round_trip(self) -> bool:
        return self.scenario != ScatterKind.MULTIPATHS.value

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["snr_db"] = [x if math.isfinite(x) else "inf" for x in self.snr_db]
        return d


@dataclass(frozen=True)
class ResultRow:
    algorithm: str
    snr_db: float
    metric: str
    value: float
    trials: int
    failures: int
    num_targets: int | None = None


# ---------------------------------------------------------------- trial execution

def _snr_key(snr: float) -> int:
    return 10 ** 9 if math.isinf(snr) else int(round(snr * 1000))


def trial_streams(seed: int, q: int, trial: int):
    """Seed sequences for scenario, training and ALS initialization (SNR independent)."""
    root = np.random.SeedSequence([seed, q, trial])
    return root.spawn(3)


def noise_stream(seed: int, q: int, trial: int, snr: float) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, q, trial, _snr_key(snr)])


def make_trial(cfg: SweepConfig, q: int, trial: int) -> tuple[ScatterSet, TrainingPattern, np.ndarray]:
    """Scenario, training and noiseless tensor of one trial."""
    s_scen, s_train, _ = trial_streams(cfg.seed, q, trial)
    scat = generate_scenario(s_scen, q, cfg.array, cfg.bounds, cfg.scenario, cfg.n_interferers)
    training = random_training(cfg.array.m_bs, cfg.n_symbols, cfg.n_subcarriers, s_train, cfg.segment)
    clean = noiseless_echo(scat, training, cfg.array, cfg.rx, cfg.beam_squint)
    return scat, training, clean


@dataclass
class AlgoOutcome:
    """Per-trial metric values of one algorithm; NaN marks a metric it does not produce."""

    metrics: dict[str, float] = field(default_factory=dict)
    per_subcarrier: dict[str, np.ndarray] | None = None
    failed: bool = False
    error: str = ""


def _nmse_for(cfg: SweepConfig, truth: ScatterSet, est: ParamEstimates) -> float:
    k = np.arange(1, cfg.n_subcarriers + 1)
    return channel_nmse(truth, est, cfg.array, cfg.n_symbols, k, cfg.beam_squint, cfg.rx)


def _paired_metrics(cfg: SweepConfig, truth: ScatterSet, est: ParamEstimates, with_nmse: bool) -> dict[str, float]:
    m = parameter_errors(est, truth, cfg.array, cfg.round_trip)
    m["success_rate"] = float(trial_success(truth.aoas[: len(truth)], est.aoa, cfg.array.rx_antennas(cfg.rx)))
    m["nmse"] = _nmse_for(cfg, truth, est) if with_nmse else math.nan
    return m


def _run_alg1(cfg, truth, training, y, q, _rng):
    est = run_algorithm1(y, training, cfg.array, q, Alg1Options(cfg.k3, cfg.i_iter), cfg.rx)
    return AlgoOutcome(_paired_metrics(cfg, truth, est, True))


def _run_als(cfg, truth, training, y, q, rng):
    res = als_cpd_detailed(y, q, rng=rng)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        est = als_parameters(y, training, cfg.array, q, factors=res.factors, rx=cfg.rx)
    return AlgoOutcome(_paired_metrics(cfg, truth, est, True))


def _run_alg2(cfg, truth, training, y, q, _rng):
    ts = SegmentTensorSet.from_echo(y, cfg.segment)
    opts = Alg2Options(k3=cfg.segment_k3, align=cfg.align, coeff=cfg.coeff_mode)
    est = run_algorithm2(ts, training, cfg.array, q, opts, cfg.rx)
    rows = []
    for i in range(len(ts)):
        p = est.at(i)
        m = parameter_errors(p, truth, cfg.array, cfg.round_trip)
        m["nmse"] = _nmse_for(cfg, truth, p)
        m["success_rate"] = float(trial_success(truth.aoas, p.aoa, cfg.array.rx_antennas(cfg.rx)))
        rows.append(m)
    per = {k: np.array([r[k] for r in rows]) for k in rows[0]}
    return AlgoOutcome({}, per)


def _run_music(cfg, truth, training, y, q, _rng):
    aoa, aod = music_angles(y, training, cfg.array, q)
    m = {k: math.nan for k in METRICS}
    m["success_rate"] = float(trial_success(truth.aoas, aoa, cfg.array.rx_antennas(cfg.rx)))
    if aoa.size < q or aod.size < q:
        return AlgoOutcome(m, failed=True, error="MUSIC found fewer peaks than scatterers")
    ti, ei = match_by_sine(truth.aoas, aoa)
    m["rmse_aoa"] = rmse(np.degrees(aoa), np.degrees(truth.aoas), (ti, ei))
    ti, ei = match_by_sine(truth.aods, aod)
    m["rmse_aod"] = rmse(np.degrees(aod), np.degrees(truth.aods), (ti, ei))
    return AlgoOutcome(m)


def _run_mf(cfg, truth, training, y, q, _rng):
    peaks = matched_filter_range_velocity(y, cfg.array, q)
    m = {k: math.nan for k in METRICS}
    if len(peaks) < q:
        return AlgoOutcome(m, failed=True, error="matched filter found fewer peaks than scatterers")
    tau = np.array([p.delay for p in peaks])
    nu = np.array([p.doppler for p in peaks])
    n_sym, n_sub = y.shape[1:]
    cell_tau = 1.0 / (n_sub * cfg.array.delta_f)
    cell_nu = 1.0 / (n_sym * cfg.array.t_sym)
    cost = np.hypot((truth.delays[:, None] - tau[None, :]) / cell_tau,
                    (truth.dopplers[:, None] - nu[None, :]) / cell_nu)
    ti, ei = linear_sum_assignment(cost)
    factor = 2.0 if cfg.round_trip else 1.0
    m["rmse_range"] = rmse(SPEED_OF_LIGHT * tau / factor, SPEED_OF_LIGHT * truth.delays / factor, (ti, ei))
    m["rmse_velocity"] = rmse(SPEED_OF_LIGHT * nu / (factor * cfg.array.f_c),
                              SPEED_OF_LIGHT * truth.dopplers / (factor * cfg.array.f_c), (ti, ei))
    return AlgoOutcome(m)


_RUNNERS = {"alg1": _run_alg1, "alg2": _run_alg2, "als": _run_als, "music": _run_music, "mf": _run_mf}


def run_trial(cfg: SweepConfig, q: int, trial: int) -> dict[tuple[float, str], AlgoOutcome]:
    """All SNR points and algorithms of one trial, keyed by ``(snr_db, algorithm)``."""
    truth, training, clean = make_trial(cfg, q, trial)
    true_only = ScatterSet(truth.scatterers[:q], truth.kind) if cfg.n_interferers else truth
    _, _, s_als = trial_streams(cfg.seed, q, trial)
    out = {}
    for snr in cfg.snr_db:
        y = add_noise(clean, snr, noise_stream(cfg.seed, q, trial, snr))[0]
        for algo in cfg.algorithms:
            t0 = time.perf_counter()
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", RuntimeWarning)
                    res = _RUNNERS[algo](cfg, true_only, training, y, q + cfg.n_interferers,
                                         np.random.default_rng(s_als))
            except (EstimationError, np.linalg.LinAlgError, ValueError) as exc:
                res = AlgoOutcome({"success_rate": 0.0}, failed=True, error=f"{type(exc).__name__}: {exc}")
            elapsed = time.perf_counter() - t0
            if cfg.timing:
                res.metrics["runtime_s"] = elapsed
            out[(snr, algo)] = res
    return out


# ---------------------------------------------------------------- aggregation

def _aggregate(cfg: SweepConfig, outcomes: list[AlgoOutcome], algo: str) -> dict[str, float]:
    """Metric values for one (algorithm, SNR, Q) cell."""
    n = len(outcomes)
    agg = {}
    values = {k: [o.metrics.get(k, math.nan) for o in outcomes if not o.failed] for k in METRICS}
    if algo != "mf":
        agg["success_rate"] = float(np.mean([o.metrics.get("success_rate", 0.0) for o in outcomes]))
    if algo == "alg2":
        good = [o.per_subcarrier for o in outcomes if o.per_subcarrier is not None]
        for k in PARAM_METRICS + ("nmse",):
            if not good:
                agg[k] = math.nan
                continue
            stack = np.array([g[k] for g in good])
            per_sub = [trimmed_rms(stack[:, i], cfg.trim) if k != "nmse" else trimmed_mean(stack[:, i], cfg.trim)
                       for i in range(stack.shape[1])]
            agg[k] = float(np.nanmin(per_sub))
        if good:
            agg["success_rate"] = float(np.sum([g["success_rate"].max() for g in good]) / n)
    else:
        for k in PARAM_METRICS:
            agg[k] = trimmed_rms(values[k], cfg.trim)
        agg["nmse"] = trimmed_mean(values["nmse"], cfg.trim)
    if cfg.timing:
        agg["runtime_s"] = float(np.mean([o.metrics["runtime_s"] for o in outcomes]))
    return {k: v for k, v in agg.items() if not (isinstance(v, float) and math.isnan(v))}


def _trial_task(args):
    cfg, q, trial = args
    return (q, trial), run_trial(cfg, q, trial)


def run_sweep(cfg: SweepConfig, jobs: int | None = 1) -> list[ResultRow]:
    """Monte Carlo sweep over SNR (and over ``num_targets`` when it has several entries).

    Results are merged by ``(Q, trial)`` key, so the output does not depend
    on ``jobs`` or on completion order.
    """
    tasks = [(cfg, q, t) for q in cfg.num_targets for t in range(cfg.trials)]
    jobs = (os.cpu_count() or 1) if jobs is None else max(1, int(jobs))
    if jobs == 1:
        results = dict(map(_trial_task, tasks))
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = dict(pool.map(_trial_task, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    q_column = len(cfg.num_targets) > 1
    rows = []
    for q in cfg.num_targets:
        for algo in cfg.algorithms:
            for snr in cfg.snr_db:
                outs = [results[(q, t)][(snr, algo)] for t in range(cfg.trials)]
                fails = sum(o.failed for o in outs)
                for metric, value in _aggregate(cfg, outs, algo).items():
                    rows.append(ResultRow(algo, snr, metric, value, cfg.trials, fails, q if q_column else None))
    return rows


def snr_sweep(cfg: SweepConfig, jobs: int | None = 1) -> list[ResultRow]:
    return run_sweep(cfg, jobs)


def rows_to_csv(rows: Sequence[ResultRow], with_targets: bool | None = None) -> str:
    if with_targets is None:
        with_targets = any(r.num_targets is not None for r in rows)
    header = ["algorithm", "snr_db", "metric", "value", "trials", "failures"] + (["num_targets"] if with_targets else [])
    lines = [",".join(header)]
    for r in rows:
        fields = [r.algorithm, _fmt(r.snr_db), r.metric, repr(float(r.value)), str(r.trials), str(r.failures)]
        if with_targets:
            fields.append(str(r.num_targets))
        lines.append(",".join(fields))
    return "\n".join(lines) + "\n"


def _fmt(x: float) -> str:
    return "inf" if math.isinf(x) else f"{x:g}"


def read_rows(path) -> list[ResultRow]:
    with open(path, newline="") as fh:
        out = []
        for rec in csv.DictReader(fh):
            nt = rec.get("num_targets")
            out.append(ResultRow(rec["algorithm"], float(rec["snr_db"]), rec["metric"], float(rec["value"]),
                                 int(rec["trials"]), int(rec["failures"]), int(nt) if nt else None))
        return out


def write_results(rows: Sequence[ResultRow], cfg: SweepConfig, out_dir) -> tuple[Path, Path]:
    """Write ``<name>.csv`` and the ``<name>.json`` sidecar holding the full configuration."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{cfg.name}.csv"
    json_path = out / f"{cfg.name}.json"
    csv_path.write_text(rows_to_csv(rows))
    json_path.write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    return csv_path, json_path


def lookup(rows: Sequence[ResultRow], algorithm: str, metric: str, snr_db: float | None = None,
           num_targets: int | None = None) -> float:
    """Single value from a row list; raises ``KeyError`` if absent."""
    for r in rows:
        if r.algorithm == algorithm and r.metric == metric and (snr_db is None or r.snr_db == snr_db) \
                and (num_targets is None or r.num_targets == num_targets):
            return r.value
    raise KeyError((algorithm, metric, snr_db, num_targets))
