"""Estimation under frequency-dependent steering (beam squint).

With a precoder that repeats a base block of ``n_d`` columns over ``L``
segments, the echo of every subcarrier folds into an
``m_rx x n_d x L`` tensor whose third factor is Vandermonde in the
per-segment Doppler rotation. Each subcarrier is factorized on its own, so
the frequency dependence of the steering vectors never mixes across
subcarriers; delays and gains are recovered afterwards by combining the
per-subcarrier gains.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from ._search import grid, grid_refine_max, grid_refine_max_columns
from .errors import MatchFailure
from .extraction import ParamEstimates
from .signal_model import ArrayConfig, ScatterSet, steering_matrix, ula_response
from .tensor import add_noise, khatri_rao
from .vandermonde import (TrainingPattern, cpd_vandermonde, delay_response, noiseless_echo,
                          vandermonde_columns, vandermonde_max_targets)


def segment_precoder(base: np.ndarray, l_segments: int) -> np.ndarray:
    """Repeat the ``m_bs x n_d`` base block ``l_segments`` times along the columns."""
    if l_segments < 1:
        raise ValueError("l_segments must be >= 1")
    return np.tile(np.asarray(base), (1, int(l_segments)))


def prop1_max_targets(m_re: int, n_d: int, l_segments: int, k3: int) -> int:
    """Generic per-subcarrier bound ``min(n_d (k3 - 1), m_re (L - k3 + 1))``."""
    return vandermonde_max_targets(m_re, n_d, l_segments, k3)


@dataclass(frozen=True)
class SegmentTensorSet:
    """Per-subcarrier tensors ``tensors[i]`` of shape ``m_rx x n_d x L`` for subcarrier ``subcarriers[i]``."""

    tensors: np.ndarray
    segment: tuple[int, int]
    subcarriers: np.ndarray

    def __post_init__(self):
        n_d, l_seg = self.segment
        if self.tensors.ndim != 4 or self.tensors.shape[2:] != (n_d, l_seg):
            raise ValueError(f"tensor stack shape {self.tensors.shape} does not match segment {self.segment}")
        if len(self.subcarriers) != self.tensors.shape[0] or len(self.subcarriers) < 1:
            raise ValueError("one subcarrier index per tensor is required")

    @classmethod
    def from_echo(cls, y: np.ndarray, segment: tuple[int, int], subcarriers=None) -> "SegmentTensorSet":
        """Fold an ``m_rx x N x K`` echo; symbol ``i + l n_d`` lands at ``[:, i, l]``."""
        m, n, k = y.shape
        n_d, l_seg = segment
        if n_d * l_seg != n:
            raise ValueError("n_d * L must equal the number of symbols")
        stack = np.moveaxis(y.reshape(m, n_d, l_seg, k, order="F"), 3, 0)
        sub = np.arange(1, k + 1) if subcarriers is None else np.asarray(subcarriers)
        return cls(np.ascontiguousarray(stack), (n_d, l_seg), sub)

    def __len__(self):
        return self.tensors.shape[0]


def _require_segments(training: TrainingPattern) -> tuple[int, int]:
    if training.segment is None:
        raise ValueError("training pattern has no segment structure")
    return training.segment


def quasi_static_echo(scatterers: ScatterSet, training: TrainingPattern, cfg: ArrayConfig, rx: str = "bs") -> np.ndarray:
    """Echo with the Doppler phase frozen per segment at ``exp(j 2 pi l n_d nu T_sym)``."""
    n_d, l_seg = _require_segments(training)
    m_rx = cfg.rx_antennas(rx)
    seg_phase = vandermonde_columns(np.exp(2j * np.pi * scatterers.dopplers * n_d * cfg.t_sym), l_seg)
    base = training.base_precoder
    out = np.empty((m_rx, n_d, l_seg, training.n_subcarriers), dtype=complex)
    for k in range(1, training.n_subcarriers + 1):
        ratio = float(cfg.freq_ratio(k))
        c1 = steering_matrix(m_rx, scatterers.aoas, ratio, cfg.d_over_lambda)
        c2 = base.T @ steering_matrix(cfg.m_bs, scatterers.aods, ratio, cfg.d_over_lambda)
        c3 = seg_phase * (scatterers.coeffs * delay_response(scatterers.delays, cfg, [k])[0])
        out[..., k - 1] = np.einsum("iq,jq,lq->ijl", c1, c2, c3)
    return out.reshape(m_rx, n_d * l_seg, training.n_subcarriers, order="F")


def build_segment_tensors(scatterers: ScatterSet, training: TrainingPattern, cfg: ArrayConfig,
                          snr_db: float = math.inf, rng=None, rx: str = "bs",
                          quasi_static: bool = False) -> SegmentTensorSet:
    """Beam-squint echo folded per subcarrier.

    By default the Doppler phase advances every symbol, so the deviation from
    the per-segment constant model is part of the data. ``quasi_static=True``
    builds the per-segment constant model itself.
    """
    segment = _require_segments(training)
    if training.precoder.shape[0] != cfg.m_bs:
        raise ValueError("precoder rows must equal m_bs")
    if quasi_static:
        clean = quasi_static_echo(scatterers, training, cfg, rx)
    else:
        clean = noiseless_echo(scatterers, training, cfg, rx, beam_squint=True)
    noisy = add_noise(clean, snr_db, rng)[0]
    return SegmentTensorSet.from_echo(noisy, segment)


@dataclass(frozen=True)
class Alg2Options:
    k3: int | None = None
    aoa_grid: int = 2048
    aod_grid: int = 2048
    delay_grid: int = 4096
    align: str = "doppler"
    coeff: str = "average"
    coeff_subcarrier: int = 0


@dataclass(frozen=True)
class SubcarrierEstimates:
    """Per-subcarrier estimates (rows, aligned to the first subcarrier's column order) and fused values.

    ``aoa``, ``aod``, ``doppler``, ``beta_bar`` and ``generators`` have shape
    ``(n_subcarriers, Q)``; ``delay`` and ``coeff`` have shape ``(Q,)``.
    """

    subcarriers: np.ndarray
    aoa: np.ndarray
    aod: np.ndarray
    doppler: np.ndarray
    beta_bar: np.ndarray
    generators: np.ndarray
    delay: np.ndarray
    coeff: np.ndarray

    def at(self, i: int) -> ParamEstimates:
        """Parameters using the angles and Doppler of the ``i``-th processed subcarrier."""
        return ParamEstimates(self.aoa[i], self.delay, self.aod[i], self.doppler[i], self.coeff)

    def consensus(self) -> ParamEstimates:
        """Angles and Doppler averaged over subcarriers (angles averaged in the sine domain)."""
        aoa = np.arcsin(np.clip(np.mean(np.sin(self.aoa), axis=0), -1, 1))
        aod = np.arcsin(np.clip(np.mean(np.sin(self.aod), axis=0), -1, 1))
        return ParamEstimates(aoa, self.delay, aod, np.mean(self.doppler, axis=0), self.coeff)


def _normalized_aods(cols: np.ndarray, base: np.ndarray, ratio: float, cfg: ArrayConfig, n_grid: int) -> np.ndarray:
    """AoD per column maximizing the normalized correlation with ``base^T a_bs(phi)``."""
    cols = cols / np.linalg.norm(cols, axis=0)

    def score(s, c):
        x = base.T @ ula_response(cfg.m_bs, s, ratio, cfg.d_over_lambda)
        return np.abs(c.conj().T @ x) ** 2 / np.sum(np.abs(x) ** 2, axis=0)

    xs = grid(-1.0, 1.0, n_grid)
    scores = score(xs, cols).T
    sines = grid_refine_max_columns(scores, xs, lambda j, s: float(score(np.array([s]), cols[:, [j]])[0, 0]), -1.0, 1.0)
    return np.arcsin(sines)


def _correlation_aoas(cols: np.ndarray, ratio: float, cfg: ArrayConfig, n_grid: int) -> np.ndarray:
    def score(s, c):
        return np.abs(c.conj().T @ ula_response(cols.shape[0], s, ratio, cfg.d_over_lambda)) ** 2

    xs = grid(-1.0, 1.0, n_grid)
    scores = score(xs, cols).T
    sines = grid_refine_max_columns(scores, xs, lambda j, s: float(score(np.array([s]), cols[:, [j]])[0, 0]), -1.0, 1.0)
    return np.arcsin(sines)


def _align(ref_z, ref_aoa, z, aoa, l_seg: int, m_rx: int, mode: str) -> np.ndarray:
    phase = np.abs(np.angle(ref_z[:, None] * np.conj(z)[None, :]))
    dsin = np.abs(np.sin(ref_aoa)[:, None] - np.sin(aoa)[None, :])
    if mode == "doppler":
        cost = phase + 1e-6 * dsin
    elif mode == "joint":
        cost = phase / (2 * np.pi / l_seg) + dsin / (2.0 / m_rx)
    else:
        raise ValueError(f"unknown alignment mode {mode!r}")
    if not np.all(np.isfinite(cost)):
        raise MatchFailure("non-finite estimates prevent column alignment")
    _, cols = linear_sum_assignment(cost)
    return cols


def fuse_delay(row: np.ndarray, subcarriers, cfg: ArrayConfig, n_grid: int = 4096) -> float:
    """Delay in ``[0, t_cp]`` maximizing the normalized correlation of one gain row with ``a_td``."""
    row = np.asarray(row, dtype=complex)
    if not np.any(row):
        raise ValueError("gain row is identically zero")
    row = row / np.linalg.norm(row)
    k = np.asarray(subcarriers)

    def f(tau):
        a = delay_response(tau, cfg, k)
        return np.abs(row.conj() @ a) ** 2 / len(k)

    return grid_refine_max(f, 0.0, cfg.t_cp, n_grid)


def run_algorithm2(ts: SegmentTensorSet, training: TrainingPattern, cfg: ArrayConfig, q: int,
                   opts: Alg2Options = Alg2Options(), rx: str = "bs") -> SubcarrierEstimates:
    """Per-subcarrier Vandermonde CPD and parameter extraction, then delay and gain fusion."""
    n_d, l_seg = _require_segments(training)
    if ts.segment != (n_d, l_seg):
        raise ValueError("tensor set and training use different segment layouts")
    base = training.base_precoder
    m_rx = ts.tensors.shape[1]
    n_sub = len(ts)
    aoa = np.empty((n_sub, q))
    aod = np.empty((n_sub, q))
    dop = np.empty((n_sub, q))
    gens = np.empty((n_sub, q), complex)
    beta = np.empty((n_sub, q), complex)

    for i, k in enumerate(ts.subcarriers):
        y = ts.tensors[i]
        ratio = float(cfg.freq_ratio(int(k)))
        est = cpd_vandermonde(y, q, opts.k3)
        c1, c2, _ = est.factors
        th = _correlation_aoas(c1, ratio, cfg, opts.aoa_grid)
        ph = _normalized_aods(c2, base, ratio, cfg, opts.aod_grid)
        nu = np.angle(est.generators) / (2 * np.pi * n_d * cfg.t_sym)
        if not (np.all(np.isfinite(th)) and np.all(np.isfinite(ph)) and np.all(np.isfinite(nu))):
            raise MatchFailure(f"non-finite estimates on subcarrier {k}")
        if i > 0:
            perm = _align(gens[0], aoa[0], est.generators, th, l_seg, m_rx, opts.align)
            th, ph, nu, z = th[perm], ph[perm], nu[perm], est.generators[perm]
        else:
            z = est.generators
        a_ds = vandermonde_columns(np.exp(2j * np.pi * nu * n_d * cfg.t_sym), l_seg)
        c2_hat = base.T @ steering_matrix(cfg.m_bs, ph, ratio, cfg.d_over_lambda)
        c1_hat = steering_matrix(m_rx, th, ratio, cfg.d_over_lambda)
        design = khatri_rao(a_ds, khatri_rao(c2_hat, c1_hat))
        beta[i] = np.linalg.lstsq(design, y.ravel(order="F"), rcond=None)[0]
        aoa[i], aod[i], dop[i], gens[i] = th, ph, nu, z

    sub = np.asarray(ts.subcarriers)
    delay = np.array([fuse_delay(beta[:, j], sub, cfg, opts.delay_grid) for j in range(q)])
    derot = beta * np.conj(delay_response(delay, cfg, sub))
    if opts.coeff == "average":
        coeff = derot.mean(axis=0)
    elif opts.coeff == "single":
        coeff = derot[opts.coeff_subcarrier]
    else:
        raise ValueError(f"unknown coefficient mode {opts.coeff!r}")
    return SubcarrierEstimates(sub, aoa, aod, dop, beta, gens, delay, coeff)
