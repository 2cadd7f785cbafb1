"""Vandermonde-constrained CPD of the echo tensor.

The third factor of the echo tensor is a Vandermonde matrix (delay
progression across subcarriers). Spatial smoothing of the mode-1 unfolding
exposes a shift invariance between consecutive blocks of rows, which gives
the generators by an eigendecomposition and pairs the remaining two factors
automatically through the shared eigenvectors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import IllConditioned, NumericalFailure, UniquenessError
from .signal_model import ArrayConfig, ScatterSet, steering_matrix
from .tensor import FactorTriple, add_noise, cpd_reconstruct, khatri_rao, unfold


@dataclass(frozen=True)
class TrainingPattern:
    """Shared training: precoder ``P`` (m_bs x N) and unit-modulus pilots ``x_k``.

    When ``segment = (n_d, l_segments)`` is set, ``P`` is the first ``n_d``
    columns repeated ``l_segments`` times.
    """

    precoder: np.ndarray
    pilots: np.ndarray
    segment: tuple[int, int] | None = None

    def __post_init__(self):
        p = np.asarray(self.precoder, dtype=complex)
        x = np.asarray(self.pilots, dtype=complex)
        object.__setattr__(self, "precoder", p)
        object.__setattr__(self, "pilots", x)
        if p.ndim != 2:
            raise ValueError("precoder must be a matrix")
        if not np.allclose(np.abs(x), 1.0, atol=1e-9):
            raise ValueError("pilot symbols must be unit modulus")
        if not np.allclose(np.abs(p), 1.0, atol=1e-9):
            raise ValueError("precoder entries must be unit modulus")
        if self.segment is not None:
            n_d, l_seg = (int(v) for v in self.segment)
            object.__setattr__(self, "segment", (n_d, l_seg))
            if n_d * l_seg != p.shape[1]:
                raise ValueError("n_d * l_segments must equal the number of symbols")
            if not np.array_equal(p, np.tile(p[:, :n_d], (1, l_seg))):
                raise ValueError("segmented precoder must repeat its base block")

    @property
    def n_symbols(self) -> int:
        return self.precoder.shape[1]

    @property
    def n_subcarriers(self) -> int:
        return self.pilots.shape[0]

    @property
    def base_precoder(self) -> np.ndarray:
        if self.segment is None:
            return self.precoder
        return self.precoder[:, : self.segment[0]]


def random_training(m_bs: int, n_symbols: int, n_subcarriers: int, rng=None, segment=None) -> TrainingPattern:
    """Precoder entries and pilots with phases uniform on the unit circle."""
    rng = np.random.default_rng(rng)
    if segment is None:
        p = np.exp(2j * np.pi * rng.random((m_bs, n_symbols)))
    else:
        n_d, l_seg = segment
        if n_d * l_seg != n_symbols:
            raise ValueError("n_d * l_segments must equal n_symbols")
        p = np.tile(np.exp(2j * np.pi * rng.random((m_bs, n_d))), (1, l_seg))
    x = np.exp(2j * np.pi * rng.random(n_subcarriers))
    return TrainingPattern(p, x, segment)


def delay_response(delays, cfg: ArrayConfig, subcarriers) -> np.ndarray:
    """``a_td`` columns: ``exp(-j 2 pi tau f_s k / K0)`` for each subcarrier index ``k``."""
    k = np.asarray(subcarriers, dtype=float)[:, None]
    return np.exp(-2j * np.pi * np.atleast_1d(delays)[None, :] * cfg.f_s * k / cfg.k0)


def doppler_response(dopplers, t_sym: float, n_symbols: int) -> np.ndarray:
    """``a_do`` columns: ``exp(j 2 pi n nu t_sym)`` for ``n = 1..N``."""
    n = np.arange(1, n_symbols + 1, dtype=float)[:, None]
    return np.exp(2j * np.pi * n * np.atleast_1d(dopplers)[None, :] * t_sym)


def ground_truth_factors(scatterers: ScatterSet, training: TrainingPattern, cfg: ArrayConfig, rx: str = "bs") -> FactorTriple:
    """Factor matrices of the noiseless narrowband echo tensor.

    ``b1`` holds receive steering vectors, ``b2 = Gamma(nu) P^T a_bs(phi)`` and
    ``b3 = beta * a_td(tau)``.
    """
    m_rx = cfg.rx_antennas(rx)
    b1 = steering_matrix(m_rx, scatterers.aoas, 0.0, cfg.d_over_lambda)
    a_bs = steering_matrix(cfg.m_bs, scatterers.aods, 0.0, cfg.d_over_lambda)
    b2 = doppler_response(scatterers.dopplers, cfg.t_sym, training.n_symbols) * (training.precoder.T @ a_bs)
    k = np.arange(1, training.n_subcarriers + 1)
    b3 = delay_response(scatterers.delays, cfg, k) * scatterers.coeffs[None, :]
    return FactorTriple(b1, b2, b3)


def noiseless_echo(scatterers: ScatterSet, training: TrainingPattern, cfg: ArrayConfig, rx: str = "bs",
                   beam_squint: bool = False) -> np.ndarray:
    """Pilot-removed echo ``y[m, n, k]`` before noise, shape ``m_rx x N x K``."""
    if training.precoder.shape[0] != cfg.m_bs:
        raise ValueError("precoder rows must equal m_bs")
    if training.n_subcarriers > cfg.k0:
        raise ValueError("more training subcarriers than K0")
    if not beam_squint:
        return cpd_reconstruct(ground_truth_factors(scatterers, training, cfg, rx))
    m_rx = cfg.rx_antennas(rx)
    n_sym, n_sub = training.n_symbols, training.n_subcarriers
    gamma = doppler_response(scatterers.dopplers, cfg.t_sym, n_sym)
    out = np.empty((m_rx, n_sym, n_sub), dtype=complex)
    for k in range(1, n_sub + 1):
        ratio = float(cfg.freq_ratio(k))
        a_rx = steering_matrix(m_rx, scatterers.aoas, ratio, cfg.d_over_lambda)
        a_bs = steering_matrix(cfg.m_bs, scatterers.aods, ratio, cfg.d_over_lambda)
        c = scatterers.coeffs * delay_response(scatterers.delays, cfg, [k])[0]
        out[:, :, k - 1] = (a_rx * c) @ (gamma * (training.precoder.T @ a_bs)).T
    return out


def build_echo_tensor(scatterers: ScatterSet, training: TrainingPattern, cfg: ArrayConfig, snr_db: float = math.inf,
                      rng=None, rx: str = "bs", beam_squint: bool = False) -> np.ndarray:
    """Echo tensor (``rx="bs"``) or UE observation tensor (``rx="ue"``) with additive noise.

    Pilot removal is exact, so the pilots never enter the tensor. The SNR is
    the ratio of noiseless tensor energy to expected noise energy.
    """
    clean = noiseless_echo(scatterers, training, cfg, rx, beam_squint)
    return add_noise(clean, snr_db, rng)[0]


def default_k3(i3: int) -> int:
    """Smoothing length ``ceil((I3 + 1) / 2)`` balancing the two rank conditions."""
    if i3 < 2:
        raise ValueError("the Vandermonde mode needs at least two rows")
    return min(i3, max(2, math.ceil((i3 + 1) / 2)))


def spatial_smooth(y1t: np.ndarray, k3: int, n: int) -> np.ndarray:
    """Stack ``L3 = K - k3 + 1`` shifted windows of ``k3`` row blocks (of ``n`` rows each).

    ``y1t`` is the transposed mode-1 unfolding, of shape ``(K n) x I1``.
    Output has shape ``(k3 n) x (L3 I1)``.
    """
    y1t = np.asarray(y1t)
    if y1t.shape[0] % n:
        raise ValueError("row count must be a multiple of the block size n")
    kk = y1t.shape[0] // n
    if not 2 <= k3 <= kk:
        raise ValueError(f"k3 must lie in [2, {kk}], got {k3}")
    l3 = kk - k3 + 1
    return np.hstack([y1t[l * n:(l + k3) * n] for l in range(l3)])


def _unsmooth(ys: np.ndarray, k3: int, n: int, i1: int) -> np.ndarray:
    """Recover the transposed mode-1 unfolding from its smoothed version."""
    l3 = ys.shape[1] // i1
    tails = [ys[(k3 - 1) * n:, l * i1:(l + 1) * i1] for l in range(1, l3)]
    return np.vstack([ys[:, :i1], *tails])


@dataclass(frozen=True)
class FactorEstimate:
    """Estimated factors, equal to the truth up to a common permutation and scaling.

    ``b3`` is exactly Vandermonde ``[z, z^2, ..., z^K]`` in the unit-modulus
    generators ``generators``; the overall column scale is carried by ``b1``.
    """

    factors: FactorTriple
    generators: np.ndarray
    singular_values: np.ndarray


def vandermonde_columns(z, length: int) -> np.ndarray:
    """Columns ``[z_q, z_q^2, ..., z_q^length]``."""
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    return z[None, :] ** np.arange(1, length + 1)[:, None]


def esprit_factors(ys: np.ndarray, q: int, dims: Sequence[int], k3: int) -> FactorEstimate:
    """Recover all three factors from the smoothed unfolding ``ys``.

    Parameters
    ----------
    ys : ndarray, shape (k3 I2, L3 I1)
        Output of :func:`spatial_smooth` on the transposed mode-1 unfolding.
    q : int
        Number of rank-one terms.
    dims : (I1, I2, I3)
        Tensor dimensions; the Vandermonde factor lives in mode 3.
    k3 : int
        Smoothing length used to build ``ys``.
    """
    i1, i2, i3 = (int(d) for d in dims)
    l3 = i3 - k3 + 1
    bound = vandermonde_max_targets(i1, i2, i3, k3)
    if q < 1 or q > bound:
        raise UniquenessError(f"rank {q} exceeds the identifiability bound {bound} for dims {dims}, k3={k3}")
    if ys.shape != (k3 * i2, l3 * i1):
        raise ValueError(f"smoothed matrix has shape {ys.shape}, expected {(k3 * i2, l3 * i1)}")
    try:
        u, s, vh = np.linalg.svd(ys, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"SVD did not converge: {exc}") from exc
    if s[0] == 0 or s[q - 1] / s[0] < 1e-12:
        raise IllConditioned(f"smoothed unfolding has numerical rank below {q}")
    us, ss, vs = u[:, :q], s[:q], vh[:q].conj().T

    u1 = us[: (k3 - 1) * i2]
    u2 = us[i2: k3 * i2]
    try:
        shift = np.linalg.lstsq(u1, u2, rcond=None)[0]
        eigvals, m = np.linalg.eig(shift)
        t = np.linalg.inv(m).T
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"eigendecomposition failed: {exc}") from exc
    if np.any(eigvals == 0):
        raise IllConditioned("zero shift eigenvalue")
    z = eigvals / np.abs(eigvals)

    b3 = vandermonde_columns(z, i3)
    # (b3[:K3]^H kron I) applied to a stacked vector == conj(b3[:K3])^T @ reshape(K3, I)
    um = (us @ m).reshape(k3, i2, q)
    b2 = np.einsum("kq,kjq->jq", b3[:k3].conj(), um)
    vt = (vs.conj() * ss) @ t
    b1 = np.einsum("lq,liq->iq", b3[:l3].conj(), vt.reshape(l3, i1, q))

    # Absorb the residual per-column scale so the triple reproduces the data.
    y1t = _unsmooth(ys, k3, i2, i1)
    design = khatri_rao(b1, khatri_rao(b3, b2))
    w = np.linalg.lstsq(design, y1t.reshape(-1, order="F"), rcond=None)[0]
    b1 = b1 * w[None, :]
    return FactorEstimate(FactorTriple(b1, b2, b3), z, s)


def cpd_vandermonde(t: np.ndarray, q: int, k3: int | None = None) -> FactorEstimate:
    """Mode-1 unfolding, spatial smoothing and ESPRIT in one call."""
    i1, i2, i3 = t.shape
    k3 = default_k3(i3) if k3 is None else k3
    bound = vandermonde_max_targets(i1, i2, i3, k3)
    if q > bound:
        raise UniquenessError(f"rank {q} exceeds the identifiability bound {bound} for dims {t.shape}, k3={k3}")
    ys = spatial_smooth(unfold(t, 1).T, k3, i2)
    return esprit_factors(ys, q, t.shape, k3)


def kruskal_max_targets(i1: int, i2: int, i3: int) -> int:
    """Largest ``Q`` with ``min(I1,Q) + min(I2,Q) + min(I3,Q) >= 2Q + 2`` (0 if none)."""
    if min(i1, i2, i3) < 1:
        raise ValueError("dimensions must be >= 1")
    best = 0
    for q in range(1, i1 + i2 + i3 + 1):
        if min(i1, q) + min(i2, q) + min(i3, q) >= 2 * q + 2:
            best = q
    return best


def vandermonde_max_targets(i1: int, i2: int, i3: int, k3: int) -> int:
    """Generic bound ``min(I2 (k3 - 1), I1 (I3 - k3 + 1))`` for Vandermonde ``B3``."""
    if not 2 <= k3 <= i3:
        raise ValueError(f"k3 must lie in [2, {i3}], got {k3}")
    return min(i2 * (k3 - 1), i1 * (i3 - k3 + 1))


def vandermonde_rank_test(f: FactorTriple, k3: int, tol: float = 1e-9) -> bool:
    """Exact (non-generic) uniqueness test on given factors.

    Checks that both ``B3[:k3-1] kr B2`` and ``B3[:L3] kr B1`` have full
    column rank at relative threshold ``tol``.
    """
    b1, b2, b3 = f
    q = b1.shape[1]
    l3 = b3.shape[0] - k3 + 1

    def full_rank(a):
        s = np.linalg.svd(a, compute_uv=False)
        return len(s) >= q and s[q - 1] > tol * s[0]

    return full_rank(khatri_rao(b3[: k3 - 1], b2)) and full_rank(khatri_rao(b3[:l3], b1))


@dataclass(frozen=True)
class ResolvableTable:
    n_values: tuple[int, ...]
    rows: tuple[tuple[str, tuple[int, ...]], ...]

    def to_csv(self) -> str:
        lines = ["bound," + ",".join(str(n) for n in self.n_values)]
        lines += [label + "," + ",".join(str(v) for v in vals) for label, vals in self.rows]
        return "\n".join(lines) + "\n"


def resolvable_table(m_re: int, k: int, n_values: Sequence[int], k3_values: Sequence[int]) -> ResolvableTable:
    """Maximum number of resolvable targets per uniqueness bound over a grid of ``N``."""
    n_values = tuple(int(n) for n in n_values)
    rows = [("kruskal", tuple(kruskal_max_targets(m_re, n, k) for n in n_values))]
    for k3 in k3_values:
        rows.append((f"vandermonde_k3={k3}", tuple(vandermonde_max_targets(m_re, n, k, int(k3)) for n in n_values)))
    return ResolvableTable(n_values, tuple(rows))
