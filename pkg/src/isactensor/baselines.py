"""Reference estimators: unstructured ALS-CPD, 1-D MUSIC and a range-velocity matched filter."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._search import grid, grid_refine_max, local_maxima
from .errors import IllConditioned
from .extraction import ParamEstimates, correlation_angle, estimate_coefficients
from .signal_model import ArrayConfig, steering_matrix, ula_response
from .tensor import FactorTriple, cpd_reconstruct, khatri_rao, unfold
from .vandermonde import TrainingPattern, delay_response, doppler_response

ALS_WARNING = ("ALS does not exploit the Vandermonde structure: AoD is estimated ignoring Doppler, "
               "so the two remain coupled and biased")


@dataclass(frozen=True)
class AlsResult:
    factors: FactorTriple
    fit: float
    iterations: int
    residuals: np.ndarray


def _random_factors(dims, q, rng):
    return [(rng.standard_normal((d, q)) + 1j * rng.standard_normal((d, q))) / np.sqrt(2) for d in dims]


def _ls_update(unf: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``min_X ||unf - X khatri_rao(a, b)^T||`` through the Hadamard Gram matrix."""
    gram = (a.conj().T @ a) * (b.conj().T @ b)
    rhs = unf @ khatri_rao(a, b).conj()
    if not np.all(np.isfinite(gram)):
        raise np.linalg.LinAlgError("singular ALS normal equations")
    ev = np.linalg.eigvalsh(gram)  # Hermitian PSD, so these are the singular values
    if ev[0] <= 0 or ev[-1] > 1e12 * ev[0]:
        raise np.linalg.LinAlgError("singular ALS normal equations")
    return np.linalg.solve(gram, rhs.T).T


def _als_single(t, q, max_iter, tol, rng):
    norm_t = np.linalg.norm(t)
    u1, u2, u3 = unfold(t, 1), unfold(t, 2), unfold(t, 3)
    _, b2, b3 = _random_factors(t.shape, q, rng)
    residuals = []
    prev = np.inf
    for it in range(1, max_iter + 1):
        b1 = _ls_update(u1, b3, b2)
        b2 = _ls_update(u2, b3, b1)
        b3 = _ls_update(u3, b2, b1)
        # Rebalance column norms so no factor drifts to huge or tiny values.
        n1, n2, n3 = (np.linalg.norm(b, axis=0) for b in (b1, b2, b3))
        s = np.cbrt(n1 * n2 * n3)
        b1, b2, b3 = b1 * (s / n1), b2 * (s / n2), b3 * (s / n3)
        res = np.linalg.norm(t - cpd_reconstruct(FactorTriple(b1, b2, b3))) / norm_t
        residuals.append(res)
        if abs(prev - res) < tol:
            break
        prev = res
    return AlsResult(FactorTriple(b1, b2, b3), residuals[-1], it, np.array(residuals))


def als_cpd_detailed(t: np.ndarray, q: int, max_iter: int = 1000, tol: float = 1e-10, rng=None,
                     n_init: int = 3, max_restarts: int = 3) -> AlsResult:
    """ALS-CPD from ``n_init`` random complex Gaussian starts, keeping the best fit.

    A start that hits a singular update is replaced by a fresh random start,
    at most ``max_restarts`` times in total.
    """
    if q < 1:
        raise ValueError("rank must be >= 1")
    t = np.asarray(t, dtype=complex)
    if np.linalg.norm(t) == 0:
        raise ValueError("cannot factorize a zero tensor")
    rng = np.random.default_rng(rng)
    best = None
    restarts = 0
    done = 0
    while done < n_init:
        try:
            res = _als_single(t, q, max_iter, tol, rng)
        except np.linalg.LinAlgError:
            restarts += 1
            if restarts > max_restarts:
                break
            continue
        done += 1
        if best is None or res.fit < best.fit:
            best = res
    if best is None:
        raise IllConditioned("every ALS start hit a singular update")
    return best


def als_cpd(t: np.ndarray, q: int, max_iter: int = 1000, tol: float = 1e-10, rng=None, n_init: int = 3) -> FactorTriple:
    """Unconstrained CPD by alternating least squares."""
    return als_cpd_detailed(t, q, max_iter, tol, rng, n_init).factors


def _correlation_max(col: np.ndarray, templates_fn, lo: float, hi: float, n_grid: int) -> float:
    col = col / np.linalg.norm(col)

    def f(x):
        a = templates_fn(x)
        return np.abs(col.conj() @ a) ** 2 / np.sum(np.abs(a) ** 2, axis=0)

    return grid_refine_max(f, lo, hi, n_grid)


def als_parameters(t: np.ndarray, training: TrainingPattern, cfg: ArrayConfig, q: int, rng=None,
                   factors: FactorTriple | None = None, rx: str = "bs", n_grid: int = 2048) -> ParamEstimates:
    """Parameters from ALS factors by per-column correlation searches.

    AoA and delay use correlations with the receive steering vector and the
    delay response; AoD is searched ignoring Doppler, then the Doppler is
    searched once given that AoD.
    """
    f = als_cpd(t, q, rng=rng) if factors is None else factors
    b1, b2, b3 = f
    k = np.arange(1, training.n_subcarriers + 1)
    p = training.precoder
    n_sym = training.n_symbols
    nu_lim = 0.5 / cfg.t_sym
    aoa = np.array([correlation_angle(b1[:, j], 0.0, cfg.d_over_lambda, n_grid) for j in range(q)])
    delay = np.array([_correlation_max(b3[:, j], lambda tau: delay_response(tau, cfg, k), 0.0, cfg.t_cp, 4096)
                      for j in range(q)])
    aod = np.array([np.arcsin(_correlation_max(b2[:, j], lambda s: p.T @ ula_response(cfg.m_bs, s, 0.0, cfg.d_over_lambda),
                                               -1.0, 1.0, n_grid)) for j in range(q)])
    doppler = np.empty(q)
    for j in range(q):
        x = p.T @ steering_matrix(cfg.m_bs, [aod[j]], 0.0, cfg.d_over_lambda)[:, 0]
        doppler[j] = _correlation_max(b2[:, j], lambda nu: doppler_response(nu, cfg.t_sym, n_sym) * x[:, None],
                                      -nu_lim, nu_lim, 4096)
    partial = ParamEstimates(aoa, delay, aod, doppler, np.zeros(q, complex))
    coeff = estimate_coefficients(t, partial, training, cfg, rx)
    return ParamEstimates(aoa, delay, aod, doppler, coeff, factors=None)


def music_spectrum(snapshots: np.ndarray, q: int, sines: np.ndarray, steering=None) -> np.ndarray:
    """MUSIC pseudospectrum ``1 / ||E_n^H a||^2`` on ``sines``.

    ``steering(sines)`` returns the candidate response vectors as columns;
    it defaults to a half-wavelength ULA with ``m`` elements.
    """
    x = np.asarray(snapshots, dtype=complex)
    m, s = x.shape
    if q >= m:
        raise ValueError(f"MUSIC needs fewer sources ({q}) than sensors ({m})")
    if s < q:
        raise ValueError("fewer snapshots than sources")
    r = x @ x.conj().T / s
    _, vecs = np.linalg.eigh(r)
    en = vecs[:, : m - q]
    a = ula_response(m, sines) if steering is None else steering(sines)
    proj = np.sum(np.abs(en.conj().T @ a) ** 2, axis=0) / np.sum(np.abs(a) ** 2, axis=0)
    return 1.0 / np.maximum(proj, 1e-300)


def music_peaks(spectrum: np.ndarray, sines: np.ndarray, q: int) -> np.ndarray:
    """Sines of up to ``q`` highest local maxima of a pseudospectrum."""
    idx = local_maxima(spectrum)
    idx = idx[np.argsort(spectrum[idx])[::-1]][:q]
    return sines[idx]


def music_1d(snapshots: np.ndarray, q: int, grid_size: int = 4096, steering=None, pad: bool = False) -> np.ndarray:
    """Angles (rad) of the ``q`` strongest MUSIC peaks.

    Fewer than ``q`` angles come back when the spectrum has fewer peaks;
    ``pad=True`` repeats the strongest peak to always return ``q`` values.
    """
    sines = grid(-1.0, 1.0, grid_size)
    pseudo = music_spectrum(snapshots, q, sines, steering)
    found = music_peaks(pseudo, sines, q)
    if pad and 0 < found.size < q:
        found = np.concatenate([found, np.repeat(found[:1], q - found.size)])
    return np.arcsin(found)


def music_angles(t: np.ndarray, training: TrainingPattern, cfg: ArrayConfig, q: int, grid_size: int = 4096):
    """AoA from the receive array (every (n, k) pair is a snapshot) and AoD in transmit beamspace.

    The AoD search treats each row of the mode-2 unfolding as a snapshot of
    the ``N``-dimensional beamspace with response ``P^T a_bs(phi)``.
    """
    aoa = music_1d(unfold(t, 1), q, grid_size, pad=True)
    p = training.precoder

    def beamspace(s):
        return p.T @ ula_response(cfg.m_bs, s, 0.0, cfg.d_over_lambda)

    aod = music_1d(unfold(t, 2), q, grid_size, steering=beamspace, pad=True)
    return aoa, aod


@dataclass(frozen=True)
class MfPeak:
    delay: float
    doppler: float
    power: float


def matched_filter_map(echo: np.ndarray, cfg: ArrayConfig, delays: np.ndarray, dopplers: np.ndarray) -> np.ndarray:
    """Correlation power ``|a_do(nu)^H Y a_td(tau)^*|^2`` on a delay x Doppler grid.

    ``echo`` is ``N x K`` (one antenna) or ``m x N x K``; in the latter case
    the per-antenna maps are summed incoherently.
    """
    y = np.asarray(echo, dtype=complex)
    if y.ndim == 2:
        y = y[None]
    _, n_sym, n_sub = y.shape
    a_td = delay_response(delays, cfg, np.arange(1, n_sub + 1))
    a_do = doppler_response(dopplers, cfg.t_sym, n_sym)
    corr = np.einsum("nv,mnk,kt->mvt", a_do.conj(), y, a_td.conj(), optimize=True)
    return np.sum(np.abs(corr) ** 2, axis=0) / (n_sym * n_sub)


def matched_filter_range_velocity(echo: np.ndarray, cfg: ArrayConfig, q: int, delays=None, dopplers=None,
                                  guard=(1.0, 1.0)) -> list[MfPeak]:
    """Top ``q`` peaks of the matched-filter map after non-maximum suppression.

    Peaks closer than ``guard`` Rayleigh cells (``1/(K delta_f)`` in delay,
    ``1/(N T_sym)`` in Doppler) to a stronger peak are suppressed.
    """
    y = np.asarray(echo)
    n_sym, n_sub = y.shape[-2:]
    delays = grid(0.0, cfg.t_cp, 512) if delays is None else np.asarray(delays)
    if dopplers is None:
        lim = 0.5 / cfg.t_sym
        dopplers = grid(-lim, lim, 512)
    dopplers = np.asarray(dopplers)
    power = matched_filter_map(y, cfg, delays, dopplers)
    cell_tau = 1.0 / (n_sub * cfg.delta_f)
    cell_nu = 1.0 / (n_sym * cfg.t_sym)
    order = np.argsort(power, axis=None)[::-1]
    peaks: list[MfPeak] = []
    for flat in order:
        iv, it = np.unravel_index(flat, power.shape)
        tau, nu = delays[it], dopplers[iv]
        if all(abs(tau - p.delay) >= guard[0] * cell_tau or abs(nu - p.doppler) >= guard[1] * cell_nu for p in peaks):
            peaks.append(MfPeak(float(tau), float(nu), float(power[iv, it])))
            if len(peaks) == q:
                break
    return peaks
