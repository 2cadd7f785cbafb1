"""Physical parameters from estimated CPD factors.

Each column of the first factor gives an angle of arrival by correlation,
each Vandermonde generator gives a delay by its phase, and each column of
the second factor gives an (AoD, Doppler) pair by alternating two
one-dimensional problems that are solved in closed form through polynomial
rooting. Complex gains follow from a final least-squares fit.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from ._search import grid_refine_max
from .errors import Degenerate, IllConditioned
from .signal_model import (ArrayConfig, ScatterKind, ScatterSet, comm_channel, sensing_channel, steering_matrix,
                           ula_response)
from .tensor import khatri_rao
from .vandermonde import (FactorEstimate, TrainingPattern, cpd_vandermonde, delay_response, doppler_response)


@dataclass(frozen=True)
class ParamEstimates:
    """Per-scatterer estimates; entry ``q`` of every array belongs to the same scatterer.

    ``trace[q]`` holds the normalized AoD/Doppler objective after each
    alternation round for scatterer ``q``; ``clamped[q]`` flags an AoD whose
    sine had to be clipped into ``[-1, 1]``.
    """

    aoa: np.ndarray
    delay: np.ndarray
    aod: np.ndarray
    doppler: np.ndarray
    coeff: np.ndarray
    trace: tuple[np.ndarray, ...] = ()
    clamped: np.ndarray | None = None
    factors: FactorEstimate | None = field(default=None, compare=False, repr=False)

    def __len__(self):
        return len(self.aoa)

    def to_scatterset(self, kind: ScatterKind = ScatterKind.TARGETS) -> ScatterSet:
        return ScatterSet.from_arrays(self.coeff, self.aoa, self.aod, self.delay, self.doppler, kind)


@dataclass(frozen=True)
class Alg1Options:
    k3: int | None = None
    i_iter: int = 30
    tol: float = 1e-10
    aoa_grid: int = 2048


def _as_column(v) -> np.ndarray:
    v = np.asarray(v, dtype=complex).ravel()
    if not np.any(v):
        raise ValueError("column is identically zero")
    return v


def correlation_angle(col: np.ndarray, freq_ratio: float = 0.0, d_over_lambda: float = 0.5,
                      n_grid: int = 2048) -> float:
    """Angle maximizing ``|col^H a(angle)|^2`` for a ULA with ``len(col)`` elements."""
    col = _as_column(col)
    m = col.size

    def f(s):
        return np.abs(ula_response(m, s, freq_ratio, d_over_lambda).T @ col.conj()) ** 2

    return float(np.arcsin(grid_refine_max(f, -1.0, 1.0, n_grid)))


def estimate_aoa(b1_col, cfg: ArrayConfig, n_grid: int = 2048) -> float:
    """Angle of arrival (rad) from one column of the receive-array factor."""
    return correlation_angle(b1_col, 0.0, cfg.d_over_lambda, n_grid)


def estimate_delay(z_tau: complex, cfg: ArrayConfig) -> float:
    """Delay (s) in ``[0, K0/f_s)`` from a unit-modulus delay generator."""
    if abs(abs(z_tau) - 1.0) > 1e-9:
        raise ValueError(f"delay generator must be unit modulus, |z| = {abs(z_tau)}")
    period = cfg.delay_period
    tau = (-cfg.k0 / (2 * np.pi * cfg.f_s) * np.angle(z_tau)) % period
    return 0.0 if tau >= period else float(tau)


def _laurent(w: np.ndarray) -> np.ndarray:
    """Coefficients ``c[m + M - 1]`` of ``a^H w a = sum_m c_m z^m`` with ``a = [1, z, ..., z^(M-1)]``."""
    m = w.shape[0]
    i, j = np.indices(w.shape)
    return np.bincount((j - i + m - 1).ravel(), weights=w.real.ravel(), minlength=2 * m - 1) + \
        1j * np.bincount((j - i + m - 1).ravel(), weights=w.imag.ravel(), minlength=2 * m - 1)


def _trig_eval(c: np.ndarray, omega, deriv: int = 0):
    """Real part of ``sum_k c_k (jk)^deriv e^{jk omega}``; vectorized over ``omega``."""
    m = (c.size - 1) // 2
    k = np.arange(-m, m + 1)
    omega = np.asarray(omega, dtype=float)
    vals = np.real(np.exp(1j * np.multiply.outer(omega, k)) @ (c * (1j * k) ** deriv))
    return float(vals) if vals.ndim == 0 else vals


def _trig_derivs(cs: np.ndarray, omega: float) -> np.ndarray:
    """Orders 0 to 2 of ``_trig_eval`` for each row of ``cs``, flattened row-major."""
    m = (cs.shape[1] - 1) // 2
    k = np.arange(-m, m + 1)
    terms = cs * np.exp(1j * k * omega)
    return np.real(terms @ np.stack([np.ones(k.size), 1j * k, -(k ** 2.0)], axis=1)).ravel()


def polynomial_min_generator(w: np.ndarray, gram: np.ndarray | None = None) -> complex:
    """Unit-modulus ``z`` minimizing ``a^H w a / a^H gram a`` with ``a = [1, z, ..., z^(M-1)]``.

    Candidates are the roots of the Laurent polynomial of ``w`` inside or on
    the unit circle, normalized to unit modulus. The best candidate is then
    polished by Newton steps on the derivative of the ratio, accepted only
    when they lower the objective. ``gram=None`` is the identity.
    """
    w = np.asarray(w, dtype=complex)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ValueError("w must be square")
    m = w.shape[0]
    scale = np.linalg.norm(w)
    if m < 2 or scale == 0 or not np.isfinite(scale):
        raise Degenerate("objective matrix is zero or too small to define a generator")
    c = _laurent(w / scale)
    g = np.zeros(2 * m - 1, complex) if gram is None else _laurent(np.asarray(gram, dtype=complex))
    if gram is None:
        g[m - 1] = m
    if np.max(np.abs(c)) < 1e-13:
        raise Degenerate("all Laurent coefficients vanish")

    def ratio(omega):
        return _trig_eval(c, omega) / _trig_eval(g, omega)

    roots = np.roots(c[::-1])
    roots = roots[np.isfinite(roots) & (roots != 0)]
    cand = roots[np.abs(roots) <= 1 + 1e-6]
    if cand.size == 0:
        cand = roots
    if cand.size == 0:
        raise Degenerate("Laurent polynomial has no usable roots")
    omegas = np.angle(cand)
    vals = ratio(omegas)
    best = float(omegas[int(np.argmin(vals))])
    best_val = float(vals.min())

    omega = best
    for _ in range(8):
        n0, n1, n2, d0, d1, d2 = _trig_derivs(np.stack([c, g]), omega)
        h = n1 * d0 - n0 * d1
        dh = n2 * d0 - n0 * d2
        if dh <= 0 or not np.isfinite(dh):
            break
        step = h / dh
        omega -= step
        if abs(step) < 1e-15:
            break
    # Near an exact zero the objective is dominated by round-off of order eps * sum|c|.
    slack = 1e-13 * np.abs(c).sum() / _trig_eval(g, best)
    stayed_local = abs(np.angle(np.exp(1j * (omega - best)))) < np.pi / m
    if np.isfinite(omega) and stayed_local and ratio(omega) <= best_val + slack:
        best = omega
    return complex(np.exp(1j * best))


def _alternation_objective(b: np.ndarray, x: np.ndarray, a_do: np.ndarray) -> float:
    """``1 - |b^H diag(a_do) x|^2 / (||b||^2 ||x||^2)``, in ``[0, 1]``.

    Evaluated as the relative residual of projecting ``b`` onto
    ``diag(a_do) x``, which stays accurate near zero.
    """
    u = a_do * x
    r = b - (np.vdot(u, b) / np.vdot(u, u).real) * u
    return float(np.vdot(r, r).real / np.vdot(b, b).real)


def _aod_from_generator(z: complex, d_over_lambda: float) -> tuple[float, bool]:
    s = -np.angle(z) / (2 * np.pi * d_over_lambda)
    clamped = abs(s) > 1
    return float(np.arcsin(np.clip(s, -1.0, 1.0))), bool(clamped)


def alternate_aod_doppler(b2_col, training: TrainingPattern, cfg: ArrayConfig, i_iter: int = 30,
                          tol: float = 1e-10) -> tuple[float, float, np.ndarray, bool]:
    """Alternate between the AoD and Doppler subproblems starting from zero Doppler.

    Returns ``(aod, doppler, trace, clamped)`` where ``trace`` is the
    normalized objective after each completed round.
    """
    if i_iter < 1:
        raise ValueError("i_iter must be >= 1")
    b = _as_column(b2_col)
    p = training.precoder
    n_sym = p.shape[1]
    if b.size != n_sym:
        raise ValueError(f"column has {b.size} entries, training has {n_sym} symbols")
    t_sym = cfg.t_sym
    nb2 = np.vdot(b, b).real
    eye = np.eye(n_sym)
    proj_b = nb2 * eye - np.outer(b, b.conj())

    nu = 0.0
    phi = None
    clamped_any = False
    trace = []
    for _ in range(i_iter):
        a_do = doppler_response([nu], t_sym, n_sym)[:, 0]
        d = a_do.conj() * b
        nd2 = np.vdot(d, d).real
        w_p = p.conj() @ (nd2 * eye - np.outer(d, d.conj())) @ p.T
        g_p = nd2 * (p.conj() @ p.T)
        z = polynomial_min_generator(w_p, g_p)
        phi_new, clamped = _aod_from_generator(z, cfg.d_over_lambda)
        x_new = p.T @ steering_matrix(cfg.m_bs, [phi_new], 0.0, cfg.d_over_lambda)[:, 0]
        if phi is not None:
            x_old = p.T @ steering_matrix(cfg.m_bs, [phi], 0.0, cfg.d_over_lambda)[:, 0]
            if _alternation_objective(b, x_old, a_do) < _alternation_objective(b, x_new, a_do):
                phi_new, x_new, clamped = phi, x_old, False
        clamped_any |= clamped

        w_q = x_new.conj()[:, None] * proj_b * x_new[None, :]
        g_q = nb2 * np.diag(np.abs(x_new) ** 2)
        z = polynomial_min_generator(w_q, g_q)
        nu_new = float(np.angle(z) / (2 * np.pi * t_sym))
        if _alternation_objective(b, x_new, doppler_response([nu_new], t_sym, n_sym)[:, 0]) > \
                _alternation_objective(b, x_new, a_do):
            nu_new = nu
        trace.append(_alternation_objective(b, x_new, doppler_response([nu_new], t_sym, n_sym)[:, 0]))

        converged = phi is not None and abs(phi_new - phi) < tol and abs(nu_new - nu) * t_sym < tol
        phi, nu = phi_new, nu_new
        if converged:
            break
    if clamped_any:
        warnings.warn("AoD sine fell outside [-1, 1] and was clamped", RuntimeWarning, stacklevel=2)
    return phi, nu, np.array(trace), clamped_any


def coefficient_design(aoa, aod, delay, doppler, training: TrainingPattern, cfg: ArrayConfig,
                       rx: str = "bs") -> np.ndarray:
    """Design matrix ``A_td kr (B2 kr B1)`` mapping gains to ``vec`` of the tensor (Fortran order)."""
    b1 = steering_matrix(cfg.rx_antennas(rx), aoa, 0.0, cfg.d_over_lambda)
    a_bs = steering_matrix(cfg.m_bs, aod, 0.0, cfg.d_over_lambda)
    b2 = doppler_response(doppler, cfg.t_sym, training.n_symbols) * (training.precoder.T @ a_bs)
    a_td = delay_response(delay, cfg, np.arange(1, training.n_subcarriers + 1))
    return khatri_rao(a_td, khatri_rao(b2, b1))


def estimate_coefficients(t: np.ndarray, params, training: TrainingPattern, cfg: ArrayConfig,
                          rx: str = "bs") -> np.ndarray:
    """Least-squares complex gains given all other parameters.

    ``params`` is anything exposing ``aoa``, ``aod``, ``delay`` and ``doppler``.
    """
    design = coefficient_design(params.aoa, params.aod, params.delay, params.doppler, training, cfg, rx)
    if design.shape[0] != t.size:
        raise ValueError("tensor size does not match the training pattern")
    s = np.linalg.svd(design, compute_uv=False)
    if s[-1] == 0 or s[0] / s[-1] > 1e12:
        raise IllConditioned("coefficient design matrix is rank deficient")
    return np.linalg.lstsq(design, np.asarray(t).ravel(order="F"), rcond=None)[0]


def run_algorithm1(t: np.ndarray, training: TrainingPattern, cfg: ArrayConfig, q: int,
                   opts: Alg1Options = Alg1Options(), rx: str = "bs") -> ParamEstimates:
    """Full pipeline: Vandermonde CPD, then per-column AoA, delay, AoD/Doppler, then gains."""
    est = cpd_vandermonde(t, q, opts.k3)
    b1, b2, _ = est.factors
    aoa = np.array([estimate_aoa(b1[:, i], cfg, opts.aoa_grid) for i in range(q)])
    delay = np.array([estimate_delay(z, cfg) for z in est.generators])
    aod = np.empty(q)
    doppler = np.empty(q)
    clamped = np.zeros(q, bool)
    traces = []
    for i in range(q):
        aod[i], doppler[i], tr, clamped[i] = alternate_aod_doppler(b2[:, i], training, cfg, opts.i_iter, opts.tol)
        traces.append(tr)
    partial = ParamEstimates(aoa, delay, aod, doppler, np.zeros(q, complex))
    coeff = estimate_coefficients(t, partial, training, cfg, rx)
    return ParamEstimates(aoa, delay, aod, doppler, coeff, tuple(traces), clamped, est)


def reconstruct_channel(params: ParamEstimates, cfg: ArrayConfig, n: int, k: int, beam_squint: bool = False,
                        rx: str = "ue") -> np.ndarray:
    """Channel matrix rebuilt from estimated parameters at symbol ``n``, subcarrier ``k``.

    ``rx="ue"`` gives the downlink channel, ``rx="bs"`` the sensing channel.
    """
    scat = params.to_scatterset(ScatterKind.MULTIPATHS if rx == "ue" else ScatterKind.TARGETS)
    return _channel_for(rx)(scat, n, k, cfg, beam_squint)


def _channel_for(rx: str):
    if rx == "ue":
        return comm_channel
    if rx == "bs":
        return sensing_channel
    raise ValueError(f"rx must be 'bs' or 'ue', got {rx!r}")


def channel_nmse(true_paths: ScatterSet, params: ParamEstimates, cfg: ArrayConfig, n: int, subcarriers,
                 beam_squint: bool = False, rx: str = "ue") -> float:
    """``sum_k ||H - H_hat||_F^2 / sum_k ||H||_F^2`` at symbol ``n``."""
    channel = _channel_for(rx)
    num = den = 0.0
    for k in subcarriers:
        h = channel(true_paths, n, int(k), cfg, beam_squint)
        h_hat = reconstruct_channel(params, cfg, n, int(k), beam_squint, rx)
        num += np.linalg.norm(h - h_hat) ** 2
        den += np.linalg.norm(h) ** 2
    if den == 0:
        raise ValueError("true channel is identically zero")
    return float(num / den)
