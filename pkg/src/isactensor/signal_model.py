"""Array geometry, steering vectors and frequency-domain channel matrices.

Index conventions follow the OFDM grid: symbols ``n = 1..N`` and subcarriers
``k = 1..K`` are 1-based, antenna elements are 0-based (element 0 is the
phase reference).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class ArrayConfig:
    """Antenna counts, carrier/bandwidth and OFDM timing.

    ``t_cp`` defaults to half the effective symbol duration, ``1 / (2 delta_f)``.
    """

    m_bs: int = 64
    m_re: int = 8
    m_ue: int = 8
    f_c: float = 28e9
    f_s: float = 100e6
    k0: int = 128
    t_cp: float | None = None
    d_over_lambda: float = 0.5

    def __post_init__(self):
        for name in ("m_bs", "m_re", "m_ue", "k0"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.f_s <= 0 or self.f_c <= 0:
            raise ValueError("f_s and f_c must be positive")
        if self.t_cp is None:
            object.__setattr__(self, "t_cp", 0.5 / self.delta_f)
        if self.t_cp < 0:
            raise ValueError("t_cp must be non-negative")

    @property
    def delta_f(self) -> float:
        return self.f_s / self.k0

    @property
    def t_eff(self) -> float:
        return 1.0 / self.delta_f

    @property
    def t_sym(self) -> float:
        return self.t_eff + self.t_cp

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.f_c

    @property
    def delay_period(self) -> float:
        """Delay ambiguity ``K0 / f_s``; only ``tau mod delay_period`` is observable."""
        return self.k0 / self.f_s

    def freq_ratio(self, k: int | np.ndarray) -> float | np.ndarray:
        """Subcarrier frequency offset relative to the carrier, ``k delta_f / f_c``."""
        return np.asarray(k) * self.delta_f / self.f_c

    def rx_antennas(self, rx: str) -> int:
        if rx == "bs":
            return self.m_re
        if rx == "ue":
            return self.m_ue
        raise ValueError(f"rx must be 'bs' or 'ue', got {rx!r}")


class ScatterKind(enum.Enum):
    TARGETS = "targets"
    MULTIPATHS = "multipaths"
    TARGETS_WITH_INTERFERERS = "targets_with_interferers"


@dataclass(frozen=True)
class Scatterer:
    """One target echo or propagation path: gain, angles (rad), delay (s), Doppler (Hz)."""

    coeff: complex
    aoa: float
    aod: float
    delay: float
    doppler: float


@dataclass(frozen=True)
class ScatterSet:
    scatterers: tuple[Scatterer, ...]
    kind: ScatterKind = ScatterKind.TARGETS

    def __post_init__(self):
        object.__setattr__(self, "scatterers", tuple(self.scatterers))
        if not self.scatterers:
            raise ValueError("a ScatterSet needs at least one scatterer")

    @classmethod
    def from_arrays(cls, coeff, aoa, aod, delay, doppler, kind=ScatterKind.TARGETS):
        cols = np.broadcast_arrays(*(np.atleast_1d(x) for x in (coeff, aoa, aod, delay, doppler)))
        rows = zip(*cols)
        return cls(
            tuple(Scatterer(complex(c), float(a), float(b), float(t), float(v)) for c, a, b, t, v in rows),
            kind,
        )

    def __len__(self):
        return len(self.scatterers)

    def __iter__(self):
        return iter(self.scatterers)

    def __getitem__(self, i):
        return self.scatterers[i]

    @property
    def coeffs(self) -> np.ndarray:
        return np.array([s.coeff for s in self.scatterers], dtype=complex)

    @property
    def aoas(self) -> np.ndarray:
        return np.array([s.aoa for s in self.scatterers])

    @property
    def aods(self) -> np.ndarray:
        return np.array([s.aod for s in self.scatterers])

    @property
    def delays(self) -> np.ndarray:
        return np.array([s.delay for s in self.scatterers])

    @property
    def dopplers(self) -> np.ndarray:
        return np.array([s.doppler for s in self.scatterers])

    def delay_generators(self, cfg: ArrayConfig) -> np.ndarray:
        return np.exp(-2j * np.pi * self.delays * cfg.f_s / cfg.k0)

    def check(self, cfg: ArrayConfig) -> None:
        """Validate the physical ranges against ``cfg``; raises ``ValueError``."""
        if np.any(np.abs(self.aoas) >= np.pi / 2) or np.any(np.abs(self.aods) >= np.pi / 2):
            raise ValueError("angles must lie in (-pi/2, pi/2)")
        if np.any(self.delays < 0) or np.any(self.delays > cfg.t_cp * (1 + 1e-12)):
            raise ValueError("delays must lie in [0, t_cp]")
        if np.any(np.abs(self.dopplers) * cfg.t_sym >= 0.5):
            raise ValueError("Doppler shifts must satisfy |nu| t_sym < 1/2")
        if _min_generator_gap(self.delay_generators(cfg)) < 1e-9:
            raise ValueError("delay generators must be pairwise distinct")


def _min_generator_gap(z: np.ndarray) -> float:
    if len(z) < 2:
        return np.inf
    phase = np.angle(z)
    gap = np.abs(phase[:, None] - phase[None, :]) / (2 * np.pi)
    gap = np.minimum(gap, 1 - gap)
    return float(gap[np.triu_indices(len(z), 1)].min())


def steering_vector(m: int, angle: float, freq_ratio: float = 0.0, d_over_lambda: float = 0.5) -> np.ndarray:
    """Uniform linear array response ``exp(-j 2 pi (1 + f/f_c) (d/lambda) i sin(angle))``."""
    if m < 1:
        raise ValueError("antenna count must be >= 1")
    if freq_ratio < 0:
        raise ValueError("freq_ratio must be >= 0")
    i = np.arange(m)
    return np.exp(-2j * np.pi * (1.0 + freq_ratio) * d_over_lambda * i * np.sin(angle))


def steering_matrix(m: int, angles, freq_ratio: float = 0.0, d_over_lambda: float = 0.5) -> np.ndarray:
    """Columns are :func:`steering_vector` for each entry of ``angles``."""
    angles = np.atleast_1d(np.asarray(angles, dtype=float))
    return ula_response(m, np.sin(angles), freq_ratio, d_over_lambda)


def ula_response(m: int, sines, freq_ratio: float = 0.0, d_over_lambda: float = 0.5) -> np.ndarray:
    """Steering matrix parameterized directly by ``sin(angle)`` (m x len(sines))."""
    sines = np.atleast_1d(np.asarray(sines, dtype=float))
    i = np.arange(m)[:, None]
    return np.exp(-2j * np.pi * (1.0 + freq_ratio) * d_over_lambda * i * sines[None, :])


def _channel(scatterers: ScatterSet, n: int, k: int, cfg: ArrayConfig, m_rx: int, beam_squint: bool) -> np.ndarray:
    if not 1 <= k <= cfg.k0:
        raise IndexError(f"subcarrier index {k} outside 1..{cfg.k0}")
    if n < 1:
        raise IndexError(f"symbol index {n} must be >= 1")
    ratio = float(cfg.freq_ratio(k)) if beam_squint else 0.0
    a_rx = steering_matrix(m_rx, scatterers.aoas, ratio, cfg.d_over_lambda)
    a_tx = steering_matrix(cfg.m_bs, scatterers.aods, ratio, cfg.d_over_lambda)
    w = (
        scatterers.coeffs
        * np.exp(-2j * np.pi * scatterers.delays * cfg.f_s * k / cfg.k0)
        * np.exp(2j * np.pi * n * scatterers.dopplers * cfg.t_sym)
    )
    return (a_rx * w) @ a_tx.T


def sensing_channel(scatterers: ScatterSet, n: int, k: int, cfg: ArrayConfig, beam_squint: bool = False) -> np.ndarray:
    """Sensing channel ``G_{n,k}`` (m_re x m_bs) at symbol ``n`` and subcarrier ``k``."""
    return _channel(scatterers, n, k, cfg, cfg.m_re, beam_squint)


def comm_channel(paths: ScatterSet, n: int, k: int, cfg: ArrayConfig, beam_squint: bool = False) -> np.ndarray:
    """Downlink channel ``H_{n,k}`` (m_ue x m_bs) at symbol ``n`` and subcarrier ``k``."""
    return _channel(paths, n, k, cfg, cfg.m_ue, beam_squint)


@dataclass(frozen=True)
class ScenarioBounds:
    """Sampling ranges for random scenarios (defaults reproduce the reference setup)."""

    angle_max: float = np.pi / 3
    v_max: float = 30.0
    nu_max: float = 2.8e3
    delay_max: float | None = None
    monostatic: bool = False


def max_target_doppler(cfg: ArrayConfig, v_max: float) -> float:
    """Round-trip Doppler ``2 V f_c / c``."""
    return 2.0 * v_max * cfg.f_c / SPEED_OF_LIGHT


def generate_scenario(
    seed,
    count: int,
    cfg: ArrayConfig,
    bounds: ScenarioBounds = ScenarioBounds(),
    kind: ScatterKind | str = ScatterKind.TARGETS,
    n_interferers: int = 0,
) -> ScatterSet:
    """Draw a random scatter set.

    Targets take a round-trip Doppler from a velocity uniform in
    ``[-v_max, v_max]``; multipaths take a Doppler uniform in
    ``[-nu_max/2, nu_max/2]``. Interferers are extra targets appended after
    the ``count`` true ones.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    kind = ScatterKind(kind)
    rng = np.random.default_rng(seed)
    total = count + n_interferers
    if n_interferers and kind is ScatterKind.TARGETS:
        kind = ScatterKind.TARGETS_WITH_INTERFERERS
    delay_max = cfg.t_cp if bounds.delay_max is None else bounds.delay_max

    coeff = (rng.standard_normal(total) + 1j * rng.standard_normal(total)) / np.sqrt(2)
    aoa = rng.uniform(-bounds.angle_max, bounds.angle_max, total)
    aod = aoa.copy() if bounds.monostatic else rng.uniform(-bounds.angle_max, bounds.angle_max, total)
    if kind is ScatterKind.MULTIPATHS:
        doppler = rng.uniform(-bounds.nu_max / 2, bounds.nu_max / 2, total)
    else:
        velocity = rng.uniform(-bounds.v_max, bounds.v_max, total)
        doppler = 2.0 * velocity * cfg.f_c / SPEED_OF_LIGHT
    delay = rng.uniform(0.0, delay_max, total)
    while _min_generator_gap(np.exp(-2j * np.pi * delay * cfg.f_s / cfg.k0)) < 1e-9:
        delay = rng.uniform(0.0, delay_max, total)
    return ScatterSet.from_arrays(coeff, aoa, aod, delay, doppler, kind)


def delay_to_range(delay, round_trip: bool = True):
    return SPEED_OF_LIGHT * np.asarray(delay) / (2.0 if round_trip else 1.0)


def doppler_to_velocity(doppler, f_c: float, round_trip: bool = True):
    return SPEED_OF_LIGHT * np.asarray(doppler) / ((2.0 if round_trip else 1.0) * f_c)
