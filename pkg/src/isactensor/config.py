"""Flat TOML configuration files for sweeps and single estimation runs.

Every key sits at the top level. Unknown keys are rejected before any
computation. Recognized keys:

Array and timing
    ``m_bs``, ``m_re``, ``m_ue``, ``f_c``, ``f_s``, ``k0``, ``d_over_lambda``,
    ``t_cp`` (seconds) or ``t_cp_fraction`` (multiple of ``1 / delta_f``).
Scenario
    ``scenario`` (``targets`` | ``multipaths``), ``rx`` (``bs`` | ``ue``),
    ``num_targets`` (int or list), ``n_interferers``, ``n_symbols``,
    ``n_subcarriers``, ``n_d`` and ``l_segments`` (segment layout),
    ``beam_squint``, ``angle_max``, ``v_max``, ``nu_max``, ``delay_max``,
    ``monostatic``.
Run
    ``snr_db`` (number or list; ``inf`` allowed), ``trials``, ``algorithms``
    (list or single name), ``algorithm`` (alias used by ``estimate``),
    ``seed``, ``trim``, ``k3``, ``i_iter``, ``segment_k3``, ``align``,
    ``coeff_mode``, ``timing``, ``name``.
"""

from __future__ import annotations

import math
from importlib import resources
from pathlib import Path

import tomli

from .experiments import SweepConfig
from .signal_model import ArrayConfig, ScenarioBounds


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


ARRAY_KEYS = ("m_bs", "m_re", "m_ue", "f_c", "f_s", "k0", "d_over_lambda")
BOUNDS_KEYS = ("angle_max", "v_max", "nu_max", "delay_max", "monostatic")
RUN_KEYS = ("scenario", "rx", "n_interferers", "n_symbols", "n_subcarriers", "beam_squint", "trials", "seed",
            "trim", "k3", "i_iter", "segment_k3", "align", "coeff_mode", "timing", "name")
OTHER_KEYS = ("t_cp", "t_cp_fraction", "num_targets", "n_d", "l_segments", "snr_db", "algorithms", "algorithm")
KNOWN_KEYS = frozenset(ARRAY_KEYS + BOUNDS_KEYS + RUN_KEYS + OTHER_KEYS)

FIGURES = {
    "fig3": ("fig3.toml",),
    "fig4": ("fig4.toml",),
    "fig5": ("fig5.toml",),
    "fig6": ("fig6.toml",),
    "fig7": ("fig7.toml",),
    "fig8": ("fig8_600mhz.toml", "fig8_1ghz.toml"),
}


def _as_tuple(v, cast):
    items = v if isinstance(v, list) else [v]
    return tuple(cast(x) for x in items)


def _snr(x) -> float:
    if isinstance(x, str) and x.strip().lower() in ("inf", "+inf"):
        return math.inf
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise ConfigError(f"invalid SNR value {x!r}")
    return float(x)


def parse_config(data: dict, source: str = "<config>") -> SweepConfig:
    """Validate a flat key/value mapping and build a :class:`SweepConfig`."""
    unknown = sorted(set(data) - KNOWN_KEYS)
    if unknown:
        raise ConfigError(f"{source}: unknown keys {unknown}")
    for key, value in data.items():
        if isinstance(value, dict):
            raise ConfigError(f"{source}: key {key!r} must be a scalar or list, not a table")
    if "t_cp" in data and "t_cp_fraction" in data:
        raise ConfigError(f"{source}: give t_cp or t_cp_fraction, not both")
    if "algorithm" in data and "algorithms" in data:
        raise ConfigError(f"{source}: give algorithm or algorithms, not both")
    if ("n_d" in data) != ("l_segments" in data):
        raise ConfigError(f"{source}: n_d and l_segments must be given together")
    try:
        arr = {k: data[k] for k in ARRAY_KEYS if k in data}
        if "t_cp" in data:
            arr["t_cp"] = float(data["t_cp"])
        array = ArrayConfig(**arr)
        if "t_cp_fraction" in data:
            array = ArrayConfig(**arr, t_cp=float(data["t_cp_fraction"]) / array.delta_f)
        bounds = ScenarioBounds(**{k: data[k] for k in BOUNDS_KEYS if k in data})
        kw = {k: data[k] for k in RUN_KEYS if k in data}
        if "num_targets" in data:
            kw["num_targets"] = _as_tuple(data["num_targets"], int)
        if "n_d" in data:
            kw["segment"] = (int(data["n_d"]), int(data["l_segments"]))
        if "snr_db" in data:
            kw["snr_db"] = _as_tuple(data["snr_db"], _snr)
        algos = data.get("algorithms", data.get("algorithm"))
        if algos is not None:
            kw["algorithms"] = _as_tuple(algos, str)
        return SweepConfig(array=array, bounds=bounds, **kw)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from exc


def load_config(path) -> SweepConfig:
    """Read and validate a TOML config file."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc.strerror or exc}") from exc
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{p}: {exc}") from exc
    cfg = parse_config(data, str(p))
    if "name" not in data:
        from dataclasses import replace
        cfg = replace(cfg, name=p.stem)
    return cfg


def bundled_config_path(filename: str) -> Path:
    return Path(str(resources.files("isactensor") / "configs" / filename))


def figure_configs(figure: str) -> list[SweepConfig]:
    """Bundled configs reproducing one experiment; ``fig8`` yields the two bandwidths."""
    if figure not in FIGURES:
        raise ConfigError(f"unknown figure {figure!r}; choose from {sorted(FIGURES)}")
    return [load_config(bundled_config_path(name)) for name in FIGURES[figure]]
