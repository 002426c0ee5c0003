"""Experiment configuration files (YAML) and scenario construction."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .. import noise as _noise
from ..kernels import KernelSpec, RkhsFunction, load_tabulated_csv, sample_rkhs_function
from ..regression import make_grid


class ConfigError(ValueError):
    pass


@dataclass
class Scenario:
    kernel: KernelSpec
    domain: np.ndarray
    f: RkhsFunction | None
    C_k: float
    noise: Any
    tau: float
    delta: float
    seeds: list[int]
    raw: dict


def load_config(path) -> dict:
    """Read a YAML mapping; any parse failure becomes :class:`ConfigError`."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        cfg = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"config {path} must be a mapping")
    cfg.setdefault("_base", str(Path(path).resolve().parent))
    return cfg


def require(cfg: dict, key: str, kind=None):
    if key not in cfg:
        raise ConfigError(f"missing config key {key!r}")
    val = cfg[key]
    if kind is not None:
        try:
            val = kind(val)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"config key {key!r}: {exc}") from exc
    return val


def build_kernel(cfg: dict) -> KernelSpec:
    kcfg = require(cfg, "kernel")
    if not isinstance(kcfg, dict):
        raise ConfigError("kernel must be a mapping")
    try:
        if kcfg.get("family") == "tabulated" and "csv" in kcfg:
            path = Path(kcfg["csv"])
            if not path.is_absolute():
                path = Path(cfg.get("_base", ".")) / path
            return load_tabulated_csv(path)
        return KernelSpec.from_dict(kcfg)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad kernel spec: {exc}") from exc


def build_domain(cfg: dict, kernel: KernelSpec) -> np.ndarray:
    dcfg = require(cfg, "domain")
    if not isinstance(dcfg, dict):
        raise ConfigError("domain must be a mapping")
    try:
        if "points" in dcfg:
            return kernel.points(np.asarray(dcfg["points"], dtype=float))
        if "grid" in dcfg:
            g = dcfg["grid"]
            return make_grid(g.get("bounds", [0.0, 1.0]), int(g["resolution"]), kernel.dim)
        if dcfg.get("all_ids") and kernel.table is not None:
            return kernel.points(np.arange(kernel.table.shape[0], dtype=float))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad domain spec: {exc}") from exc
    raise ConfigError("domain needs 'points', 'grid' or 'all_ids'")


def build_objective(cfg: dict, kernel: KernelSpec, domain: np.ndarray) -> tuple[RkhsFunction | None, float]:
    ocfg = cfg.get("objective")
    if ocfg is None:
        return None, float(cfg.get("C_k", 1.0))
    try:
        norm = float(ocfg.get("norm", 1.0))
        f = sample_rkhs_function(
            kernel, int(ocfg.get("num_centers", 10)), norm, int(ocfg.get("seed", 0)),
            bounds=tuple(ocfg.get("bounds", (0.0, 1.0))),
            candidates=domain if ocfg.get("centers_on_domain", False) else None,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad objective spec: {exc}") from exc
    return f, float(ocfg.get("C_k", norm))


def build_scenario(cfg: dict) -> Scenario:
    kernel = build_kernel(cfg)
    domain = build_domain(cfg, kernel)
    f, C_k = build_objective(cfg, kernel, domain)
    try:
        noise = _noise.from_config(cfg.get("noise", {"family": "gaussian", "sigma": 0.1}))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad noise spec: {exc}") from exc
    tau = require(cfg, "tau", float)
    delta = require(cfg, "delta", float)
    if not tau > 0 or not 0 < delta < 1:
        raise ConfigError("need tau > 0 and delta in (0, 1)")
    seeds = cfg.get("seeds", [0])
    if not isinstance(seeds, list) or not all(isinstance(s, int) for s in seeds):
        raise ConfigError("seeds must be a list of integers")
    return Scenario(kernel, domain, f, C_k, noise, tau, delta, seeds, cfg)


def lengthscale_scenarios(cfg: dict) -> list[Scenario]:
    """One scenario per entry of the optional ``lengthscales`` list.

    Each entry replaces ``kernel.lengthscale``; the objective is redrawn for
    the swept kernel so its RKHS norm stays as configured.
    """
    values = cfg.get("lengthscales")
    if values is None:
        return [build_scenario(cfg)]
    if not isinstance(values, list) or not values or not all(isinstance(v, (int, float)) and v > 0 for v in values):
        raise ConfigError("lengthscales must be a nonempty list of positive numbers")
    if not isinstance(cfg.get("kernel"), dict) or cfg["kernel"].get("family") == "tabulated":
        raise ConfigError("lengthscales need a stationary kernel")
    return [build_scenario(dict(cfg, kernel=dict(cfg["kernel"], lengthscale=float(v)))) for v in values]


def int_list(cfg: dict, key: str, default=None) -> list[int]:
    val = cfg.get(key, default)
    if val is None:
        raise ConfigError(f"missing config key {key!r}")
    if not isinstance(val, list) or not all(isinstance(v, int) and v > 0 for v in val):
        raise ConfigError(f"{key} must be a list of positive integers")
    return val
