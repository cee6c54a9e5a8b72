"""YAML configuration.

Top-level keys are the fields of :class:`ExperimentGrid` (``model``,
``theta_star``, ``n``, ``k_grid``, ``estimators``, ``replications``, ``R``,
``master_seed``, ``fresh_data_per_replication``, ``level``, ``k1_analytic``,
``model_options``, ``quadrature``, ``optimizer``, ``table_step``), plus

``data_file``
    path of a one-column text dataset used when data are held fixed;
``phase``
    ``beta_grid``, ``n_grid``, ``estimator``, ``reps``, ``R``, ``k_floor``;
``diagnostics``
    ``theta``, ``phi``, ``k``, ``R``, ``k_grid``, ``draw_count``.

Relative paths are resolved against the config file's directory.
"""

from __future__ import annotations

import dataclasses
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .experiments import ExperimentGrid
from .models import load_dataset
from .optimize import OptimizerConfig
from .quadrature import QuadratureRule

GRID_KEYS = {f.name for f in dataclasses.fields(ExperimentGrid)} - {"dataset"}
EXTRA_KEYS = {"data_file", "phase", "diagnostics"}
PHASE_KEYS = {"beta_grid", "n_grid", "estimator", "reps", "R", "k_floor"}
DIAG_KEYS = {"theta", "phi", "k", "R", "k_grid", "draw_count"}
SHIPPED_DATA = "synthetic_gumbel_n100.txt"


class ConfigError(ValueError):
    pass


def _coerce(section: dict, cls) -> dict:
    """YAML reads 1e-8 as a string; cast fields to the dataclass's field types."""
    out = {}
    types = {f.name: f.type for f in dataclasses.fields(cls)}
    for key, value in section.items():
        if key not in types:
            raise ConfigError(f"unknown {cls.__name__} key {key!r}; expected one of {sorted(types)}")
        t = str(types[key])
        if "float" in t:
            value = float(value)
        elif "int" in t:
            value = int(value)
        out[key] = value
    return out


def shipped_dataset_path() -> Path:
    return Path(str(resources.files("iwvi_lab") / "data" / SHIPPED_DATA))


def load_config(path) -> dict:
    path = Path(path)
    raw = yaml.safe_load(path.read_text()) or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    unknown = set(raw) - GRID_KEYS - EXTRA_KEYS
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    for name, allowed in (("phase", PHASE_KEYS), ("diagnostics", DIAG_KEYS)):
        bad = set(raw.get(name) or {}) - allowed
        if bad:
            raise ConfigError(f"{path}: unknown {name} keys {sorted(bad)}")
    if raw.get("optimizer"):
        raw["optimizer"] = _coerce(raw["optimizer"], OptimizerConfig)
    if raw.get("quadrature"):
        raw["quadrature"] = _coerce(raw["quadrature"], QuadratureRule)
    if "data_file" in raw and raw["data_file"] is not None:
        p = Path(raw["data_file"])
        raw["data_file"] = str(p if p.is_absolute() else (path.parent / p).resolve())
    return raw


def grid_from_config(cfg: dict | None = None, **overrides) -> ExperimentGrid:
    cfg = dict(cfg or {})
    fields = {k: v for k, v in cfg.items() if k in GRID_KEYS}
    fields.update({k: v for k, v in overrides.items() if v is not None})
    data_file = overrides.get("data_file") or cfg.get("data_file")
    if data_file:
        fields["dataset"] = np.asarray(load_dataset(data_file), dtype=float).tolist()
    if "theta_star" in fields and isinstance(fields["theta_star"], (int, str)):
        fields["theta_star"] = float(fields["theta_star"])
    return ExperimentGrid(**{k: v for k, v in fields.items() if k != "data_file"})
