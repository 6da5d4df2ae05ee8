"""Run configuration for the command-line pipeline.

A run is described by a JSON document; every key has a default, so a config
file only needs the entries it changes. Relative paths are resolved against
the directory of the config file. ``--set key=value`` overrides use dotted
keys (``sampler.n_chains=2``) and JSON-parsed values, falling back to the raw
string.
"""

from __future__ import annotations

import copy
import json
from dataclasses import fields
from pathlib import Path

from .errors import ConfigError
from .model import ModelConfig
from .priors import PriorKind
from .sampler import SamplerConfig

__all__ = ["DEFAULTS", "RunConfig", "apply_overrides", "load_run_config"]

DEFAULTS: dict = {
    "features": "features.csv",
    "features_scale": "model",
    "adjacency": "adjacency.csv",
    "population": "population.csv",
    "output_dir": "gscm_out",
    "seed": 0,
    "feature_order": None,
    "model": {
        "n_factors": 2,
        "shared_prior": "LCAR",
        "residual_prior": "LCAR",
        "first_residual_iid": True,
        "measurement_error": True,
        "loading_scale": 1.0,
        "tau_shape": 2.0,
        "tau_rate": 3.0,
        "beta_a": 6.0,
        "beta_b": 2.0,
        "soft_zero_scale": None,
    },
    "sampler": {
        "n_chains": 4,
        "n_warmup": 4000,
        "n_sampling": 6000,
        "thin": 3,
        "target_accept": 0.8,
        "max_tree_depth": 10,
        "n_jobs": None,
    },
    "index": {
        "signs": {"factor1": 1, "factor2": 1, "hbi": 1, "pahbi": 1},
        "point_weights": False,
        "hpdi_mass": 0.95,
    },
    "explore": {"n_permutations": 999},
    "simulate": {
        "rows": 6,
        "cols": 6,
        "n_groups": 2,
        "loadings": [[0.8, 0.0], [0.3, 0.6], [-0.4, 0.5], [0.2, 0.4]],
        "tau": 0.3,
        "rho": 0.9,
        "kappa": 0.5,
        "S": [0.2, 0.4],
        "population": [1000, 50000],
        "raw_mean": -1.0,
        "raw_sd": 0.5,
    },
}

_PATH_KEYS = ("features", "adjacency", "population", "output_dir")


def _merge(base: dict, extra: dict, prefix: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in extra.items():
        if key not in out:
            raise ConfigError(f"unknown config key '{prefix}{key}'")
        if isinstance(out[key], dict) and key != "signs":
            if not isinstance(value, dict):
                raise ConfigError(f"config key '{prefix}{key}' must be an object")
            out[key] = _merge(out[key], value, f"{prefix}{key}.")
        else:
            out[key] = value
    return out


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(doc: dict, overrides) -> dict:
    """Apply ``key=value`` strings with dotted keys to a config dict."""
    doc = copy.deepcopy(doc)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override '{item}' is not of the form key=value")
        key, text = item.split("=", 1)
        parts = key.strip().split(".")
        node = doc
        for p in parts[:-1]:
            if p not in node or not isinstance(node[p], dict):
                raise ConfigError(f"unknown config key '{key}'")
            node = node[p]
        if parts[-1] not in node and parts[-2:-1] != ["signs"]:
            raise ConfigError(f"unknown config key '{key}'")
        node[parts[-1]] = _parse_value(text)
    return doc


class RunConfig:
    """Validated view over a merged config document."""

    def __init__(self, doc: dict, base_dir: Path | str = "."):
        self.doc = _merge(DEFAULTS, doc)
        self.base_dir = Path(base_dir)
        self.model_config()
        self.sampler_config()
        if self.doc["features_scale"] not in ("model", "proportion"):
            raise ConfigError("features_scale must be 'model' or 'proportion'")
        order = self.doc["feature_order"]
        if order is not None and order != "pca" and not isinstance(order, list):
            raise ConfigError("feature_order must be null, 'pca' or a list of feature names")

    def __getitem__(self, key):
        return self.doc[key]

    def path(self, key: str) -> Path | None:
        value = self.doc[key]
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def output_dir(self) -> Path:
        return self.path("output_dir")

    @property
    def seed(self) -> int:
        seed = self.doc["seed"]
        if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        return seed

    def model_config(self) -> ModelConfig:
        m = dict(self.doc["model"])
        try:
            for key in ("shared_prior", "residual_prior"):
                v = m[key]
                m[key] = [PriorKind.parse(x) for x in v] if isinstance(v, list) else PriorKind.parse(v)
            known = {f.name for f in fields(ModelConfig)}
            return ModelConfig(**{k: v for k, v in m.items() if k in known})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid model options: {exc}") from exc

    def sampler_config(self) -> SamplerConfig:
        try:
            return SamplerConfig(seed=self.seed, **self.doc["sampler"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid sampler options: {exc}") from exc

    def to_dict(self) -> dict:
        return copy.deepcopy(self.doc)


def load_run_config(path=None, overrides=None) -> RunConfig:
    """Read a JSON config (optional), apply overrides and validate."""
    doc, base = {}, Path(".")
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        base = path.parent
    merged = _merge(DEFAULTS, doc)
    return RunConfig(apply_overrides(merged, overrides), base)
