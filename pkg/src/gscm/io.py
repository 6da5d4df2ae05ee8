"""CSV and JSON persistence for panels, graphs, draws and index products.

Input schemas
-------------
features    ``area_id,group,feature,estimate,sd`` (long format, one row per
            area and feature; area and feature order follow first appearance)
adjacency   ``area_a,area_b`` (one row per undirected edge)
population  ``area_id,population``

All floats are written with 17 significant digits so values round-trip.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import ConfigError, DataValidationError
from .graph import AdjacencyGraph, build_graph
from .sampler import PosteriorDraws

__all__ = [
    "FLOAT_FORMAT",
    "read_features",
    "write_features",
    "read_adjacency",
    "write_adjacency",
    "read_population",
    "write_population",
    "write_json",
    "read_json",
    "write_csv",
    "write_draws",
    "read_draws",
]

FLOAT_FORMAT = "%.17g"
FEATURE_COLUMNS = ["area_id", "group", "feature", "estimate", "sd"]


def _read_csv(path, columns, what) -> pd.DataFrame:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"{what} file not found: {path}")
    df = pd.read_csv(path, dtype={"area_id": str, "area_a": str, "area_b": str, "group": str, "feature": str},
                     keep_default_na=False, na_values=[""])
    missing = [c for c in columns if c not in df.columns]
    if missing:
        raise DataValidationError(f"{path} lacks columns {missing}")
    return df


def write_csv(df: pd.DataFrame, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def _finite_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")


def write_json(obj, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_finite_default)
        fh.write("\n")


def read_json(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"JSON file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path} is not valid JSON: {exc}") from exc


# ---- panels -------------------------------------------------------------------


def read_features(path):
    """Read the long feature file.

    Returns
    -------
    estimate, sd : ndarray ``(N, K)``
    area_ids, group_labels, feature_names : list of str
    """
    df = _read_csv(path, FEATURE_COLUMNS, "features")
    if df[FEATURE_COLUMNS].isna().any().any():
        raise DataValidationError(f"{path} has missing values")
    if df.duplicated(["area_id", "feature"]).any():
        raise DataValidationError(f"{path} has duplicate (area_id, feature) rows")
    areas = list(dict.fromkeys(df["area_id"]))
    features = list(dict.fromkeys(df["feature"]))
    if len(df) != len(areas) * len(features):
        raise DataValidationError(f"{path} is not a complete area x feature grid")
    groups = df.groupby("area_id", sort=False)["group"].nunique()
    if (groups > 1).any():
        raise DataValidationError(f"areas with more than one group label: {groups[groups > 1].index.tolist()}")
    group_of = dict(zip(df["area_id"], df["group"]))
    est = df.pivot(index="area_id", columns="feature", values="estimate").loc[areas, features]
    sd = df.pivot(index="area_id", columns="feature", values="sd").loc[areas, features]
    try:
        est_arr, sd_arr = est.to_numpy(dtype=float), sd.to_numpy(dtype=float)
    except ValueError as exc:
        raise DataValidationError(f"{path} has non-numeric estimates: {exc}") from exc
    return est_arr, sd_arr, areas, [group_of[a] for a in areas], features


def write_features(path, estimate, sd, area_ids, group_labels, feature_names) -> None:
    estimate = np.asarray(estimate, dtype=float)
    sd = np.asarray(sd, dtype=float)
    N, K = estimate.shape
    df = pd.DataFrame({
        "area_id": np.repeat(list(area_ids), K),
        "group": np.repeat(list(group_labels), K),
        "feature": np.tile(list(feature_names), N),
        "estimate": estimate.reshape(-1),
        "sd": sd.reshape(-1),
    })
    write_csv(df, path)


def read_adjacency(path, area_ids) -> AdjacencyGraph:
    df = _read_csv(path, ["area_a", "area_b"], "adjacency")
    index = {a: i for i, a in enumerate(area_ids)}
    unknown = sorted(set(df["area_a"]).union(df["area_b"]) - set(index))
    if unknown:
        raise DataValidationError(f"adjacency references unknown areas: {unknown[:10]}")
    edges = [(index[a], index[b]) for a, b in zip(df["area_a"], df["area_b"])]
    return build_graph(len(area_ids), edges)


def write_adjacency(path, graph: AdjacencyGraph, area_ids) -> None:
    ids = np.asarray(list(area_ids), dtype=object)
    df = pd.DataFrame({"area_a": ids[graph.edges[:, 0]], "area_b": ids[graph.edges[:, 1]]})
    write_csv(df, path)


def read_population(path, area_ids) -> np.ndarray:
    df = _read_csv(path, ["area_id", "population"], "population")
    if df["area_id"].duplicated().any():
        raise DataValidationError(f"{path} has duplicate area ids")
    lookup = dict(zip(df["area_id"], df["population"]))
    missing = [a for a in area_ids if a not in lookup]
    if missing:
        raise DataValidationError(f"population missing for areas {missing[:10]}")
    P = np.array([lookup[a] for a in area_ids], dtype=float)
    if not np.all(np.isfinite(P)):
        raise DataValidationError("populations must be finite")
    return P


def write_population(path, P, area_ids) -> None:
    write_csv(pd.DataFrame({"area_id": list(area_ids), "population": np.asarray(P, dtype=float)}), path)


# ---- draws -------------------------------------------------------------------

_INDEX_COLUMNS = ["chain", "draw"]


def _names(name: str, shape: tuple) -> list[str]:
    if len(shape) == 0:
        return [name]
    grid = np.indices(shape).reshape(len(shape), -1).T + 1
    return [f"{name}[{','.join(map(str, idx))}]" for idx in grid]


def _draw_frame(x: np.ndarray, chain: np.ndarray, name: str) -> pd.DataFrame:
    n = x.shape[0]
    draw = np.concatenate([np.arange(np.sum(chain == c)) for c in np.unique(chain)])
    flat = x.reshape(n, -1)
    df = pd.DataFrame(flat, columns=_names(name, x.shape[1:]))
    df.insert(0, "draw", draw)
    df.insert(0, "chain", chain)
    return df


def write_draws(path, draws: PosteriorDraws, manifest: dict) -> None:
    """Persist draws as one CSV per parameter plus ``manifest.json``.

    ``manifest`` is extended with chain counts, seeds, divergences and the
    stored array shapes; callers add the model-level entries.
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    shapes = {}
    for name, x in draws.params.items():
        write_csv(_draw_frame(x, draws.chain, name), path / f"{name}.csv")
        shapes[name] = list(x.shape[1:])
    if draws.log_lik is not None:
        write_csv(_draw_frame(draws.log_lik, draws.chain, "log_lik"), path / "log_lik.csv")
        shapes["log_lik"] = list(draws.log_lik.shape[1:])
    write_csv(_draw_frame(draws.unconstrained, draws.chain, "theta"), path / "unconstrained.csv")
    shapes["unconstrained"] = list(draws.unconstrained.shape[1:])
    stats = pd.DataFrame({k: np.asarray(v) for k, v in draws.stats.items()})
    stats.insert(0, "draw", _draw_frame(draws.unconstrained[:, :0], draws.chain, "x")["draw"])
    stats.insert(0, "chain", draws.chain)
    write_csv(stats, path / "sampler_stats.csv")
    full = dict(manifest)
    full.update({
        "n_chains": draws.n_chains,
        "n_draws": draws.n_draws,
        "seeds": list(draws.seeds or []),
        "n_divergent": np.asarray(draws.n_divergent).tolist() if draws.n_divergent is not None else None,
        "step_size": np.asarray(draws.step_size).tolist() if draws.step_size is not None else None,
        "shapes": shapes,
    })
    write_json(full, path / "manifest.json")


def read_draws(path) -> tuple[PosteriorDraws, dict]:
    path = Path(path)
    manifest = read_json(path / "manifest.json")
    shapes = manifest["shapes"]
    params, chain, log_lik, theta = {}, None, None, None
    for name, shape in shapes.items():
        file = path / f"{name}.csv"
        if not file.is_file():
            raise ConfigError(f"draws directory lacks {file.name}")
        df = pd.read_csv(file)
        chain = df["chain"].to_numpy()
        x = df.drop(columns=_INDEX_COLUMNS).to_numpy(dtype=float).reshape(len(df), *shape)
        if name == "log_lik":
            log_lik = x.reshape(len(df), -1)
        elif name == "unconstrained":
            theta = x
        else:
            params[name] = x
    stats_df = pd.read_csv(path / "sampler_stats.csv")
    stats = {c: stats_df[c].to_numpy() for c in stats_df.columns if c not in _INDEX_COLUMNS}
    draws = PosteriorDraws(params=params, chain=chain, unconstrained=theta, log_lik=log_lik, stats=stats,
                           step_size=np.asarray(manifest.get("step_size")),
                           n_divergent=np.asarray(manifest.get("n_divergent")), seeds=manifest.get("seeds"))
    return draws, manifest
