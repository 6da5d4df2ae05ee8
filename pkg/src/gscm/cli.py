"""Command-line pipeline: ``gscm {simulate,transform,explore,fit,metrics,index}``.

Exit codes: 0 success, 2 configuration error, 3 convergence failure
(some R-hat above 1.05 without ``--allow-nonconverged``), 4 data validation
error, 1 any other package error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .config import RunConfig, load_run_config
from .errors import ConfigError, ConvergenceError, DataValidationError, GSCMError
from .explore import explore, pca_feature_order
from .fitting import RHAT_THRESHOLD, autocorrelation_table, fit_gscm, monitored_scalars
from .graph import lattice_graph
from .indices import build_indices, hbi_weights, summarise_index
from .io import (
    read_adjacency,
    read_draws,
    read_features,
    read_population,
    write_adjacency,
    write_csv,
    write_draws,
    write_features,
    write_json,
    write_population,
)
from .metrics import FitReport
from .model import FeaturePanel, ModelParams, simulate
from .transform import RawSurveyPanel, TransformStats, inverse_transform, transform_inputs

__all__ = ["main", "build_parser"]

log = logging.getLogger("gscm")

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_CONVERGENCE, EXIT_DATA = 0, 1, 2, 3, 4


# ---- shared helpers -----------------------------------------------------------


def _vector(value, n: int, name: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.size == 1:
        arr = np.full(n, float(arr[0]))
    if arr.shape != (n,):
        raise ConfigError(f"simulate.{name} needs 1 or {n} values, got {arr.size}")
    return arr


def _load_panel(rc: RunConfig, need_population: bool = False):
    """Features, graph and (optional) populations named by the run config."""
    est, sd, areas, groups, features = read_features(rc.path("features"))
    P = None
    pop_path = rc.path("population")
    if pop_path is not None and (need_population or pop_path.is_file()):
        P = read_population(pop_path, areas)
    graph = read_adjacency(rc.path("adjacency"), areas)
    stats = None
    if rc["features_scale"] == "proportion":
        panel, stats = transform_inputs(RawSurveyPanel(est, sd, areas, P, groups, features))
    else:
        panel = FeaturePanel(Y=est, S=sd, P=P, area_ids=areas, feature_names=features, group_labels=groups)
    return panel, graph, stats


def _order_features(panel: FeaturePanel, graph, rc: RunConfig, args) -> FeaturePanel:
    order = rc["feature_order"]
    if getattr(args, "feature_order", None):
        order = [s.strip() for s in args.feature_order.split(",")]
    if getattr(args, "order_by_pca", False):
        order = "pca"
    if order is None:
        return panel
    if order == "pca":
        order = pca_feature_order(explore(panel, graph, n_permutations=0))
        log.info("feature order from PCA: %s", ", ".join(order))
    return panel.reorder_features(order)


def _config(args) -> RunConfig:
    overrides = list(args.set or [])
    if getattr(args, "no_measurement_error", False):
        overrides.append("model.measurement_error=false")
    if getattr(args, "point_weights", False):
        overrides.append("index.point_weights=true")
    return load_run_config(args.config, overrides)


# ---- subcommands ---------------------------------------------------------------


def cmd_simulate(args) -> int:
    rc = _config(args)
    sim = rc["simulate"]
    cfg = rc.model_config()
    loadings = np.atleast_2d(np.asarray(sim["loadings"], dtype=float))
    K, L = loadings.shape
    if L != cfg.n_factors:
        raise ConfigError(f"simulate.loadings has {L} columns but model.n_factors is {cfg.n_factors}")
    cfg.validate(K)
    rows, cols = int(sim["rows"]), int(sim["cols"])
    graph = lattice_graph(rows, cols)
    N = graph.n_areas
    n_groups = int(sim["n_groups"])
    if not 1 <= n_groups <= rows:
        raise ConfigError("simulate.n_groups must lie in [1, rows]")
    width = len(str(N))
    area_ids = [f"A{i + 1:0{width}d}" for i in range(N)]
    groups = [f"G{1 + (i // cols) * n_groups // rows}" for i in range(N)]
    features = [f"F{k + 1}" for k in range(K)]
    aux = np.random.default_rng([rc.seed, 1])
    S_spec = np.atleast_1d(np.asarray(sim["S"], dtype=float))
    if not cfg.measurement_error:
        S = np.zeros((N, K))
    elif S_spec.size == 2:
        S = aux.uniform(S_spec[0], S_spec[1], size=(N, K))
    else:
        S = np.full((N, K), float(S_spec[0]))
    pop_spec = np.atleast_1d(np.asarray(sim["population"], dtype=float))
    P = (np.round(np.exp(aux.uniform(*np.log(pop_spec[:2]), size=N))) if pop_spec.size == 2
         else np.full(N, float(pop_spec[0])))
    truth_in = ModelParams(loadings=loadings, z=None, u=None, tau=_vector(sim["tau"], K, "tau"),
                           rho=_vector(sim["rho"], L, "rho"), kappa=_vector(sim["kappa"], K, "kappa"))
    panel, truth = simulate(cfg, truth_in, graph, rc.seed, S=S, return_truth=True, area_ids=area_ids,
                            feature_names=features, group_labels=groups, P=P)
    out = Path(args.out) if args.out else rc.output_dir / "simulated"
    write_features(out / "features.csv", panel.Y, panel.S, area_ids, groups, features)
    raw_stats = TransformStats(mean=np.full(K, float(sim["raw_mean"])), sd=np.full(K, float(sim["raw_sd"])))
    pi = inverse_transform(panel.Y, raw_stats)
    sigma = np.maximum(panel.S, 1e-3) * raw_stats.sd * pi * (1.0 - pi)
    write_features(out / "features_raw.csv", pi, sigma, area_ids, groups, features)
    write_adjacency(out / "adjacency.csv", graph, area_ids)
    write_population(out / "population.csv", P, area_ids)
    write_json({
        "seed": rc.seed,
        "loadings": truth.loadings,
        "tau": truth.tau,
        "rho": truth.rho,
        "kappa": truth.kappa,
        "z": truth.z,
        "u": truth.u,
        "mu": truth.z @ truth.loadings.T + truth.u * truth.tau,
        "area_ids": area_ids,
        "feature_names": features,
    }, out / "truth.json")
    print(f"simulated {N} areas x {K} features -> {out}")
    return EXIT_OK


def cmd_transform(args) -> int:
    rc = _config(args)
    est, sd, areas, groups, features = read_features(rc.path("features"))
    panel, stats = transform_inputs(RawSurveyPanel(est, sd, areas, None, groups, features))
    out = Path(args.out) if args.out else rc.output_dir / "transformed"
    write_features(out / "features.csv", panel.Y, panel.S, areas, groups, features)
    write_json({"features": features, "transform": stats.to_dict()}, out / "transform.json")
    print(f"transformed {len(areas)} areas x {len(features)} features -> {out}")
    return EXIT_OK


def cmd_explore(args) -> int:
    rc = _config(args)
    panel, graph, _ = _load_panel(rc)
    report = explore(panel, graph, n_permutations=int(rc["explore"]["n_permutations"]), seed=rc.seed)
    report["pca_feature_order"] = pca_feature_order(report)
    out = Path(args.out) if args.out else rc.output_dir / "explore.json"
    write_json(report, out)
    for name, m in report["moran"].items():
        print(f"{name}: Moran's I = {m['I']:.4f} (p = {m['p_value']:.4f})")
    return EXIT_OK


def cmd_fit(args) -> int:
    rc = _config(args)
    panel, graph, stats = _load_panel(rc)
    panel = _order_features(panel, graph, rc, args)
    cfg = rc.model_config()
    scfg = rc.sampler_config()
    result = fit_gscm(panel, cfg, graph, scfg)
    out = Path(args.out) if args.out else rc.output_dir / "draws"
    series = monitored_scalars(result.draws, result.model)
    manifest = {
        "model": {k: (v.value if hasattr(v, "value") else [x.value for x in v] if isinstance(v, list) else v)
                  for k, v in vars(cfg).items()},
        "sampler": {k: v for k, v in vars(scfg).items()},
        "area_ids": panel.area_ids,
        "group_labels": panel.group_labels,
        "feature_names": panel.feature_names,
        "population": panel.P,
        "transform": stats.to_dict() if stats is not None else None,
        "deviance_at_mean": result.deviance_at_mean,
        "diagnostics": result.diagnostics.to_dict(orient="records"),
        "max_rhat": result.max_rhat,
    }
    write_draws(out, result.draws, manifest)
    write_features(out / "data.csv", panel.Y, panel.S, panel.area_ids, panel.group_labels, panel.feature_names)
    write_csv(result.diagnostics, out / "diagnostics.csv")
    write_csv(autocorrelation_table(series), out / "autocorrelation.csv")
    if result.report is not None:
        write_json(result.report.to_dict(), out / "fit_report.json")
        r = result.report
        print(f"DIC {r.dic:.2f}  WAIC {r.waic:.2f} (p_waic {r.p_waic:.2f})  MAB {r.mab:.4f}")
    else:
        log.warning("fewer than the minimum draws for fit metrics; fit_report.json not written")
    n_div = int(np.sum(result.draws.n_divergent))
    print(f"draws -> {out}  (max R-hat {result.max_rhat:.3f}, {n_div} divergent transitions)")
    if not result.converged() and not args.allow_nonconverged:
        raise ConvergenceError(f"max R-hat {result.max_rhat:.3f} exceeds {RHAT_THRESHOLD}; "
                               "rerun longer or pass --allow-nonconverged")
    return EXIT_OK


def _report_for(draws_dir: Path) -> FitReport:
    draws, manifest = read_draws(draws_dir)
    Y = read_features(draws_dir / "data.csv")[0]
    if draws.log_lik is None or "mu" not in draws.params:
        raise ConfigError(f"{draws_dir} lacks log_lik or mu draws")
    return FitReport.from_draws(draws.log_lik, manifest["deviance_at_mean"], Y, draws.params["mu"])


def cmd_metrics(args) -> int:
    dirs = [Path(d) for d in args.draws]
    names = args.names.split(",") if args.names else [d.name if d.name != "draws" else d.parent.name
                                                      for d in dirs]
    if len(names) != len(dirs):
        raise ConfigError("--names must list one name per draws directory")
    rows = []
    for name, d in zip(names, dirs):
        rep = _report_for(d)
        write_json(rep.to_dict(), d / "fit_report.json")
        rows.append({"model": name, "DIC": rep.dic, "WAIC": rep.waic, "p_WAIC": rep.p_waic, "MAB": rep.mab})
    table = pd.DataFrame(rows)
    if args.out:
        write_csv(table, args.out)
    print(table.to_string(index=False))
    return EXIT_OK


def cmd_index(args) -> int:
    rc = _config(args)
    draws_dir = Path(args.draws) if args.draws else rc.output_dir / "draws"
    draws, manifest = read_draws(draws_dir)
    opts = rc["index"]
    z = draws.params["z"]
    L = z.shape[2]
    P = np.asarray(manifest["population"], dtype=float)
    indices = build_indices(z, draws.params["loadings"], P, point_weights=bool(opts["point_weights"]))
    if L != 2:
        log.warning("HBI and PAHBI need exactly two factors (model has %d); writing factor indices only", L)
    out = Path(args.out) if args.out else rc.output_dir / "index"
    signs = opts["signs"]
    for name, idx in indices.items():
        table = summarise_index(idx, manifest["area_ids"], manifest["group_labels"],
                                sign=float(signs.get(name, 1)), mass=float(opts["hpdi_mass"]))
        write_csv(table, out / f"{name}.csv")
    if "hbi" in indices:
        w = np.atleast_2d(indices["hbi"].weights)
        write_csv(pd.DataFrame({"w1": w[:, 0], "w2": w[:, 1]}), out / "weights.csv")
        point = hbi_weights(draws.params["loadings"], point=True)
        print(f"HBI weights at median loadings: w1 = {point[0]:.3f}, w2 = {point[1]:.3f}")
    print(f"{len(indices)} index files -> {out}")
    return EXIT_OK


# ---- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gscm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config entry (dotted key, JSON value); repeatable")
        p.add_argument("--out", help="output location (default under output_dir)")
        return p

    p = with_config(sub.add_parser("simulate", help="generate a synthetic panel with known parameters"))
    p.set_defaults(func=cmd_simulate)
    p = with_config(sub.add_parser("transform", help="proportions and SEs to the modelling scale"))
    p.set_defaults(func=cmd_transform)
    p = with_config(sub.add_parser("explore", help="correlations, PCA and Moran's I"))
    p.set_defaults(func=cmd_explore)
    p = with_config(sub.add_parser("fit", help="sample the posterior and write draws"))
    p.add_argument("--allow-nonconverged", action="store_true", help="exit 0 even if some R-hat > 1.05")
    p.add_argument("--no-measurement-error", action="store_true", help="fit the S = 0 special case")
    p.add_argument("--feature-order", help="comma-separated feature names to fit in this order")
    p.add_argument("--order-by-pca", action="store_true", help="order features by first-PC loading")
    p.set_defaults(func=cmd_fit)
    p = sub.add_parser("metrics", help="DIC, WAIC and MAB for one or more draws directories")
    p.add_argument("draws", nargs="+", help="draws directories written by 'fit'")
    p.add_argument("--names", help="comma-separated model names for the comparison table")
    p.add_argument("--out", help="comparison CSV path")
    p.set_defaults(func=cmd_metrics)
    p = with_config(sub.add_parser("index", help="index summaries from fitted draws"))
    p.add_argument("--draws", help="draws directory (default output_dir/draws)")
    p.add_argument("--point-weights", action="store_true", help="HBI weights from median loadings")
    p.set_defaults(func=cmd_index)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataValidationError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ConvergenceError as exc:
        print(f"convergence failure: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except GSCMError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
