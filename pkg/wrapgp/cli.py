"""
Command line of wrapgp.

    wrapgp generate-data --kind J_R2xC_S2 --output-dir out
    wrapgp train --data out/dataset.json --experiment r2s2 --output-dir out
    wrapgp metric-grid --model out/model.json --resolution 50 --output-dir out
    wrapgp geodesic --model out/model.json --start -1 0 --end 1 0 --solver graph --output-dir out
    wrapgp decode --model out/model.json --latent latent.csv --output-dir out
    wrapgp benchmark --kind J_R2xC_S2 --seeds 0 1 2 --holdout 1 --output-dir out

Exit codes: 0 success, 2 usage / configuration / input errors, 3 numerical failures.
Every command records its artifacts and the config digest in <output-dir>/manifest.json.
"""

__all__ = ["main", "build_parser", "EXIT_OK", "EXIT_USAGE", "EXIT_NUMERICAL"]

import argparse
import os
import sys
from typing import Optional, Sequence

import numpy as np
from astropy.table import Table

from .artifact import SYNTHETIC_KINDS, generate_synthetic
from .core import EXPERIMENT_NAMES, RunConfig, config, load_user_config
from .dataset import Dataset
from .evaluation import Variant, benchmark, latent_bounds
from .exceptions import (
    ConsistencyError,
    FactorizationError,
    ManifoldMismatchError,
    NonFiniteObjectiveError,
)
from .geodesics import decode_curve, graph_geodesic, spline_geodesic, straight_line
from .lvm import LatentModel, train_map
from .pullback import KDEMetric, MetricField, metric_grid, write_metric_grid
from .utils import digest, read_json, write_json, write_table_csv

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERICAL = 3

# checked before the usage errors, FloatingPointError is an ArithmeticError, not a ValueError
NUMERICAL_ERRORS = (
    FactorizationError,
    NonFiniteObjectiveError,
    ConsistencyError,
    FloatingPointError,
    MemoryError,
    np.linalg.LinAlgError,
)
USAGE_ERRORS = (ValueError, FileNotFoundError, KeyError, RuntimeError, OSError)
# training failures that mark a benchmark variant as failed
TRAINING_ERRORS = (FactorizationError, NonFiniteObjectiveError, ConsistencyError, MemoryError,
                   np.linalg.LinAlgError)


# ################################################ #
# helpers                                          #
# ################################################ #


def _path(args, name: str) -> str:
    return os.path.join(args.output_dir, name)


def _update_manifest(output_dir: str, command: str, artifacts: Sequence[str], config_digest: str) -> str:
    """Merge the artifacts of one command into <output_dir>/manifest.json."""
    path = os.path.join(output_dir, "manifest.json")
    manifest = read_json(path) if os.path.exists(path) else dict(artifacts=[], runs={})
    rel = sorted(os.path.relpath(os.path.abspath(a), os.path.abspath(output_dir)) for a in artifacts)
    manifest["artifacts"] = sorted(set(manifest.get("artifacts", [])) | set(rel))
    manifest.setdefault("runs", {})[command] = dict(artifacts=rel, config_digest=config_digest)
    return write_json(path, manifest)


def _user_config(args) -> dict:
    return load_user_config(args.config) if getattr(args, "config", None) else {}


def _run_config(args, dataset: Dataset, **extra) -> RunConfig:
    """flags > user TOML > experiment preset > packaged defaults"""
    user = _user_config(args)
    overrides = dict(
        Q=args.Q,
        iterations=args.iterations,
        learning_rate=args.learning_rate,
        seed=args.seed,
        gpdm=args.gpdm,
        gamma_lengthscale=args.gamma_lengthscale,
        back_constraints=args.back_constraints,
        task_rank=args.task_rank,
        per_task_noise=args.per_task_noise,
        wrapped=args.wrapped,
        volume_correction=args.volume_correction,
        output_dir=args.output_dir,
    )
    overrides.update(extra)
    cfg = RunConfig.from_dict(user.get("run", {}), experiment=args.experiment, **overrides)
    if args.experiment is None and "spec" not in user.get("run", {}):
        cfg.spec = str(dataset.spec)
    if cfg.spec != str(dataset.spec):
        raise ManifoldMismatchError(f"@wrapgp: config spec {cfg.spec} does not match the data ({dataset.spec})")
    return cfg


def _floats(values: Optional[Sequence[float]], n: Optional[int], name: str) -> Optional[np.ndarray]:
    if values is None:
        return None
    x = np.asarray(values, dtype=float)
    if n is not None and x.shape[0] != n:
        raise ValueError(f"@wrapgp: {name} needs {n} values, got {x.shape[0]}")
    return x


def _bounds(args, model: LatentModel) -> np.ndarray:
    if args.bounds is None:
        return latent_bounds(model.X)
    return _floats(args.bounds, 4, "--bounds").reshape(2, 2)


def _metric(args, model: LatentModel):
    if args.metric == "kde":
        if args.kde_sigma is None:
            raise ValueError("@wrapgp: --metric kde needs --kde-sigma")
        return KDEMetric(model.X, args.kde_sigma)
    return MetricField(model)


def _ambient_table(coords: np.ndarray) -> Table:
    return Table({f"q{i + 1}": coords[:, i] for i in range(coords.shape[1])})


# ################################################ #
# commands                                         #
# ################################################ #


def cmd_generate_data(args) -> int:
    dataset = generate_synthetic(args.kind, args.n_traj, args.n_points, args.noise, args.seed)
    path = dataset.save(_path(args, args.out))
    settings = dict(kind=args.kind, n_traj=args.n_traj, n_points=args.n_points, noise=args.noise, seed=args.seed)
    if args.verbose:
        print(f"@generate_data: {dataset} --> {path}")
    _update_manifest(args.output_dir, "generate-data", [path], digest(settings))
    return EXIT_OK


def cmd_train(args) -> int:
    dataset = Dataset.load(args.data)
    if args.thin is not None:
        dataset = dataset.thin(args.thin)
    cfg = _run_config(args, dataset)
    model = train_map(dataset, cfg, verbose=args.verbose)
    model_path = model.save(_path(args, f"{args.name}.json"))
    trace = Table(dict(
        iter=np.arange(len(model.objective_trace), dtype=int),
        log_posterior=np.asarray(model.objective_trace, dtype=float),
    ))
    trace_path = write_table_csv(_path(args, f"{args.name}_trace.csv"), trace)
    if args.verbose:
        print(f"@train: {model} --> {model_path}")
    _update_manifest(args.output_dir, "train", [model_path, trace_path], cfg.digest())
    return EXIT_OK


def cmd_metric_grid(args) -> int:
    model = LatentModel.load(args.model)
    bounds = _bounds(args, model)
    grid = metric_grid(_metric(args, model), bounds, args.resolution, n_jobs=args.n_jobs,
                       verbose=int(args.verbose))
    extra = dict(metric=args.metric, model=os.path.abspath(args.model))
    if args.kde_sigma is not None:
        extra["kde_sigma"] = args.kde_sigma
    csv_path, json_path = write_metric_grid(_path(args, args.out), grid, bounds, args.resolution, extra)
    settings = dict(bounds=bounds, resolution=args.resolution, metric=args.metric, kde_sigma=args.kde_sigma,
                    model=digest(read_json(args.model)))
    _update_manifest(args.output_dir, "metric-grid", [csv_path, json_path], digest(settings))
    return EXIT_OK


def cmd_geodesic(args) -> int:
    model = LatentModel.load(args.model)
    start = _floats(args.start, model.Q, "--start")
    end = _floats(args.end, model.Q, "--end")
    gcfg = dict(config["geodesic"], **_user_config(args).get("geodesic", {}))
    for key in ("resolution", "n_control", "n_quad", "iterations", "learning_rate"):
        value = getattr(args, key, None)
        if value is not None:
            gcfg[key] = value
    if args.solver == "straight":
        curve = straight_line(start, end, gcfg["n_quad"] + 1, metric=_metric(args, model))
    elif args.solver == "graph":
        curve = graph_geodesic(_metric(args, model), start, end, _bounds(args, model), gcfg["resolution"],
                               verbose=args.verbose)
    else:
        curve = spline_geodesic(
            _metric(args, model), start, end,
            n_control=gcfg["n_control"],
            n_quad=gcfg["n_quad"],
            iterations=gcfg["iterations"],
            lr=gcfg["learning_rate"],
            fd_step=gcfg["fd_step"],
            verbose=args.verbose,
        )
    settings = dict(solver=args.solver, metric=args.metric, kde_sigma=args.kde_sigma, start=start, end=end,
                    geodesic=gcfg, model=digest(read_json(args.model)))
    csv_path, json_path = curve.save(_path(args, f"{args.out}.csv"), dict(metric=args.metric))
    decoded = np.array([p.coords for p in decode_curve(model, curve)])
    decoded_path = write_table_csv(_path(args, f"{args.out}_decoded.csv"), _ambient_table(decoded))
    if args.verbose:
        print(f"@geodesic: {args.solver} length={curve.total_length:.6f} energy={curve.energy:.6f}")
    _update_manifest(args.output_dir, "geodesic", [csv_path, json_path, decoded_path], digest(settings))
    return EXIT_OK


def cmd_decode(args) -> int:
    model = LatentModel.load(args.model)
    t = Table.read(args.latent, format="ascii.csv")
    cols = [f"x{q + 1}" for q in range(model.Q)]
    if not all(c in t.colnames for c in cols):
        cols = list(t.colnames)
    X = np.array([np.asarray(t[c], dtype=float) for c in cols]).T
    if X.shape[1] != model.Q:
        raise ValueError(f"@decode: {args.latent} has {X.shape[1]} latent columns, the model has Q={model.Q}")
    decoded = model.decode_many(X)
    out = _ambient_table(decoded)
    if args.variance:
        out["variance"] = [model.predictive_variance(x) for x in X]
    path = write_table_csv(_path(args, args.out), out)
    settings = dict(latent=X, model=digest(read_json(args.model)))
    _update_manifest(args.output_dir, "decode", [path], digest(settings))
    return EXIT_OK


def _train_isolated(dataset: Dataset, cfg: RunConfig, verbose) -> tuple[Optional[LatentModel], Optional[str]]:
    try:
        return train_map(dataset, cfg, verbose=verbose), None
    except TRAINING_ERRORS as e_:
        return None, f"{type(e_).__name__}: {e_}"


def cmd_benchmark(args) -> int:
    if args.data is not None:
        dataset = Dataset.load(args.data)
    else:
        dataset = generate_synthetic(args.kind, args.n_traj, args.n_points, args.noise, args.data_seed)
    if args.thin is not None:
        dataset = dataset.thin(args.thin)
    # training trajectories and the held-out ones used for scoring
    dataset, held_out = dataset.split(args.holdout)
    seeds = [int(s) for s in args.seeds]
    user = _user_config(args)
    gcfg = dict(user.get("geodesic", {}))
    sigmas = [] if args.no_kde else list(args.kde_sigmas if args.kde_sigmas is not None else config["kde"]["sigmas"])

    models = dict(euclidean={}, wrapped={})
    errors = dict(euclidean=None, wrapped=None)
    configs = []
    for seed in seeds:
        for key, wrapped in (("euclidean", False), ("wrapped", True)):
            cfg = _run_config(args, dataset, seed=seed, wrapped=wrapped)
            configs.append(cfg)
            if errors[key] is not None:
                continue
            if args.verbose:
                print(f"@benchmark: training {key} model, seed {seed}")
            model, err = _train_isolated(dataset, cfg, args.verbose)
            if err is None:
                models[key][seed] = model
            else:
                errors[key] = err
                print(f"@benchmark: {key} training failed for seed {seed}: {err}", file=sys.stderr)

    Q = configs[0].Q
    solver = args.solver if args.solver != "auto" else ("graph" if Q == 2 else "spline")
    variants = [
        Variant("GPLVM", models["euclidean"], "straight", error=errors["euclidean"]),
        Variant("pGPLVM", models["euclidean"], solver, error=errors["euclidean"]),
        Variant("WGPLVM", models["wrapped"], "straight", error=errors["wrapped"]),
        Variant("Riemann2", models["wrapped"], solver, error=errors["wrapped"]),
    ]
    for sigma in sigmas:
        variants.append(Variant(f"KDE(sigma={sigma:g})", models["wrapped"], solver, "kde", float(sigma),
                                error=errors["wrapped"]))
    report = benchmark(held_out, variants, gcfg, seeds, n_jobs=args.n_jobs, verbose=int(args.verbose))
    json_path, md_path = report.save(_path(args, args.out))
    if args.verbose:
        print(report.to_markdown())
    _update_manifest(args.output_dir, "benchmark", [json_path, md_path],
                     digest(dict(report=report.config_digest, holdout=args.holdout,
                                 runs=[c.digest() for c in configs])))
    return EXIT_OK


# ################################################ #
# parser                                           #
# ################################################ #


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--output-dir", default=config["run"]["output_dir"], help="directory of all outputs")
    p.add_argument("--config", default=None, help="user TOML file, overrides the packaged defaults")
    p.add_argument("--verbose", action="store_true", help="print progress")


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--experiment", choices=EXPERIMENT_NAMES, default=None, help="experiment preset")
    p.add_argument("--Q", type=int, default=None, help="latent dimension")
    p.add_argument("--iterations", type=int, default=None, help="number of Adam steps")
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--gpdm", action=argparse.BooleanOptionalAction, default=None, help="GPDM latent prior")
    p.add_argument("--gamma-lengthscale", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--back-constraints", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--task-rank", type=int, default=None, help="-1 full rank, 0 independent outputs")
    p.add_argument("--per-task-noise", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--volume-correction", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--thin", type=int, default=None, help="evenly thin the data to about this many points")


def _add_metric_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", required=True, help="model JSON written by train")
    p.add_argument("--metric", choices=("pullback", "kde"), default="pullback")
    p.add_argument("--kde-sigma", type=float, default=None, help="bandwidth of the kde metric")
    p.add_argument("--bounds", type=float, nargs=4, default=None, metavar=("X1MIN", "X1MAX", "X2MIN", "X2MAX"),
                   help="latent window, default the padded extent of the latents")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wrapgp", description="Wrapped GPLVMs, pullback metrics and geodesics.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="synthetic demonstrations")
    _add_common(p)
    p.add_argument("--kind", choices=SYNTHETIC_KINDS, default="J_R2xC_S2")
    p.add_argument("--n-traj", type=int, default=6)
    p.add_argument("--n-points", type=int, default=200)
    p.add_argument("--noise", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="dataset.json")
    p.set_defaults(func=cmd_generate_data)

    p = sub.add_parser("train", help="MAP training of a (wrapped) GPLVM")
    _add_common(p)
    _add_run_flags(p)
    p.add_argument("--data", required=True, help="dataset JSON")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--wrapped", action=argparse.BooleanOptionalAction, default=None,
                   help="--no-wrapped trains a Euclidean GPLVM on the ambient coordinates")
    p.add_argument("--name", default="model", help="stem of the model and trace files")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("metric-grid", help="metric and magnification on a latent grid (Q = 2)")
    _add_common(p)
    _add_metric_flags(p)
    p.add_argument("--resolution", type=int, default=config["geodesic"]["resolution"])
    p.add_argument("--n-jobs", type=int, default=1)
    p.add_argument("--out", default="metric_grid.csv")
    p.set_defaults(func=cmd_metric_grid)

    p = sub.add_parser("geodesic", help="latent geodesic and its decoding")
    _add_common(p)
    _add_metric_flags(p)
    p.add_argument("--start", type=float, nargs="+", required=True)
    p.add_argument("--end", type=float, nargs="+", required=True)
    p.add_argument("--solver", choices=("graph", "spline", "straight"), default="graph")
    p.add_argument("--resolution", type=int, default=None)
    p.add_argument("--n-control", type=int, default=None)
    p.add_argument("--n-quad", type=int, default=None)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--out", default="geodesic", help="stem of the curve files")
    p.set_defaults(func=cmd_geodesic)

    p = sub.add_parser("decode", help="decode latent points through a model")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--latent", required=True, help="CSV with columns x1..xQ")
    p.add_argument("--variance", action="store_true", help="add the predictive variance column")
    p.add_argument("--out", default="decoded.csv")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("benchmark", help="train all variants and compare their geodesics")
    _add_common(p)
    _add_run_flags(p)
    p.add_argument("--data", default=None, help="dataset JSON, default a synthetic dataset of --kind")
    p.add_argument("--kind", choices=SYNTHETIC_KINDS, default="J_R2xC_S2")
    p.add_argument("--n-traj", type=int, default=6)
    p.add_argument("--n-points", type=int, default=200)
    p.add_argument("--noise", type=float, default=0.01)
    p.add_argument("--data-seed", type=int, default=0)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--holdout", type=int, default=1,
                   help="the last HOLDOUT trajectories are held out for scoring, 0 scores on the training data")
    p.add_argument("--solver", choices=("auto", "graph", "spline"), default="auto",
                   help="solver of the metric variants, auto is graph for Q = 2")
    p.add_argument("--kde-sigmas", type=float, nargs="+", default=None)
    p.add_argument("--no-kde", action="store_true", help="skip the KDE baseline")
    p.add_argument("--n-jobs", type=int, default=1)
    p.add_argument("--out", default="benchmark", help="stem of the report files")
    p.set_defaults(func=cmd_benchmark, seed=None, wrapped=None)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e_:
        return int(e_.code or 0)
    try:
        return args.func(args)
    except NUMERICAL_ERRORS as e_:
        print(f"@wrapgp: numerical failure: {type(e_).__name__}: {e_}", file=sys.stderr)
        return EXIT_NUMERICAL
    except USAGE_ERRORS as e_:
        print(f"@wrapgp: error: {type(e_).__name__}: {e_}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
