"""Command-line interface: ``collabfs {select,evaluate,stability,ingest-check}``.

Configuration is a TOML file; every key can be overridden from the
environment as ``COLLABFS_<SECTION>__<KEY>=<toml value>`` (nested tables
chain with ``__``), and ``--seed`` / ``--jobs`` / ``--out`` override the
``[run]`` section. Logs go to stderr, data to files and stdout.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numeric failure.
"""

import argparse
import copy
import csv
import datetime as _dt
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import numpy as np

from .baselines import CfecbfParams
from .data import IngestConfig, load_dataset, load_dataset_dir, read_dataset, write_dataset
from .evaluation import (METHOD_VARIANTS, EvalConfig, category_proportions, n_select_for,
                         run_experiment, stability_matrix)
from .exceptions import (ConfigError, EmptyDataset, EmptyFeatureSpace, NonFiniteLoss,
                         NotPositiveDefinite, ParseError, RankTooLarge, ShapeMismatch,
                         SingularStart, UnknownItem)
from .maxvol import MaxvolParams
from .mix import MixParams, mix_matrices
from .selectors import compute_ranking
from .synthetic import PlantedSpec, make_planted

log = logging.getLogger("collabfs")

ENV_PREFIX = "COLLABFS_"
EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4

DEFAULTS = {
    "run": {"seed": 0, "out": "results", "jobs": 1, "log_level": "INFO"},
    "data": {"source": "raw", "path": "", "interactions": "", "features": "",
             "categories": "", "synthetic": {}},
    "ingest": {"min_feature_items": 2, "min_token_count": 10, "mode": "categorical",
               "binarize": True},
    "mix": {"alpha": 0.5, "p": 0.0, "k": 32},
    "maxvol": {"tol": 1.05, "max_iters": 0},
    "cfecbf": {"lambda1": 0.0, "lambda2": 0.0, "learning_rate": 0.0, "epochs": 200},
    "evaluation": {
        "methods": ["maxvol", "random", "popular", "cfecbf"],
        "metric_cutoff": 10, "n_search_samples": 20, "n_repeats": 10,
        "selection_fractions": [0.01, 0.05, 0.10, 0.20, 0.30],
        "ratios": [0.7, 0.1, 0.2], "cfecbf_epochs": 200,
        "mix_grid": {"alpha": [0.2, 0.5, 0.8], "p": [-1.0, -0.5, 0.0, 0.5],
                     "k": [100, 200, 400]},
        "model_grid": {"neighbors": [0]},
        "cfecbf_grid": {"lambda1": [0.0, 1e-3], "lambda2": [0.0, 1e-2]},
    },
    "stability": {"fraction": 0.10, "grid": {}},
}
# keys that never change a payload and so stay out of the config hash
_UNHASHED = {("run", "out"), ("run", "jobs"), ("run", "log_level")}


# ------------------------------------------------------------------- config

def _merge(base, extra, path=()):
    for key, value in extra.items():
        if key not in base:
            raise ConfigError(f"unknown config key {'.'.join(path + (key,))}")
        if isinstance(base[key], dict) and key not in ("synthetic", "grid"):
            if not isinstance(value, dict):
                raise ConfigError(f"{'.'.join(path + (key,))} must be a table")
            _merge(base[key], value, path + (key,))
        else:
            base[key] = value
    return base


def _parse_env_value(text):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def _env_overrides(environ):
    out = {}
    for name, raw in sorted(environ.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        parts = [p.lower() for p in name[len(ENV_PREFIX):].split("__")]
        if len(parts) < 2:
            raise ConfigError(f"{name}: expected {ENV_PREFIX}<SECTION>__<KEY>")
        node = out
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = _parse_env_value(raw)
    return out


def load_config(path=None, environ=None, seed=None, jobs=None, out=None) -> dict:
    """Defaults <- TOML file <- environment <- command-line flags."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            with open(p, "rb") as fh:
                _merge(cfg, tomllib.load(fh))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{p}: {exc}") from None
        base_dir = p.parent
        for key in ("path", "interactions", "features", "categories"):
            value = cfg["data"][key]
            if value and not Path(value).is_absolute():
                cfg["data"][key] = str(base_dir / value)
    _merge(cfg, _env_overrides(os.environ if environ is None else environ))
    for key, value in (("seed", seed), ("jobs", jobs), ("out", out)):
        if value is not None:
            cfg["run"][key] = value
    validate_config(cfg)
    return cfg


def validate_config(cfg):
    try:
        IngestConfig(**cfg["ingest"])
        MixParams(**cfg["mix"], seed=int(cfg["run"]["seed"]))
        _maxvol_params(cfg)
        _cfecbf_params(cfg)
        eval_config(cfg)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    if cfg["data"]["source"] not in ("raw", "canonical", "synthetic"):
        raise ConfigError(f"data.source must be raw, canonical or synthetic")
    for m in cfg["evaluation"]["methods"]:
        if m not in METHOD_VARIANTS:
            raise ConfigError(f"unknown method {m!r}")
    if int(cfg["run"]["jobs"]) < 1:
        raise ConfigError("run.jobs must be >= 1")


def config_hash(cfg) -> str:
    hashed = copy.deepcopy(cfg)
    for section, key in _UNHASHED:
        hashed[section].pop(key, None)
    blob = json.dumps(hashed, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _maxvol_params(cfg):
    mv = cfg["maxvol"]
    return MaxvolParams(float(mv["tol"]), int(mv["max_iters"]) or None,
                        seed=int(cfg["run"]["seed"]))


def _cfecbf_params(cfg):
    c = cfg["cfecbf"]
    return CfecbfParams(float(c["lambda1"]), float(c["lambda2"]),
                        float(c["learning_rate"]) or None, int(c["epochs"]),
                        seed=int(cfg["run"]["seed"]))


def eval_config(cfg) -> EvalConfig:
    e = cfg["evaluation"]
    model_grid = {k: [None if (k == "neighbors" and not v) else v for v in vals]
                  for k, vals in e["model_grid"].items()}
    return EvalConfig(
        metric_cutoff=int(e["metric_cutoff"]), n_search_samples=int(e["n_search_samples"]),
        n_repeats=int(e["n_repeats"]), selection_fractions=e["selection_fractions"],
        mix_grid=dict(e["mix_grid"]), model_grid=model_grid,
        cfecbf_grid=dict(e["cfecbf_grid"]), cfecbf_epochs=int(e["cfecbf_epochs"]),
        maxvol_tol=float(cfg["maxvol"]["tol"]), ratios=e["ratios"],
        seed=int(cfg["run"]["seed"]))


def load_data(cfg):
    d = cfg["data"]
    if d["source"] == "synthetic":
        options = dict(d["synthetic"])
        seed = int(options.pop("seed", cfg["run"]["seed"]))
        try:
            spec = PlantedSpec(**options)
        except TypeError as exc:
            raise ConfigError(f"data.synthetic: {exc}") from None
        return make_planted(spec, seed=seed).dataset
    if d["source"] == "canonical":
        if not d["path"]:
            raise ConfigError("data.path is required for canonical datasets")
        path = Path(d["path"])
        if not path.is_dir():
            raise FileNotFoundError(f"dataset path does not exist: {path}")
        return read_dataset(path)
    ingest = IngestConfig(**cfg["ingest"])
    if d["interactions"] or d["features"]:
        for key in ("interactions", "features"):
            if not d[key] or not Path(d[key]).exists():
                raise FileNotFoundError(f"dataset path does not exist: {d[key] or '<unset>'}")
        return load_dataset(d["interactions"], d["features"], ingest,
                            d["categories"] or None)
    if not d["path"]:
        raise ConfigError("set data.path or data.interactions/data.features")
    if not Path(d["path"]).is_dir():
        raise FileNotFoundError(f"dataset path does not exist: {d['path']}")
    return load_dataset_dir(d["path"], ingest)


# ----------------------------------------------------------------- commands

def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _provenance(cfg, started):
    return {"config_hash": config_hash(cfg), "seed": int(cfg["run"]["seed"]),
            "started_at": started, "finished_at": _now()}


def _out_dir(cfg):
    out = Path(cfg["run"]["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_select(cfg, method, fraction):
    started = _now()
    if method not in METHOD_VARIANTS or method == "maxvol_alpha0":
        raise ConfigError(f"unknown selection method {method!r}")
    if not 0 < fraction <= 1:
        raise ConfigError("fraction must lie in (0, 1]")
    ds = load_data(cfg)
    seed = int(cfg["run"]["seed"])
    mix_params = MixParams(**cfg["mix"], seed=seed)
    n_select = n_select_for(method, fraction, ds.n_features, mix_params.k)
    ranking = compute_ranking(method, ds.interactions, ds.features, n_select,
                              mix_params=mix_params, maxvol_params=_maxvol_params(cfg),
                              cfecbf_params=_cfecbf_params(cfg), seed=seed)
    n = min(n_select, len(ranking))
    payload = {"provenance": _provenance(cfg, started)}
    body = ranking.to_dict()
    body["order"] = body["order"][:n]
    body["scores"] = None if body["scores"] is None else body["scores"][:n]
    body["n_select"] = n
    body["feature_names"] = [ds.feature_names[i] for i in body["order"]]
    payload.update(body)
    out = _out_dir(cfg)
    path = out / f"ranking_{method}.json"
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    if ds.feature_categories and method != "all":
        fractions = sorted(set(cfg["evaluation"]["selection_fractions"]) | {fraction})
        fractions = [f for f in fractions if f <= fraction]
        props = category_proportions(ranking, ds.category_array(), fractions)
        with open(out / f"categories_{method}.csv", "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["category"] + [f"{100 * f:g}%" for f in fractions])
            for name, vals in props.items():
                w.writerow([name] + [f"{v:.6f}" for v in vals])
    log.info("wrote %s (%d features)", path, n)
    print(path)
    return path


def cmd_evaluate(cfg):
    started = _now()
    ds = load_data(cfg)
    ecfg = eval_config(cfg)
    report = run_experiment(ds, ecfg, cfg["evaluation"]["methods"], jobs=int(cfg["run"]["jobs"]))
    out = _out_dir(cfg)
    payload = {"provenance": _provenance(cfg, started)}
    payload.update(report.to_dict())
    (out / "report.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                                     encoding="utf-8")
    (out / "results.csv").write_text(report.to_csv(), encoding="utf-8")
    (out / "improvement.csv").write_text(report.improvement_csv(), encoding="utf-8")
    (out / "timings.csv").write_text(report.timings_csv(), encoding="utf-8")
    print(report.summary())
    log.info("wrote report to %s", out)
    return report


def cmd_stability(cfg):
    started = _now()
    ds = load_data(cfg)
    grid = cfg["stability"]["grid"] or cfg["evaluation"]["mix_grid"]
    for key in ("alpha", "p", "k"):
        if key not in grid or not grid[key]:
            raise ConfigError(f"stability grid needs a nonempty {key!r} list")
    seed = int(cfg["run"]["seed"])
    configs = [MixParams(a, p, k, seed) for p in grid["p"] for k in grid["k"]
               for a in grid["alpha"]]
    configs = [c for c in configs if c.k < ds.n_features and c.k <= ds.n_items]
    if not configs:
        raise ConfigError("no stability configuration fits the dataset")
    labels, J = stability_matrix(ds, configs, float(cfg["stability"]["fraction"]),
                                 _maxvol_params(cfg))
    out = _out_dir(cfg)
    path = out / "jaccard.csv"
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"# config_hash={config_hash(cfg)} started_at={started}"])
        w.writerow(["config"] + labels)
        for label, row in zip(labels, J):
            w.writerow([label] + [f"{v:.6f}" for v in row])
    log.info("wrote %s (%d configurations)", path, len(labels))
    print(path)
    return labels, J


def cmd_ingest_check(cfg, write_canonical=None):
    ds = load_data(cfg)
    nnz = ds.interactions.nnz
    density = 100.0 * nnz / max(1, ds.n_users * ds.n_items)
    cats = sorted({c for c in (ds.feature_categories or {}).values()})
    print(f"users\t{ds.n_users}")
    print(f"items\t{ds.n_items}")
    print(f"interactions\t{nnz}")
    print(f"nnz_percent\t{density:.4f}")
    print(f"features\t{ds.n_features}")
    print(f"categories\t{', '.join(cats) if cats else '-'}")
    cold = int(np.sum(np.diff(ds.interactions.tocsc().indptr) == 0))
    print(f"items_without_interactions\t{cold}")
    if write_canonical:
        write_dataset(ds, write_canonical)
        log.info("wrote canonical dataset to %s", write_canonical)
    return ds


# --------------------------------------------------------------------- main

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML configuration file")
    common.add_argument("--seed", type=int, help="override run.seed")
    common.add_argument("--jobs", type=int, help="parallel repeats (1 = serial)")
    common.add_argument("--out", help="output directory (run.out)")
    common.add_argument("--log-level", default=None, help="override run.log_level")

    parser = argparse.ArgumentParser(prog="collabfs", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("select", parents=[common], help="rank features and write a JSON ranking")
    p.add_argument("--method", default="maxvol",
                   choices=[m for m in METHOD_VARIANTS if m != "maxvol_alpha0"])
    p.add_argument("--fraction", type=float, default=0.1)
    sub.add_parser("evaluate", parents=[common], help="run the cold-start protocol")
    sub.add_parser("stability", parents=[common],
                   help="Jaccard matrix of selections across the mix grid")
    p = sub.add_parser("ingest-check", parents=[common], help="load data and print statistics")
    p.add_argument("--write-canonical", metavar="DIR",
                   help="also write the dataset in canonical layout")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, seed=args.seed, jobs=args.jobs, out=args.out)
    except ConfigError as exc:
        print(f"collabfs: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    level = (args.log_level or cfg["run"]["log_level"]).upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO), stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "select":
            cmd_select(cfg, args.method, args.fraction)
        elif args.command == "evaluate":
            cmd_evaluate(cfg)
        elif args.command == "stability":
            cmd_stability(cfg)
        else:
            cmd_ingest_check(cfg, args.write_canonical)
    except ConfigError as exc:
        print(f"collabfs: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, ParseError, EmptyDataset, EmptyFeatureSpace, UnknownItem,
            ShapeMismatch) as exc:
        print(f"collabfs: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NotPositiveDefinite, SingularStart, NonFiniteLoss, RankTooLarge,
            np.linalg.LinAlgError) as exc:
        print(f"collabfs: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return 0


def main_exit():
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
