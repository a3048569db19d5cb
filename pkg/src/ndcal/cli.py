"""Command-line interface: ``ndcal train|evaluate|reliability|experiment``.

Exit status is 0 on success, 1 on runtime failure and 2 on usage errors.
"""

import argparse
import json
import logging
import os
import sys

from . import data as data_mod
from .calibration import external_calibrate
from .dichotomy import ModelFormatError, NestedDichotomy, derive_seed, sample_structure, train
from .experiment import (SCHEMES, ExperimentConfig, format_table, parse_cv, run_experiment,
                         run_grid, write_folds_csv, write_table_csv)
from .learners import KINDS, LearnerConfig
from .metrics import depth_reliability, evaluate, write_bins_csv, write_depth_csv

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

log = logging.getLogger("ndcal")

DEFAULTS = {
    "format": None, "label_column": "last", "learner": "logistic", "split": "random",
    "internal_cal": "none", "external_cal": "none", "holdout": 0.1, "cv": "10x10",
    "bins": 20, "bin_scheme": "width", "seed": 0, "jobs": 1,
}


class UsageError(Exception):
    pass


def _add_common(p, *names):
    add = {
        "config": lambda: p.add_argument("--config", help="TOML file; command-line flags override it"),
        "data": lambda: p.add_argument("--data", help="dataset file"),
        "format": lambda: p.add_argument("--format", choices=["csv", "libsvm"]),
        "label_column": lambda: p.add_argument("--label-column", dest="label_column",
                                               help='label column index or "last"'),
        "learner": lambda: p.add_argument("--learner", choices=list(KINDS)),
        "split": lambda: p.add_argument("--split", choices=["random", "balanced"]),
        "internal_cal": lambda: p.add_argument("--internal-cal", dest="internal_cal",
                                               choices=["none", "platt", "isotonic"]),
        "external_cal": lambda: p.add_argument("--external-cal", dest="external_cal",
                                               choices=["none", "vector", "matrix"]),
        "holdout": lambda: p.add_argument("--holdout", type=float),
        "bins": lambda: p.add_argument("--bins", type=int),
        "bin_scheme": lambda: p.add_argument("--bin-scheme", dest="bin_scheme",
                                             choices=["width", "freq"]),
        "seed": lambda: p.add_argument("--seed", type=int),
        "model": lambda: p.add_argument("--model", help="model JSON file"),
        "out": lambda: p.add_argument("--out"),
        "verbose": lambda: p.add_argument("-v", "--verbose", action="store_true"),
    }
    for n in names:
        add[n]()


def build_parser():
    parser = argparse.ArgumentParser(prog="ndcal", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train (and optionally calibrate) a nested dichotomy")
    _add_common(p, "config", "data", "format", "label_column", "learner", "split",
                "internal_cal", "external_cal", "holdout", "seed", "out", "verbose")

    p = sub.add_parser("evaluate", help="NLL / accuracy / ECE plus reliability bins")
    _add_common(p, "config", "model", "data", "format", "label_column", "bins", "bin_scheme",
                "out", "verbose")

    p = sub.add_parser("reliability", help="reliability per depth cut-off")
    _add_common(p, "config", "model", "data", "format", "label_column", "bins", "bin_scheme",
                "out", "verbose")
    p.add_argument("--max-depth", dest="max_depth", type=int)

    p = sub.add_parser("experiment", help="repeated stratified cross-validation")
    _add_common(p, "config", "data", "format", "label_column", "learner", "split",
                "internal_cal", "external_cal", "holdout", "bins", "bin_scheme", "seed", "out",
                "verbose")
    p.add_argument("--test", help="separate test file (use with --cv Rx1)")
    p.add_argument("--cv", help="RxK: R runs of K-fold CV (default 10x10)")
    p.add_argument("--schemes", help=f"comma list from {','.join(SCHEMES)}; overrides "
                                     "--internal-cal/--external-cal")
    p.add_argument("--jobs", type=int)
    return parser


def resolve(args):
    """Merge defaults < TOML config < explicit flags."""
    opts = dict(DEFAULTS)
    if getattr(args, "config", None):
        with open(args.config, "rb") as fh:
            doc = tomllib.load(fh)
        opts.update({k.replace("-", "_"): v for k, v in doc.items()})
    opts.update({k: v for k, v in vars(args).items() if v is not None and k != "config"})
    return opts


def _require(opts, *names):
    for n in names:
        if not opts.get(n):
            raise UsageError(f"--{n.replace('_', '-')} is required")


def _load_data(opts, key="data"):
    return data_mod.load(opts[key], opts.get("format"), opts.get("label_column", "last"))


def _fit_features(d, k):
    if d.num_features == k:
        return d
    if d.sparse and d.num_features < k:
        X = d.X.copy()
        X.resize((d.n, k))
        return data_mod.Dataset(X, d.y, d.num_classes, d.label_names)
    raise data_mod.DatasetError(f"dataset has {d.num_features} features, model expects {k}")


def _data_for_model(opts, nd):
    d = data_mod.align_labels(_load_data(opts), nd.label_names)
    return _fit_features(d, nd.num_features)


def _learner(opts):
    doc = opts.get("learner_options", {}) or {}
    return LearnerConfig(kind=opts["learner"], **doc)


def cmd_train(opts):
    _require(opts, "data", "out")
    d = _load_data(opts)
    seed = int(opts["seed"])
    hold = None
    if opts["external_cal"] != "none":
        d, hold = data_mod.stratified_split(d, float(opts["holdout"]), derive_seed(seed, 0, 1))
    struct = sample_structure(d.num_classes, opts["split"], derive_seed(seed, 0, 0))
    nd = train(struct, d, _learner(opts), opts["internal_cal"], seed)
    if hold is not None:
        nd = external_calibrate(nd, hold, opts["external_cal"])
    nd.save(opts["out"])
    log.info("saved %d-class model to %s", nd.num_classes, opts["out"])
    return 0


def cmd_evaluate(opts):
    _require(opts, "model", "data")
    nd = NestedDichotomy.load(opts["model"])
    d = _data_for_model(opts, nd)
    rep = evaluate(nd.predict_distribution(d.X), d.y, int(opts["bins"]), opts["bin_scheme"],
                   {"model": opts["model"], "data": opts["data"], "bins": int(opts["bins"]),
                    "bin_scheme": opts["bin_scheme"]})
    out = opts.get("out") or "."
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(rep.summary(), fh, indent=2)
    write_bins_csv(os.path.join(out, "bins.csv"), rep.bins)
    print(f"nll={rep.nll:.6f} accuracy={rep.accuracy:.6f} ece={rep.ece:.6f} n={rep.n}")
    return 0


def cmd_reliability(opts):
    _require(opts, "model", "data")
    nd = NestedDichotomy.load(opts["model"])
    d = _data_for_model(opts, nd)
    reports = depth_reliability(nd, d.X, d.y, int(opts["bins"]), opts["bin_scheme"],
                                opts.get("max_depth"))
    path = opts.get("out") or "depth_reliability.csv"
    write_depth_csv(path, reports)
    for depth, rep in reports:
        print(f"depth={depth} ece={rep.ece:.6f} accuracy={rep.accuracy:.6f}")
    return 0


def cmd_experiment(opts):
    _require(opts, "data")
    runs, folds = parse_cv(opts["cv"])
    cfg = ExperimentConfig(
        data=opts["data"], fmt=opts.get("format"), test=opts.get("test"),
        label_column=opts.get("label_column", "last"), learner=_learner(opts),
        split=opts["split"], internal_cal=opts["internal_cal"],
        external_cal=opts["external_cal"], holdout=float(opts["holdout"]), runs=runs,
        folds=folds, bins=int(opts["bins"]), bin_scheme=opts["bin_scheme"],
        seed=int(opts["seed"]), jobs=int(opts["jobs"]))
    d = _load_data(opts)
    test = None
    if cfg.test:
        test = _fit_features(data_mod.align_labels(_load_data(opts, "test"), d.label_names),
                             d.num_features)
    if opts.get("schemes"):
        schemes = [s.strip() for s in opts["schemes"].split(",") if s.strip()]
        unknown = [s for s in schemes if s not in SCHEMES]
        if unknown:
            raise UsageError(f"unknown schemes {unknown}; expected from {list(SCHEMES)}")
        tables = run_grid(cfg, schemes, d, test)
    else:
        name = next((k for k, v in SCHEMES.items() if v == (cfg.internal_cal, cfg.external_cal)),
                    f"{cfg.internal_cal}+{cfg.external_cal}")
        tables = {name: run_experiment(cfg, d, test)}
    label = os.path.splitext(os.path.basename(opts["data"]))[0]
    print(format_table(tables, label))
    out = opts.get("out")
    if out:
        os.makedirs(out, exist_ok=True)
        write_table_csv(os.path.join(out, "table.csv"), tables, label)
        write_folds_csv(os.path.join(out, "folds.csv"), tables)
        with open(os.path.join(out, "summary.json"), "w", encoding="utf-8") as fh:
            json.dump({name: {"aggregate": t.aggregate(), "config": t.config}
                       for name, t in tables.items()}, fh, indent=2)
    return 0


COMMANDS = {"train": cmd_train, "evaluate": cmd_evaluate, "reliability": cmd_reliability,
            "experiment": cmd_experiment}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        opts = resolve(args)
        return COMMANDS[args.command](opts)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"ndcal {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (ModelFormatError, data_mod.DatasetError, ValueError, OSError) as exc:
        print(f"ndcal {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
