"""Repeated stratified cross-validation of calibrated nested dichotomies."""

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import data as data_mod
from .calibration import external_calibrate
from .dichotomy import derive_seed, sample_structure, train
from .learners import LearnerConfig
from .metrics import evaluate

log = logging.getLogger(__name__)

# column order of the results tables
SCHEMES = {
    "baseline": ("none", "none"),
    "external-vs": ("none", "vector"),
    "internal-ps": ("platt", "none"),
    "both-ps": ("platt", "vector"),
    "internal-ir": ("isotonic", "none"),
    "both-ir": ("isotonic", "vector"),
}
METRICS = ("nll", "accuracy", "ece")


class ExperimentError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    data: str = None
    fmt: str = None
    test: str = None
    label_column: str = "last"
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    split: str = "random"
    internal_cal: str = "none"
    external_cal: str = "none"
    holdout: float = 0.10
    runs: int = 10
    folds: int = 10
    bins: int = 20
    bin_scheme: str = "width"
    seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        if self.internal_cal not in ("none", "platt", "isotonic"):
            raise ExperimentError(f"unknown internal calibration {self.internal_cal!r}")
        if self.external_cal not in ("none", "vector", "matrix"):
            raise ExperimentError(f"unknown external calibration {self.external_cal!r}")
        if self.external_cal != "none" and not 0.0 < self.holdout <= 0.5:
            raise ExperimentError("holdout fraction must lie in (0, 0.5]")
        if self.runs < 1 or self.folds < 1:
            raise ExperimentError("runs and folds must be positive")
        if self.split not in ("random", "balanced"):
            raise ExperimentError(f"unknown split strategy {self.split!r}")

    def scheme(self, name):
        internal, external = SCHEMES[name]
        return replace(self, internal_cal=internal, external_cal=external)

    def describe(self):
        return {"learner": self.learner.to_dict(), "split": self.split,
                "internal_cal": self.internal_cal, "external_cal": self.external_cal,
                "holdout": self.holdout, "cv": f"{self.runs}x{self.folds}",
                "bins": self.bins, "bin_scheme": self.bin_scheme, "seed": self.seed}


def parse_cv(text):
    """``"RxK"`` -> (runs, folds); ``"none"`` -> (1, 1)."""
    if text in (None, "none"):
        return 1, 1
    try:
        r, k = text.lower().replace("×", "x").split("x")
        return int(r), int(k)
    except ValueError:
        raise ExperimentError(f"--cv expects RxK (e.g. 10x10), got {text!r}") from None


@dataclass
class ResultTable:
    reports: list                # (run, fold, EvalReport), sorted by (run, fold)
    config: dict = field(default_factory=dict)

    def values(self, metric):
        return np.array([getattr(rep, metric) for _, _, rep in self.reports], dtype=float)

    def mean(self, metric):
        return float(np.mean(self.values(metric)))

    def std(self, metric):
        v = self.values(metric)
        return float(np.std(v, ddof=1)) if v.size > 1 else 0.0

    def aggregate(self):
        return {m: {"mean": self.mean(m), "std": self.std(m)} for m in METRICS}


def _fold_job(args):
    d, test, cfg, run, fold, tr_idx, ev_idx = args
    fold_seed = derive_seed(cfg.seed, run, fold)
    struct = sample_structure(d.num_classes, cfg.split, derive_seed(fold_seed, 0, 0))
    if test is None:
        eval_set = d.subset(ev_idx)
    else:
        eval_set = test
    tree_idx = np.asarray(tr_idx)
    hold_idx = np.array([], dtype=np.int64)
    if cfg.external_cal != "none":
        plan = data_mod.stratified_split_plan(d.y[tr_idx], cfg.holdout,
                                             derive_seed(fold_seed, 0, 1), d.label_names)
        tree_idx = np.asarray(tr_idx)[plan.train_indices]
        hold_idx = np.asarray(tr_idx)[plan.eval_indices]
    if np.intersect1d(tree_idx, hold_idx).size:
        raise RuntimeError("holdout overlaps tree-training data")
    if test is None and (np.intersect1d(ev_idx, tree_idx).size
                         or np.intersect1d(ev_idx, hold_idx).size):
        raise RuntimeError("evaluation data overlaps training data")
    nd = train(struct, d.subset(tree_idx), cfg.learner, cfg.internal_cal, fold_seed)
    if cfg.external_cal != "none":
        nd = external_calibrate(nd, d.subset(hold_idx), cfg.external_cal)
    P = nd.predict_distribution(eval_set.X)
    rep = evaluate(P, eval_set.y, cfg.bins, cfg.bin_scheme, {"run": run, "fold": fold})
    return run, fold, rep


def fold_plan(d, cfg):
    """All (run, fold, train_indices, eval_indices) of the protocol."""
    plan = []
    for r in range(cfg.runs):
        if cfg.folds == 1:
            plan.append((r, 0, np.arange(d.n), np.array([], dtype=np.int64)))
            continue
        folds = data_mod.stratified_kfold(d, cfg.folds, derive_seed(cfg.seed, r))
        for f, (tr, ev) in enumerate(folds):
            plan.append((r, f, tr, ev))
    return plan


def run_experiment(cfg, dataset=None, test=None):
    """Run the configured protocol and collect one report per (run, fold).

    Each fold gets its own random class tree.  With external calibration a
    stratified holdout is carved out of the fold's training part, so the
    tree and any internal calibrators see the rest.  ``folds == 1`` trains
    on all of ``dataset`` and evaluates on ``test``.
    """
    d = dataset if dataset is not None else data_mod.load(cfg.data, cfg.fmt, cfg.label_column)
    if test is None and cfg.test is not None:
        test = data_mod.load(cfg.test, cfg.fmt, cfg.label_column)
    if cfg.folds == 1 and test is None:
        raise ExperimentError("a single fold needs a separate test set")
    jobs = [(d, test, cfg, r, f, tr, ev) for r, f, tr, ev in fold_plan(d, cfg)]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(_fold_job, jobs))
    else:
        results = [_fold_job(j) for j in jobs]
    results.sort(key=lambda t: (t[0], t[1]))
    return ResultTable(results, cfg.describe())


def run_grid(cfg, schemes, dataset=None, test=None):
    """One ResultTable per named scheme; folds and trees are shared across schemes."""
    d = dataset if dataset is not None else data_mod.load(cfg.data, cfg.fmt, cfg.label_column)
    out = {}
    for name in schemes:
        if name not in SCHEMES:
            raise ExperimentError(f"unknown scheme {name!r}; expected one of {list(SCHEMES)}")
        log.info("running scheme %s", name)
        out[name] = run_experiment(cfg.scheme(name), d, test)
    return out


def write_folds_csv(path, tables):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["scheme", "run", "fold", "n", *METRICS])
        for name, table in tables.items():
            for r, f, rep in table.reports:
                w.writerow([name, r, f, rep.n, *(repr(getattr(rep, m)) for m in METRICS)])


def write_table_csv(path, tables, label=""):
    """Table layout: one row per metric, a mean and std column per scheme."""
    names = list(tables)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["dataset", "metric"] + [f"{n}_{s}" for n in names for s in ("mean", "std")])
        for m in METRICS:
            row = [label, m]
            for n in names:
                row += [f"{tables[n].mean(m):.6f}", f"{tables[n].std(m):.6f}"]
            w.writerow(row)


def format_table(tables, label=""):
    names = list(tables)
    lines = ["metric    " + "".join(f"{n:>20s}" for n in names)]
    for m in METRICS:
        cells = "".join(f"{tables[n].mean(m):>12.3f} ({tables[n].std(m):.2f})" for n in names)
        lines.append(f"{m:<10s}{cells}")
    if label:
        lines.insert(0, label)
    return "\n".join(lines)
