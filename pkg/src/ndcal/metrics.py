"""NLL, accuracy, ECE and reliability-diagram binning."""

import csv
import json
from dataclasses import dataclass, asdict, field

import numpy as np

PROB_EPS = 1e-12
SIMPLEX_TOL = 1e-6


@dataclass(frozen=True)
class ReliabilityBin:
    lower: float
    upper: float
    count: int
    confidence: float
    accuracy: float


@dataclass(frozen=True)
class EvalReport:
    nll: float
    accuracy: float
    ece: float
    bins: tuple
    n: int
    config: dict = field(default_factory=dict)

    def summary(self):
        return {"nll": self.nll, "accuracy": self.accuracy, "ece": self.ece, "n": self.n,
                "config": dict(self.config)}


def _check(P, y):
    P = np.atleast_2d(np.asarray(P, dtype=float))
    y = np.asarray(y, dtype=np.int64).ravel()
    if P.shape[0] != y.shape[0]:
        raise ValueError(f"dimension mismatch: {P.shape[0]} probability rows, {y.shape[0]} labels")
    if y.size and (y.min() < 0 or y.max() >= P.shape[1]):
        raise ValueError("label out of range")
    return P, y


def nll(P, y):
    """Mean natural-log NLL of the true class, probabilities clamped at 1e-12."""
    P, y = _check(P, y)
    if np.any(np.abs(P.sum(axis=1) - 1.0) > SIMPLEX_TOL) or np.any(P < -SIMPLEX_TOL):
        raise ValueError("probability rows must lie on the simplex")
    return float(-np.mean(np.log(np.maximum(P[np.arange(y.shape[0]), y], PROB_EPS))))


def accuracy(P, y):
    """Argmax accuracy; ties go to the lowest class index."""
    P, y = _check(P, y)
    return float(np.mean(np.argmax(P, axis=1) == y))


def bin_confidences(conf, correct, K=20, scheme="width"):
    """Reliability bins from per-instance (confidence, correct) pairs.

    ``width``: bins ``[(k-1)/K, k/K)``, the last closed on the right.
    ``freq``: sorted confidences cut into K contiguous runs whose sizes
    differ by at most one.
    """
    conf = np.asarray(conf, dtype=float).ravel()
    correct = np.asarray(correct, dtype=float).ravel()
    n = conf.shape[0]
    if K < 1:
        raise ValueError("need at least one bin")
    bins = []
    if scheme in ("width", "equal-width"):
        edges = np.arange(K + 1) / K
        which = np.clip(np.searchsorted(edges, conf, side="right") - 1, 0, K - 1)
        for k in range(K):
            sel = which == k
            c = int(sel.sum())
            bins.append(ReliabilityBin(
                float(edges[k]), float(edges[k + 1]), c,
                float(conf[sel].mean()) if c else 0.0,
                float(correct[sel].mean()) if c else 0.0))
    elif scheme in ("freq", "equal-frequency"):
        if K > n:
            raise ValueError(f"equal-frequency binning needs K <= n (K={K}, n={n})")
        order = np.argsort(conf, kind="stable")
        for run in np.array_split(order, K):
            bins.append(ReliabilityBin(
                float(conf[run].min()), float(conf[run].max()), int(run.size),
                float(conf[run].mean()), float(correct[run].mean())))
    else:
        raise ValueError(f"unknown binning scheme {scheme!r}")
    return bins


def reliability_bins(P, y, K=20, scheme="width"):
    """Bins over max-probability confidence and argmax correctness."""
    P, y = _check(P, y)
    return bin_confidences(P.max(axis=1), np.argmax(P, axis=1) == y, K, scheme)


def ece(bins):
    n = sum(b.count for b in bins)
    if n == 0:
        return 0.0
    return float(sum(b.count / n * abs(b.accuracy - b.confidence) for b in bins if b.count))


def evaluate(P, y, K=20, scheme="width", config=None):
    bins = reliability_bins(P, y, K, scheme)
    return EvalReport(nll(P, y), accuracy(P, y), ece(bins), tuple(bins), int(len(y)),
                      dict(config or {}))


def depth_reliability(nd, X, y, K=20, scheme="width", max_depth=None):
    """Reliability reports for the tree cut off at depths ``1..max_depth``.

    At depth ``d`` an instance counts as correct when its class lies in the
    most probable frontier node; NLL is taken on the mass of the frontier
    node holding the true class.
    """
    y = np.asarray(y, dtype=np.int64).ravel()
    depth = nd.structure.depth if max_depth is None else min(max_depth, nd.structure.depth)
    rows = np.arange(y.shape[0])
    out = []
    for d in range(1, depth + 1):
        front, M = nd.frontier_mass(X, d)
        owner = np.empty(nd.num_classes, dtype=np.int64)
        for j, node in enumerate(front):
            owner[list(node.classes)] = j
        best = np.argmax(M, axis=1)
        conf = M[rows, best]
        correct = best == owner[y]
        bins = bin_confidences(conf, correct, K, scheme)
        true_mass = np.maximum(M[rows, owner[y]], PROB_EPS)
        out.append((d, EvalReport(float(-np.mean(np.log(true_mass))), float(correct.mean()),
                                  ece(bins), tuple(bins), int(y.shape[0]),
                                  {"depth": d, "bins": K, "scheme": scheme})))
    return out


BIN_COLUMNS = ["bin_lower", "bin_upper", "bin_conf", "bin_acc", "bin_count"]
DEPTH_COLUMNS = ["depth", "bin_conf", "bin_acc", "bin_count", "ece"]


def write_bins_csv(path, bins):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(BIN_COLUMNS)
        for b in bins:
            w.writerow([repr(b.lower), repr(b.upper), repr(b.confidence), repr(b.accuracy),
                        b.count])


def write_depth_csv(path, reports):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(DEPTH_COLUMNS)
        for d, rep in reports:
            for b in rep.bins:
                w.writerow([d, repr(b.confidence), repr(b.accuracy), b.count, repr(rep.ece)])


def write_summary_json(path, report, extra=None):
    doc = report.summary()
    if extra:
        doc.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)


def bins_as_dicts(bins):
    return [asdict(b) for b in bins]
