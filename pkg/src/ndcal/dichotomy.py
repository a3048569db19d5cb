"""Nested dichotomies: class-tree sampling, training and inference.

Each internal node ``k`` splits its class set into ``left`` and ``right``
and holds a binary model of ``p(y in left | x, y in node k)``.  A class
probability is the product of branch probabilities on the root-to-leaf
path, accumulated in log space.
"""

import json
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import calibration as cal
from .data import Dataset, stratified_kfold
from .learners import LearnerConfig, binary_nll, fit_binary, model_from_dict

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
BRANCH_EPS = 1e-12
MIN_CAL_INSTANCES = 6


class StructureError(ValueError):
    pass


class ModelFormatError(ValueError):
    pass


def derive_seed(seed, *keys):
    """Deterministic 63-bit child seed of ``seed`` for the key path ``keys``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


@dataclass(frozen=True)
class Node:
    id: int
    classes: tuple
    depth: int
    parent: int = -1
    left: int = -1
    right: int = -1

    @property
    def is_leaf(self):
        return self.left < 0


@dataclass(frozen=True, eq=False)
class TreeStructure:
    """Arena of nodes in pre-order; node 0 is the root."""

    nodes: tuple

    def __post_init__(self):
        self.validate()

    @property
    def root(self):
        return self.nodes[0]

    @property
    def num_classes(self):
        return len(self.root.classes)

    @property
    def depth(self):
        return max(n.depth for n in self.nodes)

    def internal(self):
        return [n for n in self.nodes if not n.is_leaf]

    def leaves(self):
        return [n for n in self.nodes if n.is_leaf]

    def leaf_of(self):
        """Array mapping class index to its leaf node id."""
        out = np.empty(self.num_classes, dtype=np.int64)
        for n in self.leaves():
            out[n.classes[0]] = n.id
        return out

    def left_classes(self, k):
        return self.nodes[self.nodes[k].left].classes

    def right_classes(self, k):
        return self.nodes[self.nodes[k].right].classes

    def path(self, c):
        """Internal nodes from the root toward class ``c`` as (id, went_left)."""
        out = []
        node = self.nodes[0]
        while not node.is_leaf:
            went_left = c in self.nodes[node.left].classes
            out.append((node.id, went_left))
            node = self.nodes[node.left if went_left else node.right]
        return out

    def frontier(self, d):
        """Nodes at depth ``d`` plus shallower leaves, ordered by smallest class."""
        front = [n for n in self.nodes if n.depth == d or (n.is_leaf and n.depth < d)]
        return sorted(front, key=lambda n: n.classes[0])

    def validate(self):
        nodes = self.nodes
        if not nodes:
            raise StructureError("empty structure")
        m = len(nodes[0].classes)
        if set(nodes[0].classes) != set(range(m)):
            raise StructureError("root class set must be {0..m-1}")
        for i, n in enumerate(nodes):
            if n.id != i:
                raise StructureError("node ids must equal arena positions")
            if n.is_leaf:
                if n.right >= 0 or len(n.classes) != 1:
                    raise StructureError(f"leaf {i} must hold exactly one class")
                continue
            lc, rc = set(nodes[n.left].classes), set(nodes[n.right].classes)
            if not lc or not rc or lc & rc or lc | rc != set(n.classes):
                raise StructureError(f"node {i} is not a disjoint covering split")
        if len(self.leaves()) != m or len(self.internal()) != m - 1:
            raise StructureError("expected m leaves and m-1 internal nodes")

    def to_list(self):
        return [{"id": n.id, "classes": list(n.classes), "depth": n.depth, "parent": n.parent,
                 "left": n.left, "right": n.right} for n in self.nodes]

    @classmethod
    def from_list(cls, items):
        return cls(tuple(Node(d["id"], tuple(d["classes"]), d["depth"], d["parent"],
                              d["left"], d["right"]) for d in items))


def sample_structure(m, strategy="random", seed=0):
    """Sample a class tree over ``m`` classes.

    ``random`` sends each class left or right with probability 1/2,
    redrawing until both sides are non-empty; ``balanced`` draws a uniform
    bipartition into halves of sizes ceil/floor.
    """
    if m < 2:
        raise StructureError("need at least two classes")
    if strategy not in ("random", "balanced"):
        raise StructureError(f"unknown split strategy {strategy!r}")
    rng = np.random.default_rng(seed)

    def split(classes):
        arr = np.asarray(classes)
        if strategy == "balanced":
            perm = rng.permutation(arr)
            h = (arr.size + 1) // 2
            return perm[:h].tolist(), perm[h:].tolist()
        while True:
            side = rng.random(arr.size) < 0.5
            if side.any() and not side.all():
                return arr[side].tolist(), arr[~side].tolist()

    return _build(m, split)


def _build(m, split):
    nodes = []

    def build(classes, depth, parent):
        i = len(nodes)
        nodes.append(None)
        if len(classes) == 1:
            nodes[i] = Node(i, tuple(classes), depth, parent)
            return i
        left, right = split(classes)
        li = build(tuple(sorted(int(c) for c in left)), depth + 1, i)
        ri = build(tuple(sorted(int(c) for c in right)), depth + 1, i)
        nodes[i] = Node(i, tuple(classes), depth, parent, li, ri)
        return i

    build(tuple(range(m)), 0, -1)
    return TreeStructure(tuple(nodes))


def structure_from_nested(pairs):
    """Build a tree from nested pairs, e.g. ``((0, 1), (2, 3))``."""
    def classes_of(s):
        return (s,) if isinstance(s, int) else classes_of(s[0]) + classes_of(s[1])

    lookup = {}

    def index(s):
        if not isinstance(s, int):
            lookup[tuple(sorted(classes_of(s)))] = s
            index(s[0])
            index(s[1])

    index(pairs)

    def split(classes):
        s = lookup[tuple(classes)]
        return classes_of(s[0]), classes_of(s[1])

    return _build(len(classes_of(pairs)), split)


@dataclass(eq=False)
class NestedDichotomy:
    structure: TreeStructure
    models: dict
    calibrators: dict
    num_features: int
    label_names: tuple = ()
    external: object = None
    metadata: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict, repr=False)

    @property
    def num_classes(self):
        return self.structure.num_classes

    # -- per-node branch probabilities ----------------------------------

    def _matrix(self, X):
        if isinstance(X, Dataset):
            X = X.X
        if hasattr(X, "tocsr"):
            X = X.tocsr()
        else:
            X = np.asarray(X, dtype=float)
            if X.ndim == 1:
                X = X.reshape(1, -1)
        if X.shape[1] != self.num_features:
            raise ValueError(
                f"dimension mismatch: model expects {self.num_features} features, got {X.shape[1]}")
        return X

    def node_proba(self, X, k, clamp=True):
        """Probability of the left branch at internal node ``k`` for each row."""
        X = self._matrix(X)
        p = self.calibrators.get(k, cal.IdentityCalibrator())(self.models[k].scores(X))
        p = np.asarray(p, dtype=float)
        return np.clip(p, BRANCH_EPS, 1.0 - BRANCH_EPS) if clamp else p

    def branch_probabilities(self, X, clamp=True):
        X = self._matrix(X)
        return {n.id: self.node_proba(X, n.id, clamp) for n in self.structure.internal()}

    def node_log_mass(self, X):
        """``(n, num_nodes)`` log-probability of reaching each node (pre-external)."""
        X = self._matrix(X)
        bp = self.branch_probabilities(X)
        out = np.zeros((X.shape[0], len(self.structure.nodes)))
        for node in self.structure.nodes:       # pre-order: parents first
            if node.is_leaf:
                continue
            p = bp[node.id]
            out[:, node.left] = out[:, node.id] + np.log(p)
            out[:, node.right] = out[:, node.id] + np.log1p(-p)
        return out

    # -- inference --------------------------------------------------------

    def predict_distribution(self, X, external=True):
        X = self._matrix(X)
        lm = self.node_log_mass(X)
        P = np.exp(lm[:, self.structure.leaf_of()])
        if external and self.external is not None:
            P = cal.apply_scaler(self.external, cal.log_probabilities(P))
        return P

    def predict(self, X):
        return np.argmax(self.predict_distribution(X), axis=1)

    def predict_greedy(self, X):
        X = self._matrix(X)
        bp = self.branch_probabilities(X)
        nodes = self.structure.nodes
        out = np.empty(X.shape[0], dtype=np.int64)
        for i in range(X.shape[0]):
            node = nodes[0]
            while not node.is_leaf:
                node = nodes[node.left if bp[node.id][i] >= 0.5 else node.right]
            out[i] = node.classes[0]
        return out

    def frontier_mass(self, X, d):
        """Frontier nodes at depth ``d`` and their ``(n, len(frontier))`` masses.

        Without an external scaler a node's mass is the product of branch
        probabilities down to it; with one, it is the calibrated mass of the
        leaves below it.
        """
        if d < 1:
            raise ValueError("depth limit must be at least 1")
        X = self._matrix(X)
        front = self.structure.frontier(d)
        if self.external is None:
            lm = self.node_log_mass(X)
            return front, np.exp(lm[:, [n.id for n in front]])
        P = self.predict_distribution(X)
        return front, np.stack([P[:, list(n.classes)].sum(axis=1) for n in front], axis=1)

    def predict_depth_cutoff(self, X, d):
        """Per row: (class set of the most probable depth-``d`` frontier node, its mass)."""
        front, M = self.frontier_mass(X, d)
        j = np.argmax(M, axis=1)
        return [front[i].classes for i in j], M[np.arange(M.shape[0]), j]

    # -- NLL decomposition along a path ----------------------------------

    def path_trace(self, x, y):
        X = self._matrix(x)
        if X.shape[0] != 1:
            raise ValueError("path_trace takes a single instance")
        out = []
        for k, went_left in self.structure.path(int(y)):
            p = float(self.node_proba(X, k, clamp=False)[0])
            out.append((k, p, int(went_left)))
        return out

    def nll_decomposition(self, x, y):
        """(multiclass NLL, per-node binary NLLs along the path to ``y``).

        Uses internally calibrated, unclamped branch probabilities and
        ignores any external scaler.
        """
        trace = self.path_trace(x, y)
        prob = 1.0
        parts = []
        for _, p, t in trace:
            prob *= p if t else 1.0 - p
            parts.append(float(binary_nll(p, t)))
        with np.errstate(divide="ignore"):
            total = float(-np.log(prob))
        return total, parts

    # -- edits ------------------------------------------------------------

    def with_node_calibrator(self, k, calibrator):
        cals = dict(self.calibrators)
        cals[k] = calibrator
        return replace(self, calibrators=cals)

    def with_node_model(self, k, model):
        models = dict(self.models)
        models[k] = model
        return replace(self, models=models)

    # -- persistence ------------------------------------------------------

    def to_dict(self):
        nodes = []
        for n in self.structure.nodes:
            item = {"id": n.id, "classes": list(n.classes), "depth": n.depth,
                    "parent": n.parent, "left": n.left, "right": n.right}
            if not n.is_leaf:
                item["class_sets"] = [list(self.structure.left_classes(n.id)),
                                      list(self.structure.right_classes(n.id))]
                item["model"] = self.models[n.id].to_dict()
                item["calibrator"] = self.calibrators.get(n.id, cal.IdentityCalibrator()).to_dict()
            nodes.append(item)
        meta = dict(self.metadata)
        return {
            "format_version": FORMAT_VERSION,
            "seed": meta.get("seed"),
            "learner": meta.get("learner"),
            "label_table": list(self.label_names),
            "num_features": self.num_features,
            "metadata": meta,
            "nodes": nodes,
            "external_calibrator": None if self.external is None else self.external.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc):
        if not isinstance(doc, dict) or "format_version" not in doc:
            raise ModelFormatError("not a nested-dichotomy model document (no format_version)")
        if doc["format_version"] != FORMAT_VERSION:
            raise ModelFormatError(f"unsupported format_version {doc['format_version']!r}; "
                                   f"expected {FORMAT_VERSION}")
        try:
            structure = TreeStructure.from_list(doc["nodes"])
            models, cals = {}, {}
            for item in doc["nodes"]:
                if item["left"] >= 0:
                    models[item["id"]] = model_from_dict(item["model"])
                    cals[item["id"]] = cal.binary_calibrator_from_dict(item["calibrator"])
            return cls(structure, models, cals, int(doc["num_features"]),
                       tuple(doc["label_table"]), cal.scaler_from_dict(doc["external_calibrator"]),
                       dict(doc.get("metadata", {})))
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelFormatError(f"corrupt model document (format_version "
                                   f"{FORMAT_VERSION}): {exc}") from exc

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelFormatError(f"model file is not valid JSON (expected format_version "
                                   f"{FORMAT_VERSION}): {exc}") from exc
        return cls.from_dict(doc)


def _fit_node_calibrator(kind, X, t, learner, seed, folds=3):
    """Out-of-fold scores from stratified CV, then a calibrator fitted on them.

    Returns ``(calibrator, oof_scores)`` or ``(None, reason)`` when the node
    is too small or a training fold lacks one meta-class.
    """
    n = t.shape[0]
    if n < MIN_CAL_INSTANCES:
        return None, f"{n} local instances"
    if t.min() == t.max():
        return None, "single meta-class"
    oof = np.empty(n)
    for f, (tr, ev) in enumerate(stratified_kfold(t.astype(np.int64), folds, seed)):
        tt = t[tr]
        if tt.min() == tt.max():
            return None, "single meta-class fold"
        m = fit_binary(learner.kind, X[tr], tt, learner, derive_seed(seed, f))
        oof[ev] = m.scores(X[ev])
    return cal.FITTERS[kind](oof, t), oof


def train(structure, d, learner=None, internal_cal="none", seed=0, cal_folds=3):
    """Fit every internal node of ``structure`` on ``d``.

    Node ``k`` sees the instances whose class lies in its class set, with
    meta-label 1 for the left subset.  With ``internal_cal`` set to
    ``platt`` or ``isotonic`` each node's calibrator is fitted on
    out-of-fold scores from stratified ``cal_folds``-fold CV over the node's
    local data, and the base model is then refitted on all of it.
    """
    learner = learner if learner is not None else LearnerConfig()
    if internal_cal not in ("none", "platt", "isotonic"):
        raise ValueError(f"unknown internal calibration {internal_cal!r}")
    if structure.num_classes != d.num_classes:
        raise StructureError(f"structure has {structure.num_classes} classes, "
                             f"dataset has {d.num_classes}")
    counts = d.class_counts()
    missing = np.flatnonzero(counts == 0)
    if missing.size:
        names = [d.label_names[c] for c in missing]
        raise StructureError(f"dataset is missing classes {names}")
    X = d.X
    models, cals = {}, {}
    skipped = {}
    diagnostics = {}
    for node in structure.internal():
        mask = np.isin(d.y, node.classes)
        idx = np.flatnonzero(mask)
        Xk = X[idx]
        t = np.isin(d.y[idx], structure.left_classes(node.id)).astype(float)
        nseed = derive_seed(seed, node.id)
        models[node.id] = fit_binary(learner.kind, Xk, t, learner, nseed)
        if internal_cal == "none":
            cals[node.id] = cal.IdentityCalibrator()
            continue
        c, info = _fit_node_calibrator(internal_cal, Xk, t, learner, derive_seed(nseed, 1),
                                       cal_folds)
        if c is None:
            cals[node.id] = cal.IdentityCalibrator()
            skipped[str(node.id)] = info
        else:
            cals[node.id] = c
            diagnostics[node.id] = {"oof_scores": info, "meta_labels": t}
    meta = {
        "seed": int(seed),
        "learner": learner.to_dict(),
        "internal_cal": internal_cal,
        "calibration_skipped": skipped,
        "external_cal": "none",
        "warnings": [],
    }
    return NestedDichotomy(structure, models, cals, d.num_features, tuple(d.label_names),
                           None, meta, diagnostics)


# module-level spellings of the per-instance operations


def predict_distribution(nd, x):
    P = nd.predict_distribution(x)
    return P[0] if np.ndim(x) == 1 else P


def predict_greedy(nd, x):
    out = nd.predict_greedy(x)
    return int(out[0]) if np.ndim(x) == 1 else out


def predict_depth_cutoff(nd, x, d):
    sets, conf = nd.predict_depth_cutoff(x, d)
    if np.ndim(x) == 1:
        return sets[0], float(conf[0])
    return sets, conf


def nll_decomposition(nd, x, y):
    return nd.nll_decomposition(x, y)
