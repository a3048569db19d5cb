"""Probabilistic binary base learners used at the internal nodes of a tree.

Every model exposes ``scores(X)``, the clamped log-odds of meta-class 1,
and ``proba(X) = sigmoid(scores(X))``.
"""

from dataclasses import dataclass, asdict, field

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from ._optim import gradient_descent

SCORE_CLAMP = 35.0
KINDS = ("logistic", "gnb", "mnb", "boosted")


class LearnerError(ValueError):
    pass


@dataclass(frozen=True)
class LearnerConfig:
    kind: str = "logistic"
    reg_strength: float = 1.0
    tol: float = 1e-6
    max_iter: int = 1000
    var_smoothing: float = 1e-9
    alpha: float = 1.0
    n_rounds: int = 50
    max_depth: int = 3

    def __post_init__(self):
        if self.kind not in KINDS:
            raise LearnerError(f"unknown learner kind {self.kind!r}; expected one of {KINDS}")

    def to_dict(self):
        return asdict(self)


def _as_matrix(X):
    if sp.issparse(X):
        return X.tocsr()
    X = np.asarray(X, dtype=float)
    return X.reshape(1, -1) if X.ndim == 1 else X


def _dense(X):
    return X.toarray() if sp.issparse(X) else X


def _check_finite(X):
    data = X.data if sp.issparse(X) else X
    if not np.all(np.isfinite(data)):
        raise LearnerError("non-finite feature value")


class BinaryModel:
    kind = None
    num_features = 0

    def _raw_scores(self, X):
        raise NotImplementedError

    def scores(self, X):
        X = _as_matrix(X)
        if X.shape[1] != self.num_features:
            raise LearnerError(
                f"dimension mismatch: model expects {self.num_features} features, got {X.shape[1]}")
        return np.clip(self._raw_scores(X), -SCORE_CLAMP, SCORE_CLAMP)

    def proba(self, X):
        return expit(self.scores(X))

    def to_dict(self):
        raise NotImplementedError


@dataclass(eq=False)
class ConstantModel(BinaryModel):
    """Laplace-smoothed base rate, used when a node sees only one meta-class."""

    p: float
    num_features: int
    kind = "constant"

    def _raw_scores(self, X):
        with np.errstate(divide="ignore"):
            return np.full(X.shape[0], np.log(self.p) - np.log1p(-self.p))

    def to_dict(self):
        return {"kind": self.kind, "p": self.p, "num_features": self.num_features}


@dataclass(eq=False)
class LogisticModel(BinaryModel):
    weights: np.ndarray
    bias: float
    reg_strength: float = 1.0
    num_features: int = field(init=False)
    history: list = field(default_factory=list, repr=False)
    kind = "logistic"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.num_features = self.weights.shape[0]

    def _raw_scores(self, X):
        return np.asarray(X @ self.weights).ravel() + self.bias

    def to_dict(self):
        return {"kind": self.kind, "weights": self.weights.tolist(), "bias": self.bias,
                "reg_strength": self.reg_strength}


@dataclass(eq=False)
class GaussianNBModel(BinaryModel):
    means: np.ndarray       # (2, d)
    variances: np.ndarray   # (2, d)
    log_priors: np.ndarray  # (2,)
    kind = "gnb"

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=float)
        self.variances = np.asarray(self.variances, dtype=float)
        self.log_priors = np.asarray(self.log_priors, dtype=float)
        self.num_features = self.means.shape[1]

    def joint_log_likelihood(self, X):
        X = _dense(X)
        out = np.empty((X.shape[0], 2))
        for c in range(2):
            norm = -0.5 * np.sum(np.log(2.0 * np.pi * self.variances[c]))
            quad = -0.5 * np.sum((X - self.means[c]) ** 2 / self.variances[c], axis=1)
            out[:, c] = self.log_priors[c] + norm + quad
        return out

    def _raw_scores(self, X):
        jll = self.joint_log_likelihood(X)
        return jll[:, 1] - jll[:, 0]

    def to_dict(self):
        return {"kind": self.kind, "means": self.means.tolist(),
                "variances": self.variances.tolist(), "log_priors": self.log_priors.tolist()}


@dataclass(eq=False)
class MultinomialNBModel(BinaryModel):
    feature_log_prob: np.ndarray  # (2, d), rows are log-distributions
    log_priors: np.ndarray
    kind = "mnb"

    def __post_init__(self):
        self.feature_log_prob = np.asarray(self.feature_log_prob, dtype=float)
        self.log_priors = np.asarray(self.log_priors, dtype=float)
        self.num_features = self.feature_log_prob.shape[1]

    def _raw_scores(self, X):
        diff = self.feature_log_prob[1] - self.feature_log_prob[0]
        return np.asarray(X @ diff).ravel() + (self.log_priors[1] - self.log_priors[0])

    def to_dict(self):
        return {"kind": self.kind, "feature_log_prob": self.feature_log_prob.tolist(),
                "log_priors": self.log_priors.tolist()}


@dataclass(eq=False)
class Stump:
    """Axis-aligned decision tree stored as flat arrays; leaves carry +-1."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf_value: np.ndarray

    def __post_init__(self):
        self.feature = np.asarray(self.feature, dtype=np.int64)
        self.threshold = np.asarray(self.threshold, dtype=float)
        self.left = np.asarray(self.left, dtype=np.int64)
        self.right = np.asarray(self.right, dtype=np.int64)
        self.leaf_value = np.asarray(self.leaf_value, dtype=float)

    def depth(self):
        def walk(i):
            if self.left[i] < 0:
                return 0
            return 1 + max(walk(self.left[i]), walk(self.right[i]))
        return walk(0)

    def predict(self, X):
        # split thresholds were chosen on float32 copies of the features
        X32 = np.asarray(X, dtype=np.float32)
        rows = np.arange(X32.shape[0])
        node = np.zeros(X32.shape[0], dtype=np.int64)
        while True:
            inner = self.left[node] >= 0
            if not inner.any():
                return self.leaf_value[node]
            f = np.where(inner, self.feature[node], 0)
            go_left = X32[rows, f] <= self.threshold[node]
            node = np.where(inner, np.where(go_left, self.left[node], self.right[node]), node)

    def to_dict(self):
        return {k: getattr(self, k).tolist()
                for k in ("feature", "threshold", "left", "right", "leaf_value")}


@dataclass(eq=False)
class BoostedTreesModel(BinaryModel):
    trees: list
    stage_weights: np.ndarray
    num_features: int
    kind = "boosted"

    def __post_init__(self):
        self.stage_weights = np.asarray(self.stage_weights, dtype=float)

    def additive_score(self, X):
        X = _dense(X)
        F = np.zeros(X.shape[0])
        for tree, a in zip(self.trees, self.stage_weights):
            F += a * tree.predict(X)
        return F

    def _raw_scores(self, X):
        return 2.0 * self.additive_score(X)

    def to_dict(self):
        return {"kind": self.kind, "num_features": self.num_features,
                "stage_weights": self.stage_weights.tolist(),
                "trees": [t.to_dict() for t in self.trees]}


def model_from_dict(doc):
    kind = doc["kind"]
    if kind == "constant":
        return ConstantModel(doc["p"], doc["num_features"])
    if kind == "logistic":
        return LogisticModel(np.array(doc["weights"], dtype=float), doc["bias"], doc["reg_strength"])
    if kind == "gnb":
        return GaussianNBModel(doc["means"], doc["variances"], doc["log_priors"])
    if kind == "mnb":
        return MultinomialNBModel(doc["feature_log_prob"], doc["log_priors"])
    if kind == "boosted":
        return BoostedTreesModel([Stump(**t) for t in doc["trees"]], doc["stage_weights"],
                                 doc["num_features"])
    raise LearnerError(f"unknown model kind {kind!r}")


def logistic_objective(X, t, reg_strength):
    """Mean NLL plus ``reg_strength / (2 n) * |w|^2`` over ``theta = (w, b)``.

    Equivalent (up to the 1/n factor) to summed log-loss with an L2 penalty
    of ``reg_strength / 2``; the intercept is not penalised.
    """
    n = X.shape[0]
    XT = X.T

    def fun(theta):
        w, b = theta[:-1], theta[-1]
        s = np.asarray(X @ w).ravel() + b
        loss = np.logaddexp(0.0, s) - t * s
        f = loss.sum() / n + 0.5 * reg_strength * (w @ w) / n
        r = (expit(s) - t) / n
        g = np.empty_like(theta)
        g[:-1] = np.asarray(XT @ r).ravel() + reg_strength * w / n
        g[-1] = r.sum()
        return f, g

    return fun


def _fit_logistic(X, t, cfg):
    fun = logistic_objective(X, t, cfg.reg_strength)
    res = gradient_descent(fun, np.zeros(X.shape[1] + 1), tol=cfg.tol,
                           max_iter=cfg.max_iter, record=True)
    return LogisticModel(res.x[:-1].copy(), float(res.x[-1]), cfg.reg_strength, history=res.history)


def _fit_gnb(X, t, cfg):
    X = _dense(X)
    maxvar = float(np.var(X, axis=0).max())
    eps = cfg.var_smoothing * (maxvar if maxvar > 0 else 1.0)
    means, variances, counts = [], [], []
    for c in (0, 1):
        Xc = X[t == c]
        means.append(Xc.mean(axis=0))
        variances.append(Xc.var(axis=0) + eps)
        counts.append(Xc.shape[0])
    counts = np.array(counts, dtype=float)
    return GaussianNBModel(np.array(means), np.array(variances), np.log(counts / counts.sum()))


def _fit_mnb(X, t, cfg):
    data = X.data if sp.issparse(X) else X
    if np.any(data < 0):
        raise LearnerError("multinomial naive Bayes needs non-negative features")
    rows = []
    counts = []
    for c in (0, 1):
        mask = t == c
        fc = np.asarray(X[mask].sum(axis=0)).ravel() + cfg.alpha
        rows.append(np.log(fc) - np.log(fc.sum()))
        counts.append(mask.sum())
    counts = np.array(counts, dtype=float)
    return MultinomialNBModel(np.array(rows), np.log(counts / counts.sum()))


def _tree_from_sklearn(est):
    tr = est.tree_
    # leaf label: heavier weighted class; classes_ are [-1, 1]
    leaf = np.where(tr.value[:, 0, 1] > tr.value[:, 0, 0], 1.0, -1.0)
    return Stump(tr.feature, tr.threshold, tr.children_left, tr.children_right, leaf)


def _fit_boosted(X, t, cfg, seed):
    from sklearn.tree import DecisionTreeClassifier

    X = _dense(X)
    ypm = np.where(t == 1, 1.0, -1.0)
    n = X.shape[0]
    w = np.full(n, 1.0 / n)
    rng = np.random.default_rng(seed)
    trees, alphas = [], []
    for _ in range(cfg.n_rounds):
        est = DecisionTreeClassifier(max_depth=cfg.max_depth, criterion="gini",
                                     random_state=int(rng.integers(2**31 - 1)))
        est.fit(X, ypm, sample_weight=w)
        tree = _tree_from_sklearn(est)
        h = tree.predict(X)
        miss = h != ypm
        err = float(w[miss].sum() / w.sum())
        if err >= 0.5:
            break
        err = max(err, 1e-10)
        a = 0.5 * np.log((1.0 - err) / err)
        trees.append(tree)
        alphas.append(a)
        if not miss.any():
            break
        w = w * np.exp(-a * ypm * h)
        w /= w.sum()
    if not trees:
        p = (float(t.sum()) + 1.0) / (n + 2.0)
        return ConstantModel(p, X.shape[1])
    return BoostedTreesModel(trees, np.array(alphas), X.shape[1])


def fit_binary(kind, X, meta_labels, config=None, seed=0):
    """Fit a binary model of ``kind`` on rows ``X`` with 0/1 ``meta_labels``.

    A node that sees a single meta-class gets a constant model with the
    Laplace-smoothed rate ``(n1 + 1) / (n + 2)``.
    """
    cfg = config if config is not None else LearnerConfig(kind=kind)
    if cfg.kind != kind:
        cfg = LearnerConfig(**{**cfg.to_dict(), "kind": kind})
    X = _as_matrix(X)
    t = np.asarray(meta_labels, dtype=float).ravel()
    if X.shape[0] < 1:
        raise LearnerError("cannot fit on zero instances")
    if X.shape[1] == 0:
        raise LearnerError("zero features")
    if t.shape[0] != X.shape[0]:
        raise LearnerError("rows and meta-labels differ in length")
    _check_finite(X)
    n1 = float(t.sum())
    if n1 == 0 or n1 == t.shape[0]:
        return ConstantModel((n1 + 1.0) / (t.shape[0] + 2.0), X.shape[1])
    if kind == "logistic":
        model = _fit_logistic(X, t, cfg)
    elif kind == "gnb":
        model = _fit_gnb(X, t, cfg)
    elif kind == "mnb":
        model = _fit_mnb(X, t, cfg)
    else:
        model = _fit_boosted(X, t, cfg, seed)
    model.num_features = X.shape[1]
    return model


def predict_binary_score(model, x):
    """Clamped log-odds of meta-class 1 for a single row ``x``."""
    return float(model.scores(_as_matrix(x))[0])


def predict_binary_proba(model, x):
    return float(expit(predict_binary_score(model, x)))


def binary_nll(p, t):
    """Per-instance binary log-loss of probabilities ``p`` against 0/1 ``t``."""
    p = np.asarray(p, dtype=float)
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore"):
        return -np.where(t == 1, np.log(p), np.log1p(-p))


def base_rate_entropy(t):
    t = np.asarray(t, dtype=float)
    q = t.mean()
    if q in (0.0, 1.0):
        return 0.0
    return float(-(q * np.log(q) + (1 - q) * np.log(1 - q)))


__all__ = [
    "KINDS", "SCORE_CLAMP", "LearnerConfig", "LearnerError", "BinaryModel", "ConstantModel",
    "LogisticModel", "GaussianNBModel", "MultinomialNBModel", "BoostedTreesModel", "Stump",
    "fit_binary", "predict_binary_score", "predict_binary_proba", "model_from_dict",
    "binary_nll", "base_rate_entropy", "logistic_objective",
]
