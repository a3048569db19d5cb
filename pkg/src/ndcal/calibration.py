"""Binary calibrators (Platt, isotonic) and multiclass scalers (vector, matrix).

Binary calibrators map a log-odds score to a probability.  Scalers map a
vector of class log-probabilities to a distribution via
``softmax(W z + b)``.
"""

import logging
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit, log_softmax, softmax

from ._optim import gradient_descent

log = logging.getLogger(__name__)

PROB_EPS = 1e-12


class CalibrationError(ValueError):
    pass


def _clip_prob(p):
    return np.clip(p, PROB_EPS, 1.0 - PROB_EPS)


def _check_scores(z):
    z = np.asarray(z, dtype=float).ravel()
    if not np.all(np.isfinite(z)):
        raise CalibrationError("non-finite score")
    return z


def _logit(p):
    return np.log(p) - np.log1p(-p)


# --------------------------------------------------------------------------
# binary calibrators


@dataclass(frozen=True)
class IdentityCalibrator:
    """Pass-through: the base model's own sigmoid of the score."""

    kind = "identity"

    def __call__(self, z):
        return expit(np.asarray(z, dtype=float))

    def to_dict(self):
        return {"kind": self.kind}


@dataclass(frozen=True)
class PlattModel:
    """``p = 1 / (1 + exp(alpha * z + beta))``."""

    alpha: float
    beta: float
    kind = "platt"

    def __call__(self, z):
        return _clip_prob(expit(-(self.alpha * np.asarray(z, dtype=float) + self.beta)))

    def to_dict(self):
        return {"kind": self.kind, "alpha": self.alpha, "beta": self.beta}


def _platt_nll(alpha, beta, z, t):
    a = alpha * z + beta
    # -log p = log(1 + e^a) for t=1; -log(1-p) = log(1 + e^-a) for t=0
    return float(np.mean(np.logaddexp(0.0, np.where(t == 1, a, -a))))


def fit_platt(scores, labels, max_iter=100, tol=1e-10):
    """Unregularised 1-D logistic regression of ``labels`` on ``scores``.

    Damped Newton started from the constant base-rate fit, so the result is
    never worse than the base rate on the fit set.  A single-class input
    yields ``alpha = 0`` and the Laplace-smoothed rate.
    """
    z = _check_scores(scores)
    t = np.asarray(labels, dtype=float).ravel()
    if z.shape != t.shape:
        raise CalibrationError("scores and labels differ in length")
    n, n1 = t.shape[0], float(t.sum())
    if n1 == 0 or n1 == n or n < 2:
        return PlattModel(0.0, float(-_logit((n1 + 1.0) / (n + 2.0))))
    alpha, beta = 0.0, float(-_logit(n1 / n))
    f = _platt_nll(alpha, beta, z, t)
    for _ in range(max_iter):
        p = expit(-(alpha * z + beta))
        r = t - p                      # d(mean nll)/d(a_i) = (t - p) / n
        g = np.array([np.mean(r * z), np.mean(r)])
        if np.abs(g).max() < tol:
            break
        v = p * (1.0 - p)
        H = np.array([[np.mean(v * z * z), np.mean(v * z)], [np.mean(v * z), np.mean(v)]])
        H[np.diag_indices(2)] += 1e-12
        try:
            d = -np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            d = -g
        step = 1.0
        while step > 1e-12:
            a2, b2 = alpha + step * d[0], beta + step * d[1]
            f2 = _platt_nll(a2, b2, z, t)
            if f2 <= f + 1e-4 * step * float(g @ d):
                break
            step *= 0.5
        else:
            break
        if f - f2 < 0:
            break
        alpha, beta, f = float(a2), float(b2), f2
    return PlattModel(alpha, beta)


def apply_platt(model, z):
    return float(model(z))


def pava(y, w=None):
    """Least-squares non-decreasing fit to ``y`` (in the given order)."""
    y = np.asarray(y, dtype=float)
    w = np.ones_like(y) if w is None else np.asarray(w, dtype=float)
    vals, wts, sizes = [], [], []
    for yi, wi in zip(y, w):
        vals.append(yi)
        wts.append(wi)
        sizes.append(1)
        while len(vals) > 1 and vals[-2] > vals[-1]:
            v1, w1, s1 = vals.pop(), wts.pop(), sizes.pop()
            wsum = wts[-1] + w1
            vals[-1] = (vals[-1] * wts[-1] + v1 * w1) / wsum
            wts[-1] = wsum
            sizes[-1] += s1
    return np.repeat(vals, sizes)


@dataclass(frozen=True)
class IsotonicModel:
    """Non-decreasing step function; segment ``i`` covers ``[breakpoints[i], breakpoints[i+1])``."""

    breakpoints: tuple
    values: tuple
    kind = "isotonic"

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        bp = np.asarray(self.breakpoints)
        idx = np.clip(np.searchsorted(bp, z, side="right") - 1, 0, len(bp) - 1)
        return _clip_prob(np.asarray(self.values)[idx])

    def to_dict(self):
        return {"kind": self.kind, "breakpoints": list(self.breakpoints),
                "values": list(self.values)}


def fit_isotonic(scores, labels):
    """Pool-adjacent-violators fit of ``labels`` against ``scores``.

    Equal scores are pooled first (averaged with their multiplicity as
    weight), so the fit is a function of the score.
    """
    z = _check_scores(scores)
    t = np.asarray(labels, dtype=float).ravel()
    if z.shape != t.shape:
        raise CalibrationError("scores and labels differ in length")
    if z.shape[0] < 1:
        raise CalibrationError("need at least one point")
    uz, inv, cnt = np.unique(z, return_inverse=True, return_counts=True)
    means = np.bincount(inv, weights=t) / cnt
    fitted = pava(means, cnt)
    keep = np.ones(uz.shape[0], dtype=bool)
    keep[1:] = fitted[1:] != fitted[:-1]
    return IsotonicModel(tuple(uz[keep].tolist()), tuple(fitted[keep].tolist()))


def apply_isotonic(model, z):
    return float(model(z))


def binary_calibrator_from_dict(doc):
    kind = doc["kind"]
    if kind == "identity":
        return IdentityCalibrator()
    if kind == "platt":
        return PlattModel(doc["alpha"], doc["beta"])
    if kind == "isotonic":
        return IsotonicModel(tuple(doc["breakpoints"]), tuple(doc["values"]))
    raise CalibrationError(f"unknown binary calibrator kind {kind!r}")


FITTERS = {"platt": fit_platt, "isotonic": fit_isotonic}


# --------------------------------------------------------------------------
# multiclass scalers


@dataclass(frozen=True, eq=False)
class VectorScaler:
    diag_weights: np.ndarray
    bias: np.ndarray
    converged: bool = True
    kind = "vector"

    @property
    def num_classes(self):
        return self.diag_weights.shape[0]

    def transform(self, Z):
        return Z * self.diag_weights + self.bias

    def to_dict(self):
        return {"kind": self.kind, "diag_weights": self.diag_weights.tolist(),
                "bias": self.bias.tolist()}


@dataclass(frozen=True, eq=False)
class MatrixScaler:
    weight_matrix: np.ndarray
    bias: np.ndarray
    converged: bool = True
    kind = "matrix"

    @property
    def num_classes(self):
        return self.bias.shape[0]

    def transform(self, Z):
        return Z @ self.weight_matrix.T + self.bias

    def to_dict(self):
        return {"kind": self.kind, "weight_matrix": self.weight_matrix.tolist(),
                "bias": self.bias.tolist()}


def scaler_from_dict(doc):
    if doc is None:
        return None
    kind = doc["kind"]
    if kind == "vector":
        return VectorScaler(np.array(doc["diag_weights"], dtype=float),
                            np.array(doc["bias"], dtype=float))
    if kind == "matrix":
        return MatrixScaler(np.array(doc["weight_matrix"], dtype=float),
                            np.array(doc["bias"], dtype=float))
    raise CalibrationError(f"unknown scaler kind {kind!r}")


def apply_scaler(scaler, z):
    """Calibrated distribution for one logit vector or a matrix of them."""
    Z = np.asarray(z, dtype=float)
    single = Z.ndim == 1
    Z = np.atleast_2d(Z)
    if Z.shape[1] != scaler.num_classes:
        raise CalibrationError(
            f"dimension mismatch: scaler has {scaler.num_classes} classes, got {Z.shape[1]}")
    P = softmax(scaler.transform(Z), axis=1)
    return P[0] if single else P


def _check_logits(logits, labels):
    Z = np.asarray(logits, dtype=float)
    y = np.asarray(labels, dtype=np.int64).ravel()
    if Z.ndim != 2 or Z.shape[0] != y.shape[0]:
        raise CalibrationError("logits must be an n x m matrix matching the labels")
    if not np.all(np.isfinite(Z)):
        raise CalibrationError("non-finite logit")
    if y.min() < 0 or y.max() >= Z.shape[1]:
        raise CalibrationError("label out of range")
    if np.unique(y).size < 2:
        raise CalibrationError("need at least two classes present")
    return Z, y


def scaled_nll(S, y):
    """Mean multiclass NLL of ``softmax(S)`` against ``y``."""
    return float(-np.mean(log_softmax(S, axis=1)[np.arange(y.shape[0]), y]))


def _softmax_residual(S, y):
    G = softmax(S, axis=1)
    G[np.arange(y.shape[0]), y] -= 1.0
    return G / y.shape[0]


def fit_vector_scaling(logits, labels, tol=1e-6, max_iter=1000):
    """Minimise NLL of ``softmax(w * z + b)`` starting from ``w = 1, b = 0``."""
    Z, y = _check_logits(logits, labels)
    m = Z.shape[1]

    def fun(theta):
        w, b = theta[:m], theta[m:]
        S = Z * w + b
        G = _softmax_residual(S, y)
        return scaled_nll(S, y), np.concatenate([(G * Z).sum(axis=0), G.sum(axis=0)])

    res = gradient_descent(fun, np.concatenate([np.ones(m), np.zeros(m)]), tol=tol,
                           max_iter=max_iter)
    return VectorScaler(res.x[:m].copy(), res.x[m:].copy(), res.converged)


def fit_matrix_scaling(logits, labels, tol=1e-6, max_iter=1000, offdiag_l2=1e-4,
                       init="vector", diagonal_only=False):
    """Minimise NLL of ``softmax(W z + b)`` with an L2 penalty on off-diagonal ``W``.

    ``init="vector"`` starts from the vector-scaling solution on the same
    data, so the fit can only improve on it; ``init="identity"`` starts
    from ``W = I, b = 0``.  ``diagonal_only`` freezes the off-diagonals at 0.
    """
    Z, y = _check_logits(logits, labels)
    m = Z.shape[1]
    if init == "vector":
        vs = fit_vector_scaling(Z, y, tol=tol, max_iter=max_iter)
        W0, b0 = np.diag(vs.diag_weights), vs.bias
    elif init == "identity":
        W0, b0 = np.eye(m), np.zeros(m)
    else:
        raise CalibrationError(f"unknown init {init!r}")
    off = ~np.eye(m, dtype=bool)
    mask = np.eye(m) if diagonal_only else np.ones((m, m))

    def fun(theta):
        W = theta[: m * m].reshape(m, m)
        b = theta[m * m:]
        S = Z @ W.T + b
        G = _softmax_residual(S, y)
        f = scaled_nll(S, y) + 0.5 * offdiag_l2 * float(np.sum(W[off] ** 2))
        gW = (G.T @ Z + offdiag_l2 * W * off) * mask
        return f, np.concatenate([gW.ravel(), G.sum(axis=0)])

    res = gradient_descent(fun, np.concatenate([W0.ravel(), b0]), tol=tol, max_iter=max_iter)
    return MatrixScaler(res.x[: m * m].reshape(m, m).copy(), res.x[m * m:].copy(), res.converged)


SCALERS = {"vector": fit_vector_scaling, "matrix": fit_matrix_scaling}


def log_probabilities(P):
    """Logit representation of tree outputs: log of probabilities clamped at 1e-12."""
    return np.log(np.maximum(np.asarray(P, dtype=float), PROB_EPS))


def external_calibrate(nd, holdout, method="vector"):
    """Fit a scaler on ``holdout`` and return a copy of ``nd`` that uses it.

    ``holdout`` must be disjoint from the data ``nd`` was trained on.
    """
    if method not in SCALERS:
        raise CalibrationError(f"unknown external calibration method {method!r}")
    P = nd.predict_distribution(holdout.X, external=False)
    present = np.unique(holdout.y)
    notes = list(nd.metadata.get("warnings", []))
    if present.size < nd.num_classes:
        missing = sorted(set(range(nd.num_classes)) - set(present.tolist()))
        msg = f"external holdout is missing classes {missing}"
        log.warning(msg)
        notes.append(msg)
    scaler = SCALERS[method](log_probabilities(P), holdout.y)
    meta = {**nd.metadata, "external_cal": method, "warnings": notes}
    return replace(nd, external=scaler, metadata=meta)


__all__ = [
    "PROB_EPS", "CalibrationError", "IdentityCalibrator", "PlattModel", "IsotonicModel",
    "VectorScaler", "MatrixScaler", "fit_platt", "apply_platt", "fit_isotonic",
    "apply_isotonic", "pava", "fit_vector_scaling", "fit_matrix_scaling", "apply_scaler",
    "external_calibrate", "log_probabilities", "scaled_nll", "binary_calibrator_from_dict",
    "scaler_from_dict", "FITTERS", "SCALERS",
]
