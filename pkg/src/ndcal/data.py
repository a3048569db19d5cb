"""Datasets, CSV / LIBSVM parsing, and stratified resampling."""

import io
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


class DatasetError(ValueError):
    pass


class ParseError(DatasetError):
    def __init__(self, msg, line=None, col=None):
        where = ""
        if line is not None:
            where = f"line {line}"
            if col is not None:
                where += f", col {col}"
            where += ": "
        super().__init__(where + msg)
        self.line = line
        self.col = col


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature rows plus 0-based class labels.

    ``X`` is a dense ``(n, num_features)`` float array or a CSR matrix.
    ``label_names[c]`` is the original token of class ``c``.
    """

    X: object
    y: np.ndarray
    num_classes: int
    label_names: tuple = field(default=())

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.int64)
        object.__setattr__(self, "y", y)
        if y.ndim != 1 or y.shape[0] < 1:
            raise DatasetError("empty dataset")
        if self.X.shape[0] != y.shape[0]:
            raise DatasetError("rows and labels differ in length")
        if self.num_classes < 1:
            raise DatasetError("num_classes must be positive")
        if y.min() < 0 or y.max() >= self.num_classes:
            raise DatasetError("label out of range")
        if not self.label_names:
            names = tuple(str(c) for c in range(self.num_classes))
            object.__setattr__(self, "label_names", names)
        if self.sparse:
            X = self.X.tocsr()
            if not X.has_sorted_indices:
                X.sort_indices()
            object.__setattr__(self, "X", X)

    @property
    def n(self):
        return self.y.shape[0]

    @property
    def num_features(self):
        return self.X.shape[1]

    @property
    def sparse(self):
        return sp.issparse(self.X)

    def class_counts(self):
        return np.bincount(self.y, minlength=self.num_classes)

    def subset(self, indices):
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.X[idx], self.y[idx], self.num_classes, self.label_names)

    def dense(self):
        return self.X.toarray() if self.sparse else np.asarray(self.X)


@dataclass(frozen=True)
class SplitPlan:
    train_indices: np.ndarray
    eval_indices: np.ndarray
    seed: object = None


def _read_text(text):
    if hasattr(text, "read"):
        text = text.read()
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    return text


def _is_number(tok):
    try:
        return math.isfinite(float(tok))
    except ValueError:
        return False


def parse_csv(text, label_column="last"):
    """Parse comma-delimited text with one categorical label column.

    The first row is treated as a header when one of its feature cells is
    not numeric (or, for a single-column file, its only cell is not) and its
    label token does not reappear in the label column below.
    """
    lines = [(i + 1, ln) for i, ln in enumerate(_read_text(text).splitlines()) if ln.strip()]
    if not lines:
        raise DatasetError("empty dataset")
    rows = [(no, [c.strip() for c in ln.split(",")]) for no, ln in lines]
    width = len(rows[0][1])
    if label_column == "last":
        lab = width - 1
    else:
        lab = int(label_column)
        if lab < 0:
            lab += width
        if not 0 <= lab < width:
            raise DatasetError(f"label column {label_column} out of range for {width} columns")

    for no, cells in rows:
        if len(cells) != width:
            raise ParseError(f"expected {width} columns, found {len(cells)}", line=no)

    first = rows[0][1]
    feats = [c for j, c in enumerate(first) if j != lab]
    looks_header = (any(not _is_number(c) for c in feats) if feats
                    else not _is_number(first[lab]))
    if looks_header and all(cells[lab] != first[lab] for _, cells in rows[1:]):
        rows = rows[1:]
    if not rows:
        raise DatasetError("empty dataset")
    if width < 2:
        raise DatasetError("no feature columns")

    names = {}
    X = np.empty((len(rows), width - 1))
    y = np.empty(len(rows), dtype=np.int64)
    for i, (no, cells) in enumerate(rows):
        k = 0
        for j, c in enumerate(cells):
            if j == lab:
                continue
            try:
                v = float(c)
            except ValueError:
                raise ParseError(f"non-numeric feature {c!r}", line=no, col=j + 1) from None
            if not math.isfinite(v):
                raise ParseError(f"non-finite feature {c!r}", line=no, col=j + 1)
            X[i, k] = v
            k += 1
        y[i] = names.setdefault(cells[lab], len(names))
    return Dataset(X, y, len(names), tuple(names))


def parse_libsvm(text):
    """Parse ``<label> idx:val ...`` lines with 1-based increasing indices."""
    names = {}
    labels, indptr, indices, values = [], [0], [], []
    max_index = 0
    for no, line in enumerate(_read_text(text).splitlines(), start=1):
        line = line.split("#", 1)[0]
        toks = line.split()
        if not toks:
            continue
        labels.append(names.setdefault(toks[0], len(names)))
        prev = 0
        col = len(line) - len(line.lstrip()) + len(toks[0]) + 2
        for tok in toks[1:]:
            idx_s, sep, val_s = tok.partition(":")
            try:
                if not sep:
                    raise ValueError
                idx = int(idx_s)
                val = float(val_s)
            except ValueError:
                raise ParseError(f"malformed pair {tok!r}", line=no, col=col) from None
            if idx < 1:
                raise ParseError(f"index {idx} is not 1-based", line=no, col=col)
            if idx <= prev:
                raise ParseError("indices not increasing", line=no, col=col)
            if not math.isfinite(val):
                raise ParseError(f"non-finite value {val_s!r}", line=no, col=col)
            prev = idx
            indices.append(idx - 1)
            values.append(val)
            col += len(tok) + 1
        max_index = max(max_index, prev)
        indptr.append(len(indices))
    if not labels:
        raise DatasetError("empty dataset")
    if max_index == 0:
        raise DatasetError("no features present")
    X = sp.csr_matrix(
        (np.array(values, dtype=float), np.array(indices, dtype=np.int64), np.array(indptr)),
        shape=(len(labels), max_index),
    )
    return Dataset(X, np.array(labels), len(names), tuple(names))


def to_libsvm(d):
    """Serialise a dataset to LIBSVM text (inverse of :func:`parse_libsvm`)."""
    X = d.X.tocsr() if d.sparse else sp.csr_matrix(d.dense())
    out = io.StringIO()
    for i in range(d.n):
        lo, hi = X.indptr[i], X.indptr[i + 1]
        pairs = " ".join(f"{j + 1}:{v!r}" for j, v in zip(X.indices[lo:hi], X.data[lo:hi].tolist()))
        out.write(d.label_names[d.y[i]] + (" " + pairs if pairs else "") + "\n")
    return out.getvalue()


def load(path, fmt=None, label_column="last"):
    """Read a dataset file; ``fmt`` defaults from the extension."""
    path = str(path)
    if fmt is None:
        fmt = "libsvm" if path.endswith((".svm", ".libsvm", ".txt")) else "csv"
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    if fmt == "csv":
        return parse_csv(text, label_column)
    if fmt == "libsvm":
        return parse_libsvm(text)
    raise DatasetError(f"unknown format {fmt!r}")


def _round_half_up(x):
    return int(math.floor(x + 0.5))


def _labels_of(d):
    return d.y if isinstance(d, Dataset) else np.asarray(d, dtype=np.int64)


def stratified_split_plan(d, eval_fraction, seed, names=None):
    """Index-level stratified holdout; see :func:`stratified_split`.

    ``d`` may be a Dataset or a bare label array (then ``names`` optionally
    maps class indices to printable names for error messages).
    """
    if not 0.0 < eval_fraction < 1.0:
        raise DatasetError("eval_fraction must lie in (0, 1)")
    y = _labels_of(d)
    rng = np.random.default_rng(seed)
    train, held = [], []
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        if idx.size < 2:
            if isinstance(d, Dataset):
                names = d.label_names
            name = names[c] if names is not None else int(c)
            raise DatasetError(f"cannot stratify: class {name!r} has {idx.size} instance")
        k = min(max(1, _round_half_up(idx.size * eval_fraction)), idx.size - 1)
        idx = rng.permutation(idx)
        held.append(idx[:k])
        train.append(idx[k:])
    return SplitPlan(np.sort(np.concatenate(train)), np.sort(np.concatenate(held)), seed)


def stratified_split(d, eval_fraction, seed):
    """Split ``d`` into (train, eval) with per-class eval share rounded, min 1."""
    plan = stratified_split_plan(d, eval_fraction, seed)
    return d.subset(plan.train_indices), d.subset(plan.eval_indices)


def stratified_kfold(d, k, seed):
    """Return ``k`` (train_indices, eval_indices) pairs whose eval parts partition ``d``.

    Each class is shuffled and dealt round-robin across folds, continuing
    the deal where the previous class stopped, so per-fold class counts
    differ by at most one and fold sizes stay balanced.
    """
    y = _labels_of(d)
    n = y.shape[0]
    if k < 2:
        raise DatasetError("k must be at least 2")
    if k > n:
        raise DatasetError(f"k={k} exceeds n={n}")
    rng = np.random.default_rng(seed)
    fold_of = np.empty(n, dtype=np.int64)
    offset = int(rng.integers(k))
    for c in np.unique(y):
        idx = rng.permutation(np.flatnonzero(y == c))
        fold_of[idx] = (offset + np.arange(idx.size)) % k
        offset = (offset + idx.size) % k
    allidx = np.arange(n)
    return [(allidx[fold_of != f], allidx[fold_of == f]) for f in range(k)]


def align_labels(d, label_names):
    """Re-index ``d``'s labels against a stored label table (e.g. a model's)."""
    pos = {name: i for i, name in enumerate(label_names)}
    unknown = [nm for nm in d.label_names if nm not in pos]
    if unknown:
        raise DatasetError(f"labels {unknown} are not in the model's label table")
    mapping = np.array([pos[nm] for nm in d.label_names], dtype=np.int64)
    return Dataset(d.X, mapping[d.y], len(label_names), tuple(label_names))
