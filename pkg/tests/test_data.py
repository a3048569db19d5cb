import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from ndcal.data import (Dataset, DatasetError, ParseError, align_labels, load, parse_csv,
                        parse_libsvm, stratified_kfold, stratified_split, stratified_split_plan,
                        to_libsvm)


def test_csv_header_and_labels():
    d = parse_csv("a,b,label\n1,2,cat\n3,4,dog\n5,6,cat\n")
    assert d.n == 3 and d.num_features == 2 and d.num_classes == 2
    assert d.label_names == ("cat", "dog")
    np.testing.assert_array_equal(d.y, [0, 1, 0])
    np.testing.assert_array_equal(d.X, [[1, 2], [3, 4], [5, 6]])


def test_csv_without_header_keeps_first_row():
    d = parse_csv("1,2,x\n3,4,y\n")
    assert d.n == 2
    assert d.label_names == ("x", "y")


def test_csv_label_column_first():
    d = parse_csv("a,1,2\nb,3,4\n", label_column=0)
    np.testing.assert_array_equal(d.X, [[1, 2], [3, 4]])
    assert d.label_names == ("a", "b")


def test_csv_ragged_row_reports_line():
    with pytest.raises(ParseError, match="line 3"):
        parse_csv("1,2,a\n3,4,b\n5,c\n")


def test_csv_non_numeric_feature():
    with pytest.raises(ParseError, match="line 2, col 2"):
        parse_csv("1,2,a\n3,x,b\n")


def test_csv_empty():
    with pytest.raises(DatasetError, match="empty dataset"):
        parse_csv("\n\n")


def test_libsvm_basic():
    d = parse_libsvm("1 1:0.5 3:2\n-1 2:1 # comment\n\n1 3:-1\n")
    assert d.sparse
    assert d.n == 3 and d.num_features == 3
    assert d.label_names == ("1", "-1")
    np.testing.assert_allclose(d.dense(), [[0.5, 0, 2], [0, 1, 0], [0, 0, -1]])


def test_libsvm_indices_not_increasing():
    with pytest.raises(ParseError, match="line 2.*indices not increasing"):
        parse_libsvm("a 1:1\nb 3:1 2:1\n")


def test_libsvm_malformed_pair():
    with pytest.raises(ParseError) as exc:
        parse_libsvm("a 1:1 2-3\n")
    assert exc.value.line == 1 and exc.value.col == 7
    assert "malformed pair" in str(exc.value)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 8), st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_libsvm_round_trip(n, k, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, k)) * (rng.random((n, k)) < 0.5)
    X[0, k - 1] = 1.5       # fixes num_features at k
    y = rng.integers(0, 3, size=n)
    names = sorted({str(v) for v in y})
    d = Dataset(sp.csr_matrix(X), np.array([names.index(str(v)) for v in y]), len(names),
                tuple(names))
    back = parse_libsvm(to_libsvm(d))
    np.testing.assert_array_equal(back.dense(), X)
    assert [back.label_names[c] for c in back.y] == [d.label_names[c] for c in d.y]


def test_load_by_extension(tmp_path):
    p = tmp_path / "x.svm"
    p.write_text("a 1:1\nb 2:1\n")
    assert load(p).sparse
    q = tmp_path / "x.csv"
    q.write_text("1,a\n2,b\n")
    assert not load(q).sparse


def test_dataset_validation():
    with pytest.raises(DatasetError):
        Dataset(np.zeros((2, 1)), np.array([0, 3]), 2)
    with pytest.raises(DatasetError, match="empty"):
        Dataset(np.zeros((0, 1)), np.array([], dtype=int), 2)


def test_stratified_split_counts():
    y = np.repeat([0, 1, 2], [10, 25, 3])
    plan = stratified_split_plan(y, 0.1, seed=1)
    held = np.bincount(y[plan.eval_indices], minlength=3)
    # round-half-up with a floor of one
    np.testing.assert_array_equal(held, [1, 3, 1])
    assert np.intersect1d(plan.train_indices, plan.eval_indices).size == 0
    assert plan.train_indices.size + plan.eval_indices.size == y.size


def test_stratified_split_singleton_class():
    d = Dataset(np.zeros((5, 1)), np.array([0, 0, 0, 0, 1]), 2, ("a", "rare"))
    with pytest.raises(DatasetError, match="'rare'"):
        stratified_split(d, 0.1, 0)


def test_stratified_split_deterministic():
    y = np.repeat([0, 1], 50)
    a = stratified_split_plan(y, 0.2, 7)
    b = stratified_split_plan(y, 0.2, 7)
    np.testing.assert_array_equal(a.eval_indices, b.eval_indices)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(1, 30), min_size=1, max_size=5), st.integers(2, 10),
       st.integers(0, 1000))
def test_kfold_partitions_and_balance(sizes, k, seed):
    y = np.repeat(np.arange(len(sizes)), sizes)
    if k > y.size:
        with pytest.raises(DatasetError):
            stratified_kfold(y, k, seed)
        return
    folds = stratified_kfold(y, k, seed)
    evals = np.concatenate([ev for _, ev in folds])
    np.testing.assert_array_equal(np.sort(evals), np.arange(y.size))
    for tr, ev in folds:
        assert np.intersect1d(tr, ev).size == 0
        assert tr.size + ev.size == y.size
    per = np.array([np.bincount(y[ev], minlength=len(sizes)) for _, ev in folds])
    assert (per.max(axis=0) - per.min(axis=0)).max() <= 1
    fold_sizes = [ev.size for _, ev in folds]
    assert max(fold_sizes) - min(fold_sizes) <= 1


def test_align_labels():
    d = parse_csv("1,b\n2,a\n")
    a = align_labels(d, ("a", "b", "c"))
    np.testing.assert_array_equal(a.y, [1, 0])
    assert a.num_classes == 3
    with pytest.raises(DatasetError):
        align_labels(d, ("a",))
