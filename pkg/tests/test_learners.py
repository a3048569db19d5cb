import numpy as np
import pytest
import scipy.sparse as sp
from scipy.special import expit

from ndcal.learners import (SCORE_CLAMP, BoostedTreesModel, ConstantModel, LearnerConfig,
                            LearnerError, LogisticModel, base_rate_entropy, binary_nll,
                            fit_binary, logistic_objective, model_from_dict,
                            predict_binary_proba, predict_binary_score)


def compass_search(f, x0, step=1.0, tol=1e-9):
    """Gradient-free coordinate search: try +-step on each axis, halve when stuck."""
    x = np.array(x0, dtype=float)
    fx = f(x)
    while step > tol:
        moved = False
        for i in range(x.size):
            for s in (step, -step):
                z = x.copy()
                z[i] += s
                fz = f(z)
                if fz < fx:
                    x, fx, moved = z, fz, True
                    break
        if not moved:
            step /= 2
    return x, fx


def test_logistic_matches_gradient_free_minimiser():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(20, 2))
    t = (X[:, 0] - 0.5 * X[:, 1] + rng.normal(size=20) > 0).astype(float)
    model = fit_binary("logistic", X, t, LearnerConfig("logistic", tol=1e-9))
    obj = logistic_objective(X, t, 1.0)
    _, f_oracle = compass_search(lambda th: obj(th)[0], np.zeros(3))
    f_ours = obj(np.append(model.weights, model.bias))[0]
    assert abs(f_ours - f_oracle) < 1e-4


def test_logistic_history_non_increasing_and_beats_base_rate():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(200, 5))
    t = (X @ rng.normal(size=5) + rng.normal(size=200) > 0).astype(float)
    m = fit_binary("logistic", X, t)
    h = np.array(m.history)
    assert np.all(np.diff(h) <= 0)
    assert np.mean(binary_nll(m.proba(X), t)) <= base_rate_entropy(t)


def test_logistic_separable_data_is_confident():
    X = np.array([[-2.0], [-1.0], [1.0], [2.0]])
    t = np.array([0, 0, 1, 1.0])
    m = fit_binary("logistic", X, t)
    p = m.proba(X)
    assert np.all(p[:2] < 0.5) and np.all(p[2:] > 0.5)


def test_single_meta_class_is_laplace_constant():
    m = fit_binary("logistic", np.ones((3, 2)), np.ones(3))
    assert isinstance(m, ConstantModel)
    assert m.proba(np.zeros((1, 2)))[0] == pytest.approx(4 / 5)


def test_probability_is_sigmoid_of_score():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(50, 3))
    t = (X[:, 0] > 0).astype(float)
    for kind in ("logistic", "gnb", "boosted"):
        m = fit_binary(kind, X, t)
        x = X[4]
        assert predict_binary_proba(m, x) == pytest.approx(expit(predict_binary_score(m, x)),
                                                           abs=1e-12)


def test_gnb_symmetric_data_scores_zero():
    X = np.array([[-1.0, 0.0], [-2.0, 1.0], [1.0, 0.0], [2.0, 1.0]])
    t = np.array([0, 0, 1, 1.0])
    m = fit_binary("gnb", X, t)
    # mirror point of the two class clusters on the first axis
    assert m.scores(np.array([[0.0, 0.5]]))[0] == pytest.approx(0.0, abs=1e-9)


@pytest.mark.parametrize("kind", ["gnb", "mnb"])
def test_nb_invariant_to_duplicating_data(kind):
    rng = np.random.default_rng(2)
    X = rng.poisson(2.0, size=(40, 4)).astype(float)
    t = (rng.random(40) < 0.5).astype(float)
    a = fit_binary(kind, X, t)
    b = fit_binary(kind, np.vstack([X, X]), np.concatenate([t, t]))
    if kind == "mnb":
        # Laplace alpha stays fixed, so only priors are strictly invariant
        np.testing.assert_allclose(a.log_priors, b.log_priors)
    else:
        np.testing.assert_allclose(a.scores(X), b.scores(X), atol=1e-9)


def test_mnb_rejects_negative_and_accepts_sparse():
    with pytest.raises(LearnerError):
        fit_binary("mnb", np.array([[-1.0], [1.0]]), np.array([0, 1.0]))
    X = sp.csr_matrix(np.array([[1.0, 0], [0, 2.0], [3.0, 0], [0, 1.0]]))
    m = fit_binary("mnb", X, np.array([1, 0, 1, 0.0]))
    assert m.proba(X)[0] > 0.5


def test_boosted_trees_respect_depth_and_rounds():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(300, 3))
    t = ((X[:, 0] * X[:, 1]) > 0).astype(float)
    m = fit_binary("boosted", X, t, LearnerConfig("boosted", n_rounds=20))
    assert isinstance(m, BoostedTreesModel)
    assert 1 <= len(m.trees) <= 20
    assert all(tree.depth() <= 3 for tree in m.trees)
    assert np.all(m.stage_weights > 0)       # every kept round had error < 1/2
    assert np.mean((m.proba(X) > 0.5) == t) > 0.8


def test_scores_are_clamped():
    m = LogisticModel(np.array([1000.0]), 0.0)
    s = m.scores(np.array([[1.0], [-1.0]]))
    np.testing.assert_array_equal(s, [SCORE_CLAMP, -SCORE_CLAMP])


def test_errors():
    with pytest.raises(LearnerError, match="zero features"):
        fit_binary("logistic", np.zeros((3, 0)), np.array([0, 1, 0]))
    with pytest.raises(LearnerError, match="non-finite"):
        fit_binary("logistic", np.array([[np.nan], [1.0]]), np.array([0, 1]))
    m = LogisticModel(np.ones(2), 0.0)
    with pytest.raises(LearnerError, match="dimension mismatch"):
        m.scores(np.ones((1, 3)))


@pytest.mark.parametrize("kind", ["logistic", "gnb", "mnb", "boosted"])
def test_model_dict_round_trip(kind):
    rng = np.random.default_rng(5)
    X = rng.random((60, 3))
    t = (X[:, 0] + 0.3 * rng.random(60) > 0.6).astype(float)
    m = fit_binary(kind, X, t)
    back = model_from_dict(m.to_dict())
    np.testing.assert_array_equal(back.scores(X), m.scores(X))
