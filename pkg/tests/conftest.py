import numpy as np
import pytest

from ndcal.data import Dataset
from ndcal.dichotomy import NestedDichotomy, sample_structure
from ndcal.learners import ConstantModel, LogisticModel


def blobs(n_per, num_classes, dim=2, sep=3.0, seed=0):
    """Gaussian clusters around random class means."""
    rng = np.random.default_rng(seed)
    mu = rng.normal(size=(num_classes, dim)) * sep
    y = np.repeat(np.arange(num_classes), n_per)
    X = mu[y] + rng.normal(size=(y.size, dim))
    return Dataset(X, y, num_classes)


def random_nd(m, dim, rng, strategy="random", scale=1.0):
    """A tree over ``m`` classes with random logistic models at its nodes."""
    struct = sample_structure(m, strategy, int(rng.integers(2**31)))
    models = {n.id: LogisticModel(rng.normal(size=dim) * scale, float(rng.normal()))
              for n in struct.internal()}
    return NestedDichotomy(struct, models, {}, dim)


def constant_nd(structure, probs):
    """Tree whose node ``k`` always sends mass ``probs[k]`` to the left."""
    models = {k: ConstantModel(p, 1) for k, p in probs.items()}
    return NestedDichotomy(structure, models, {}, 1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE = []


def record_criterion(number, name, passed, detail=""):
    _ACCEPTANCE.append((number, name, passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, passed, detail in sorted(_ACCEPTANCE):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] {number}. {name}  {detail}")
