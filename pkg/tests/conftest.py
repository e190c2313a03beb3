import numpy as np
import pytest

from fedpoison.data import make_synthetic, split_per_user
from fedpoison.estimator import FederatedNCF
from fedpoison.model import GlobalParams

from oracles import ref_preacts

# learning rate for the 200-user toy benchmark; see README "Toy benchmark"
TOY_LR = 0.005

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line, then assert. ``criterion.skip`` records a SKIP."""

    def record(number, passed, detail):
        ACCEPTANCE_LINES.append(f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {detail}")
        assert passed, detail

    def skip(number, reason):
        ACCEPTANCE_LINES.append(f"[SKIP] criterion {number}: {reason}")
        pytest.skip(reason)

    record.skip = skip
    return record


def random_params(rng, embed_dim, layer_dims, num_items, scale=0.7):
    Q = rng.normal(0, scale, size=(num_items, embed_dim))
    W, b = [], []
    width = 2 * embed_dim
    for out in layer_dims:
        W.append(rng.normal(0, scale, size=(width, out)))
        b.append(rng.normal(0, scale, size=out))
        width = out
    h = rng.normal(0, scale, size=width)
    return GlobalParams(Q, h, W, b)


def away_from_kinks(params, P, items, margin=1e-4):
    """True when no pre-activation of any (p, item) row is within ``margin`` of 0."""
    Ws = [w.tolist() for w in params.W]
    bs = [c.tolist() for c in params.b]
    for p, i in zip(np.atleast_2d(P), items):
        if min(abs(z) for z in ref_preacts(p, params.Q[i], Ws, bs)) < margin:
            return False
    return True


def param_shapes(params):
    return [a.shape for a in params.arrays()]


def flatten_params(params):
    return np.concatenate([a.ravel() for a in params.arrays()])


def flatten_update(update, params):
    parts = [update.dense_items(params.num_items), update.h]
    for w, c in zip(update.W, update.b):
        parts += [w, c]
    return np.concatenate([a.ravel() for a in parts])


@pytest.fixture(scope="session")
def toy_data():
    return split_per_user(make_synthetic(seed=0), seed=0)


@pytest.fixture(scope="session")
def trained_toy(toy_data):
    """No-attack model trained 10 epochs on the toy data."""
    return FederatedNCF(epochs=10, learning_rate=TOY_LR, random_state=0).fit(toy_data)
