import functools
import itertools

import numpy as np
import pytest


@functools.lru_cache(maxsize=None)
def _permutahedron_problem(n):
    import cvxpy as cp

    z = cp.Parameter(n)
    x = cp.Variable(n)
    w = np.arange(1, n + 1, dtype=float)
    # every subset S may hold at most the |S| largest entries of w
    cons = [cp.sum(x) == w.sum()]
    for size in range(1, n):
        cap = w[-size:].sum()
        cons += [cp.sum(x[list(s)]) <= cap for s in itertools.combinations(range(n), size)]
    return cp.Problem(cp.Minimize(cp.sum_squares(x - z)), cons), z, x


def qp_permutahedron_projection(z):
    """Projection onto the permutahedron of (1..n) by a generic QP solver."""
    import cvxpy as cp

    z = np.asarray(z, dtype=float)
    if z.size == 1:
        return np.ones(1)
    prob, param, x = _permutahedron_problem(z.size)
    param.value = z
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12)
    return np.asarray(x.value)


def pairwise_rank(scores):
    """Ascending rank by counting: smaller scores, plus equal scores earlier in the list."""
    s = list(scores)
    return np.array([1 + sum(b < a for b in s) + sum(s[j] == a for j in range(i))
                     for i, a in enumerate(s)])


def fd_grad(fn, x, h=1e-6):
    """Central differences, written out independently of the package harness."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[idx] = h
        g[idx] = (fn(x + e) - fn(x - e)) / (2 * h)
    return g


def rel_err(a, b):
    a, b = np.ravel(a), np.ravel(b)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12))


def random_simplex(rng, n, k, alpha=1.0):
    return rng.dirichlet(np.full(k, alpha), size=n)


def distinct_scores(rng, n, gap):
    """``n`` random scores whose pairwise gaps are at least ``gap``."""
    base = np.sort(rng.uniform(0, 1, size=n)) + gap * np.arange(n)
    return rng.permutation(base)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
