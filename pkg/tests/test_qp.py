"""QP solver tests: examples, the active-set oracle, relaxation, statuses."""

import numpy as np
import pytest

from oscbf.checks import active_set_oracle
from oscbf.qp import (
    DEFAULT_SLACK_PENALTY,
    INFEASIBLE,
    OPTIMAL,
    LinearConstraintRow,
    QpProblem,
    QpSolver,
    relax,
    solve,
)


def _problem(P, q, G, h, slackable, rho=1.0, **kw):
    return QpProblem(P=np.asarray(P, float), q=np.asarray(q, float),
                     G=np.asarray(G, float), h=np.asarray(h, float),
                     slackable=np.asarray(slackable, bool), rho=rho, **kw)


def test_projection_onto_halfspace():
    # min ||u - (-1)||^2 s.t. u >= 0  ->  u* = 0
    p = _problem([[2.0]], [2.0], [[1.0]], [0.0], [False])
    s = solve(p)
    assert s.status == OPTIMAL
    np.testing.assert_allclose(s.x, [0.0], atol=1e-9)


def test_unconstrained_identity():
    u_nom = np.array([0.3, -1.2, 0.7])
    p = _problem(np.eye(3), -u_nom, np.zeros((0, 3)), np.zeros(0), np.zeros(0, bool))
    s = solve(p)
    assert s.status == OPTIMAL
    np.testing.assert_allclose(s.x, u_nom, atol=1e-12)


def test_oracle_batch(rng):
    import math

    for _ in range(100):
        d = int(rng.integers(2, 11))
        m = int(rng.integers(1, 31))
        while sum(math.comb(m, k) for k in range(0, min(m, d) + 1)) > 20000:
            m -= 1
        L = rng.standard_normal((d, d))
        P = L @ L.T + 0.1 * np.eye(d)
        q = rng.standard_normal(d)
        x0 = rng.standard_normal(d)
        G = rng.standard_normal((m, d))
        h = G @ x0 - rng.uniform(0, 1, m)
        sol = solve(_problem(P, q, G, h, np.zeros(m, bool)))
        xo = active_set_oracle(P, q, G, h)
        assert sol.status == OPTIMAL
        assert np.max(np.abs(sol.x - xo)) < 1e-5
        assert sol.kkt_residual < 1e-6


def test_conflicting_slackable_rows():
    # u >= 1 and -u >= 0 cannot both hold; the cheaper violation is bought
    p = _problem([[2.0]], [0.0], [[1.0], [-1.0]], [1.0, 0.0], [True, True], rho=1e6)
    s = solve(p)
    assert s.status == OPTIMAL
    np.testing.assert_allclose(s.x, [0.0], atol=1e-6)
    assert s.t[0] > 0.9 and s.t[1] < 1e-6  # violation on exactly one row


def test_satisfiable_slack_rows_cost_nothing(rng):
    d, m = 4, 8
    L = rng.standard_normal((d, d))
    P = L @ L.T + 0.5 * np.eye(d)
    q = rng.standard_normal(d)
    G = rng.standard_normal((m, d))
    h = G @ rng.standard_normal(d) - rng.uniform(0.1, 1.0, m)
    slack = solve(_problem(P, q, G, h, np.ones(m, bool), rho=1e6))
    hard = solve(_problem(P, q, G, h, np.zeros(m, bool)))
    assert np.max(slack.t) < 1e-9
    assert np.max(np.abs(slack.x - hard.x)) < 1e-6


def test_relax_explicit_equivalence(rng):
    d, m = 4, 8
    L = rng.standard_normal((d, d))
    P = L @ L.T + 0.5 * np.eye(d)
    q = rng.standard_normal(d)
    G = rng.standard_normal((m, d))
    h = G @ rng.standard_normal(d) - rng.uniform(-0.2, 0.5, m)
    sl = np.array([True] * 5 + [False] * 3)
    prob = _problem(P, q, G, h, sl, rho=1e4)
    implicit = solve(prob)
    explicit = solve(relax(prob))
    assert implicit.status == OPTIMAL and explicit.status == OPTIMAL
    assert np.max(np.abs(implicit.x - explicit.x[:d])) < 1e-6
    assert np.max(np.abs(implicit.t - explicit.x[d:])) < 1e-6


def test_relax_requires_slackable_rows():
    p = _problem(np.eye(1), [0.0], [[1.0]], [0.0], [False])
    with pytest.raises(ValueError):
        relax(p)


def test_default_rho_handles_conflict_tightly():
    # at the default penalty, a satisfiable system shows < 1e-4 slack
    p = _problem([[2.0]], [-2.0], [[1.0], [-1.0]], [0.5, -2.0], [True, True],
                 rho=DEFAULT_SLACK_PENALTY)
    s = solve(p)
    assert s.status == OPTIMAL
    assert np.max(s.t) < 1e-4


def test_hard_conflict_is_infeasible():
    p = _problem([[2.0]], [0.0], [[1.0], [-1.0]], [1.0, 0.0], [False, False])
    assert solve(p).status == INFEASIBLE


def test_determinism(rng):
    d, m = 6, 20
    L = rng.standard_normal((d, d))
    P = L @ L.T + 0.2 * np.eye(d)
    q = rng.standard_normal(d)
    G = rng.standard_normal((m, d))
    h = G @ rng.standard_normal(d) - rng.uniform(0, 1, m)
    prob = _problem(P, q, G, h, np.array([True] * 15 + [False] * 5), rho=1e6)
    a, b = solve(prob), solve(prob)
    assert np.array_equal(a.x, b.x)
    assert np.array_equal(a.t, b.t)
    assert a.iterations == b.iterations


def test_warm_start_changes_iterations_not_solution(rng):
    d, m = 5, 14
    L = rng.standard_normal((d, d))
    P = L @ L.T + 0.2 * np.eye(d)
    q = rng.standard_normal(d)
    G = rng.standard_normal((m, d))
    h = G @ rng.standard_normal(d) - rng.uniform(0, 1, m)
    prob = _problem(P, q, G, h, np.ones(m, bool), rho=1e6)
    cold = solve(prob)
    warm = solve(prob, warm_start=cold)
    assert np.max(np.abs(warm.x - cold.x)) < 1e-6
    assert warm.iterations <= cold.iterations


def test_optimal_beats_random_feasible_points(rng):
    d, m = 4, 10
    L = rng.standard_normal((d, d))
    P = L @ L.T + 0.3 * np.eye(d)
    q = rng.standard_normal(d)
    x0 = rng.standard_normal(d)
    G = rng.standard_normal((m, d))
    h = G @ x0 - rng.uniform(0.2, 1, m)
    sol = solve(_problem(P, q, G, h, np.zeros(m, bool)))

    def obj(x):
        return 0.5 * x @ P @ x + q @ x

    best = obj(sol.x)
    found = 0
    while found < 1000:
        x = x0 + rng.standard_normal(d) * 2.0
        if np.min(G @ x - h) >= 0:
            found += 1
            assert obj(x) >= best - 1e-9


def test_qpsolver_instance_warm_starts(rng):
    d, m = 4, 8
    L = rng.standard_normal((d, d))
    P = L @ L.T + 0.3 * np.eye(d)
    q = rng.standard_normal(d)
    G = rng.standard_normal((m, d))
    h = G @ rng.standard_normal(d) - rng.uniform(0, 1, m)
    prob = _problem(P, q, G, h, np.ones(m, bool), rho=1e6)
    solver = QpSolver()
    first = solver.solve(prob)
    second = solver.solve(prob)
    assert second.iterations <= first.iterations
    assert np.max(np.abs(second.x - first.x)) < 1e-6


def test_zero_rows_rejected_without_flag():
    with pytest.raises(ValueError):
        _problem(np.eye(2), [0, 0], [[0.0, 0.0]], [0.0], [True])


def test_row_constructor():
    rows = [LinearConstraintRow(a=[1.0, 0.0], b=0.5, slackable=True, source="r0"),
            LinearConstraintRow(a=[0.0, 1.0], b=-1.0, slackable=False, source="r1")]
    p = QpProblem.from_rows(np.eye(2), np.zeros(2), rows)
    assert p.sources == ("r0", "r1")
    s = solve(p)
    assert s.status == OPTIMAL and s.x[0] >= 0.5 - 1e-9
