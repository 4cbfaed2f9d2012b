import cvxpy as cp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from longcam import conic
from longcam.conic import ProblemBuilder, Status


def random_socp(seed: int):
    """Feasible, bounded SOCP with equality, inequality, bounds and two cones."""
    rng = np.random.default_rng(seed)
    b = ProblemBuilder()
    x = b.var("x", 6, lb=-5.0, ub=5.0)
    t1 = b.var("t1", 1)
    t2 = b.var("t2", 1)
    x0 = rng.uniform(-1, 1, 6)
    Aeq = rng.normal(size=(2, 6))
    Ain = rng.normal(size=(3, 6))
    b.eq([(x, Aeq)], Aeq @ x0)
    b.le([(x, Ain)], Ain @ x0 + rng.uniform(0.1, 1.0, 3))
    b.cone(t1[0], x[:3])
    b.cone(t2[0], x[3:])
    c = rng.normal(size=6)
    b.cost(x, c)
    w = rng.uniform(1.5, 3.0, 2)
    b.cost(t1, w[0])
    b.cost(t2, w[1])
    return b.build()


def cvxpy_solve(p: conic.ConicProblem):
    x = cp.Variable(p.n)
    cons = []
    if p.A_eq.shape[0]:
        cons.append(p.A_eq.toarray() @ x == p.b_eq)
    if p.A_in.shape[0]:
        cons.append(p.A_in.toarray() @ x <= p.b_in)
    fin = np.isfinite(p.lb)
    if fin.any():
        cons.append(x[np.flatnonzero(fin)] >= p.lb[fin])
    fin = np.isfinite(p.ub)
    if fin.any():
        cons.append(x[np.flatnonzero(fin)] <= p.ub[fin])
    for k in p.cones:
        cons.append(cp.SOC(x[int(k[0])], x[k[1:]]))
    prob = cp.Problem(cp.Minimize(p.c @ x), cons)
    prob.solve(solver=cp.CLARABEL)
    return prob.status, prob.value, x.value


@pytest.mark.parametrize("seed", range(30))
def test_matches_cvxpy_on_random_socps(seed):
    p = random_socp(seed)
    sol = conic.solve(p)
    status, val, _ = cvxpy_solve(p)
    assert status == "optimal"
    assert sol.status is Status.OPTIMAL
    assert sol.objective == pytest.approx(val, rel=1e-6, abs=1e-7)
    eq, viol = p.residuals(sol.x)
    assert eq < 1e-7 and viol < 1e-7


def test_lp_known_optimum():
    b = ProblemBuilder()
    x = b.var("x", 2, lb=0.0)
    b.le([(x, [[1.0, 1.0]])], [4.0])
    b.le([(x, [[1.0, 3.0]])], [6.0])
    b.cost(x, [-3.0, -5.0])
    sol = conic.solve(b.build())
    assert sol.ok
    np.testing.assert_allclose(sol.x, [3.0, 1.0], atol=1e-7)
    assert sol.objective == pytest.approx(-14.0, abs=1e-7)


def test_norm_minimisation():
    # min ||x - a|| over the halfspace 1'x <= 0
    a = np.array([1.0, 2.0, 2.0])
    b = ProblemBuilder()
    x = b.var("x", 3)
    t = b.var("t", 1)
    e = b.var("e", 3)
    b.eq([(e, np.eye(3)), (x, -np.eye(3))], -a)
    b.le([(x, np.ones((1, 3)))], [0.0])
    b.cone(t[0], e)
    b.cost(t, 1.0)
    sol = conic.solve(b.build())
    assert sol.ok
    expect = a - a.sum() / 3.0 * np.ones(3)
    np.testing.assert_allclose(sol.x[x], expect, atol=1e-7)
    assert sol.objective == pytest.approx(a.sum() / np.sqrt(3.0), rel=1e-8)


def test_detects_infeasible():
    b = ProblemBuilder()
    x = b.var("x", 2)
    b.le([(x, [[1.0, 0.0]])], [-1.0])
    b.le([(x, [[-1.0, 0.0]])], [-1.0])
    b.cost(x, [1.0, 1.0])
    assert conic.solve(b.build()).status is Status.INFEASIBLE


def test_detects_infeasible_cone():
    b = ProblemBuilder()
    t = b.var("t", 1, ub=1.0)
    x = b.var("x", 2, lb=1.0)
    b.cone(t[0], x)
    b.cost(t, 1.0)
    assert conic.solve(b.build()).status is Status.INFEASIBLE


def test_detects_unbounded():
    b = ProblemBuilder()
    x = b.var("x", 2, lb=0.0)
    b.le([(x, [[1.0, -1.0]])], [1.0])
    b.cost(x, [-1.0, -1.0])
    assert conic.solve(b.build()).status is Status.UNBOUNDED


def test_dump_load_round_trip(tmp_path):
    p = random_socp(3)
    path = tmp_path / "p.txt"
    conic.dump_problem(p, path)
    q = conic.load_problem(path)
    assert q.n == p.n
    np.testing.assert_array_equal(q.c, p.c)
    np.testing.assert_array_equal(q.A_eq.toarray(), p.A_eq.toarray())
    np.testing.assert_array_equal(q.b_in, p.b_in)
    np.testing.assert_array_equal(q.lb, p.lb)
    assert [k.tolist() for k in q.cones] == [k.tolist() for k in p.cones]
    assert conic.solve(q).objective == pytest.approx(conic.solve(p).objective, rel=1e-12)


def test_rejects_bad_cones():
    with pytest.raises(ValueError):
        conic.ConicProblem(3, np.zeros(3), None, [], None, [], None, None, cones=[[0]])
    with pytest.raises(ValueError):
        conic.ConicProblem(3, np.zeros(3), None, [], None, [], None, None, cones=[[0, 1], [0, 2]])
    with pytest.raises(ValueError):
        conic.ConicProblem(2, np.zeros(2), None, [], None, [], [1.0, 0.0], [0.0, 0.0])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=3, max_size=3),
       st.floats(0.1, 5.0))
def test_ball_projection_property(a, radius):
    """Closest point of a ball: scaled copy of a when outside, a itself otherwise."""
    a = np.asarray(a)
    b = ProblemBuilder()
    x = b.var("x", 3)
    r = b.var("r", 1, lb=radius, ub=radius)
    e = b.var("e", 3)
    t = b.var("t", 1)
    b.cone(r[0], x)
    b.eq([(e, np.eye(3)), (x, -np.eye(3))], -a)
    b.cone(t[0], e)
    b.cost(t, 1.0)
    sol = conic.solve(b.build())
    assert sol.ok
    na = np.linalg.norm(a)
    expect = a if na <= radius else a * radius / na
    np.testing.assert_allclose(sol.x[x], expect, atol=1e-6 * max(1.0, na))
