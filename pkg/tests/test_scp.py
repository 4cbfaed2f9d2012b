import cvxpy as cp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from longcam import conic
from longcam.dynamics import EpochState, Units, period, propagate_segment, sensitivities
from longcam.forces import ForceModelConfig, SpacecraftParams
from longcam.risk import MetricKind, RiskMetricSpec
from longcam.scp import (NodeLinearization, ScpConfig, SensitivityConfig, assemble_subproblem,
                         ca_halfspace, gradient_bound, nli_weights, project_onto_ellipsoid,
                         seed_inside_point, sensitivity_active, sensitivity_rows,
                         surface_point, trust_region_rows, validate_plan, variable_count)

import _runs
from _oracles import random_spd

seeds = st.integers(0, 2**32 - 1)


def quad(z, P):
    return float(z @ np.linalg.solve(P, z))


def whitened(P):
    lam, V = np.linalg.eigh(P)
    return lam, V


def projection_by_conic(r, P, dbar2):
    """Ball projection in whitened coordinates solved by the embedded conic solver."""
    lam, V = whitened(P)
    rh = (V.T @ r) / np.sqrt(lam)
    b = conic.ProblemBuilder()
    z = b.var("z", 3)
    rad = b.var("rad", 1, lb=np.sqrt(dbar2), ub=np.sqrt(dbar2))
    e = b.var("e", 3)
    t = b.var("t", 1)
    b.cone(rad[0], z)
    b.eq([(e, np.eye(3)), (z, -np.eye(3))], -rh)
    b.cone(t[0], e)
    b.cost(t, 1.0)
    sol = conic.solve(b.build(), tol=1e-10)
    assert sol.ok
    return V @ (np.sqrt(lam) * sol.x[z])


def projection_by_cvxpy(r, P, dbar2):
    lam, V = whitened(P)
    rh = (V.T @ r) / np.sqrt(lam)
    z = cp.Variable(3)
    cp.Problem(cp.Minimize(cp.norm(z - rh)), [cp.sum_squares(z) <= dbar2]).solve(solver=cp.CLARABEL)
    return V @ (np.sqrt(lam) * z.value)


# ------------------------------------------------------------- projection

def test_projection_trivial():
    np.testing.assert_allclose(project_onto_ellipsoid([2.0, 0, 0], np.eye(3), 1.0), [1.0, 0, 0])


@settings(max_examples=50, deadline=None)
@given(seeds)
def test_projection_identity_covariance_is_radial(seed):
    rng = np.random.default_rng(seed)
    r = rng.normal(size=3) * 5
    dbar2 = float(np.dot(r, r)) * rng.uniform(0.05, 0.95)
    np.testing.assert_allclose(project_onto_ellipsoid(r, np.eye(3), dbar2),
                               np.sqrt(dbar2) * r / np.linalg.norm(r), rtol=1e-12)


def test_projection_anisotropic_example():
    P = np.diag([9.0, 1.0, 1.0])
    r = np.array([0.1, 3.0, 0.0])
    z = project_onto_ellipsoid(r, P, 1.0)
    np.testing.assert_allclose(z, projection_by_conic(r, P, 1.0), atol=1e-6)
    np.testing.assert_allclose(z, projection_by_cvxpy(r, P, 1.0), atol=1e-6)


@settings(max_examples=50, deadline=None)
@given(seeds, st.floats(1.0 + 1e-6, 4.0))
def test_projection_on_surface(seed, out):
    rng = np.random.default_rng(seed)
    P = random_spd(rng)
    dbar2 = rng.uniform(0.5, 30.0)
    w = rng.normal(size=3)
    r = np.linalg.cholesky(P) @ (w / np.linalg.norm(w) * np.sqrt(dbar2) * out)
    z = project_onto_ellipsoid(r, P, dbar2)
    assert quad(z, P) == pytest.approx(dbar2, rel=1e-10)


def test_projection_errors():
    with pytest.raises(ValueError, match="center"):
        project_onto_ellipsoid(np.zeros(3), np.eye(3), 1.0)
    with pytest.raises(ValueError, match="inside"):
        project_onto_ellipsoid([0.5, 0, 0], np.eye(3), 1.0)
    with pytest.raises(ValueError):
        project_onto_ellipsoid([2.0, 0, 0], np.eye(3), 0.0)


# ------------------------------------------------------------------ seed

def test_seed_trivial():
    np.testing.assert_allclose(seed_inside_point([0.5, 0, 0], np.eye(3), 1.0), [1.0, 0, 0])


@settings(max_examples=60, deadline=None)
@given(seeds, st.floats(1e-3, 0.999))
def test_seed_ray_invariance_and_quadric(seed, alpha):
    rng = np.random.default_rng(seed)
    P = random_spd(rng)
    dbar2 = rng.uniform(0.5, 30.0)
    w = rng.normal(size=3)
    r = np.linalg.cholesky(P) @ (w / np.linalg.norm(w) * np.sqrt(dbar2) * rng.uniform(0.05, 0.99))
    s1 = seed_inside_point(r, P, dbar2)
    s2 = seed_inside_point(alpha * r, P, dbar2)
    np.testing.assert_allclose(s1, s2, rtol=1e-12)
    assert quad(s1, P) == pytest.approx(dbar2, rel=1e-12)
    np.testing.assert_allclose(surface_point(r, P, dbar2), s1)


def test_seed_centre_error():
    with pytest.raises(ValueError, match="center of keep-out zone; no ray defined"):
        seed_inside_point(np.zeros(3), np.eye(3), 1.0)


# -------------------------------------------------------------- halfspace

def test_halfspace_trivial():
    n, off = ca_halfspace(np.array([1.0, 0, 0]), np.eye(3))
    np.testing.assert_allclose(n, [2.0, 0, 0])
    assert off == 2.0   # n.r >= 2  <=>  x >= 1


@settings(max_examples=60, deadline=None)
@given(seeds)
def test_halfspace_supports_ellipsoid(seed):
    """Points outside the keep-out zone on the projection ray and the whole surface lie on the feasible side."""
    rng = np.random.default_rng(seed)
    P = random_spd(rng)
    dbar2 = rng.uniform(0.5, 30.0)
    L = np.linalg.cholesky(P)
    w = rng.normal(size=3)
    z = L @ (w / np.linalg.norm(w) * np.sqrt(dbar2))
    n, off = ca_halfspace(z, P)
    assert n @ z == pytest.approx(off)
    for t in rng.uniform(1.0, 5.0, 10):
        assert n @ (t * z) >= off * (1 - 1e-12)
    W = rng.normal(size=(50, 3))
    S = (L @ (W / np.linalg.norm(W, axis=1, keepdims=True)).T).T * np.sqrt(dbar2)
    assert np.all(S @ n <= off * (1 + 1e-12))


# ------------------------------------------------------------- NLI / TR

LEO = EpochState.from_elements(725_840_000.0, 6800.0, 0.001, 51.6, 30.0, 40.0, 10.0)
SC = SpacecraftParams(mass=500.0)
FM = ForceModelConfig(zonal_degree=2)


def test_nli_sign_flip_invariant():
    bd = sensitivities(LEO, np.zeros(3), 95.0, SC, FM, want_second_order=True)
    flipped = type(bd)(bd.A, bd.B, bd.xbar, bd.x_ref, bd.u_ref, -bd.tensor)
    np.testing.assert_array_equal(nli_weights(bd), nli_weights(flipped))


def test_nli_matches_second_difference_oracle():
    """Second derivatives of the flow map by direct double differencing."""
    dt = period(6800.0) / 60
    units = Units.from_sma(6800.0)
    umax = 5e-6
    sz = np.concatenate([units.state_scale, np.full(3, umax)])
    bd = sensitivities(LEO, np.zeros(3), dt, SC, FM, want_second_order=True, units=units,
                       control_scale=umax)
    xi = nli_weights(bd.scaled(units.state_scale, umax))
    assert np.all(xi[:3] > xi[3:6])

    z0 = np.concatenate([LEO.x, np.zeros(3)])
    h = 1e-4

    def f(z):
        zz = z0 + z * sz
        return propagate_segment(EpochState.from_vector(LEO.epoch, zz[:6]), zz[6:], dt, SC, FM,
                                 units).x / units.state_scale

    T = np.zeros((6, 9, 9))
    E = np.eye(9) * h
    f0 = f(np.zeros(9))
    for v in range(9):
        for w in range(v, 9):
            if v == w:
                d2 = (f(E[v]) - 2 * f0 + f(-E[v])) / h**2
            else:
                d2 = (f(E[v] + E[w]) - f(E[v] - E[w]) - f(-E[v] + E[w]) + f(-E[v] - E[w])) / (4 * h**2)
            T[:, v, w] = T[:, w, v] = d2
    J = bd.scaled(units.state_scale, umax).jacobian
    xi_fd = np.sqrt(np.sum(T**2, axis=(0, 1)) / np.sum(J**2))
    np.testing.assert_allclose(xi, xi_fd, rtol=0.1)


def test_trust_region_rows():
    idx, lo, hi = trust_region_rows(np.zeros(9), np.zeros(9), 1e-3)
    assert idx.size == 0
    xi = np.zeros(9)
    xi[4] = 2.0
    idx, lo, hi = trust_region_rows(xi, np.full(9, 1.0), 1e-3)
    assert idx.tolist() == [4]
    assert lo[0] == pytest.approx(1.0 - 5e-4) and hi[0] == pytest.approx(1.0 + 5e-4)
    with pytest.raises(ValueError):
        trust_region_rows(xi, np.zeros(9), 0.0)


# ------------------------------------------------------------- sensitivity

def test_sensitivity_activation_boundary():
    assert sensitivity_active(1e-6, 1e-6, 0.0)
    assert not sensitivity_active(0.98e-6, 1e-6, 0.01)
    assert sensitivity_active(0.995e-6, 1e-6, 0.01)


def test_gradient_bound_formula():
    m = RiskMetricSpec(MetricKind.IPC, 1e-6, 20.0)
    g = sensitivity_rows(2e-6, m, 0.3, 0.01, 0.0)
    assert g == pytest.approx(2 * 0.3 * 1e-6 / (2e-6 * 0.020))
    assert g == pytest.approx(gradient_bound(0.3, 1e-6, 2e-6, 0.020))
    assert sensitivity_rows(1e-9, m, 0.3, 0.01, 0.0) is None
    miss = RiskMetricSpec(MetricKind.MISS_DISTANCE, 2.0, 20.0)
    assert sensitivity_rows(2e-6, miss, 0.3, 0.01, 0.0) is None
    # explicit delta_r overrides the hard-body radius
    assert sensitivity_rows(2e-6, m, 0.3, 0.01, 40.0) == pytest.approx(g / 2)


def test_sensitivity_config_validation():
    with pytest.raises(ValueError):
        SensitivityConfig(rho=0.0)
    with pytest.raises(ValueError):
        SensitivityConfig(rho=0.1, epsilon=1.5)


# -------------------------------------------------------------- assembly

def ballistic_lin(conj, dbar2=0.0):
    tr = conj.primary_ballistic
    r = tr.states[:, :3] - conj.secondary_states[:, :3]
    out = []
    for i in range(conj.N + 1):
        out.append(NodeLinearization(bundle=tr.bundles[i] if i < conj.N else None, r=r[i],
                                     P=np.eye(3), dbar2=dbar2, dm2=float(r[i] @ r[i]), p_ic=0.0))
    return out


def test_variable_count_matches_assembly():
    conj = _runs.conjunction("leo_base")
    cfg = ScpConfig.from_scenario(conj.spec, conj.dt)
    lin = ballistic_lin(conj)
    b, layout = assemble_subproblem(lin, conj.primary_ballistic.states, np.zeros((conj.N, 3)), cfg)
    assert conj.N == 120
    assert layout.n == b.build().n == variable_count(120) == 6 * 121 + 3 * 120 + 120 + 6 * 120 + 120
    assert variable_count(120, n_ca=5, n_sk=3, n_sens=1, target=True) == 2046 + 5 + 6 + 5 + 12


def test_assembly_rejects_inconsistent_counts():
    conj = _runs.conjunction("leo_base")
    cfg = ScpConfig.from_scenario(conj.spec, conj.dt)
    with pytest.raises(ValueError):
        assemble_subproblem(ballistic_lin(conj)[:-1], conj.primary_ballistic.states,
                            np.zeros((conj.N, 3)), cfg)


def test_zero_risk_subproblem_has_zero_cost():
    conj = _runs.conjunction("zero_threat")
    cfg = ScpConfig.from_scenario(conj.spec, conj.dt)
    b, layout = assemble_subproblem(ballistic_lin(conj), conj.primary_ballistic.states,
                                    np.zeros((conj.N, 3)), cfg)
    sol = conic.solve(b.build())
    assert sol.ok
    # cone heads sit at solver tolerance and carry the 1e4 virtual-control weight
    assert abs(sol.objective) < cfg.kappa_vc * 1e-8 * conj.N
    assert np.max(np.abs(sol.x[layout.blocks["u"]])) < 1e-6


def test_config_validation():
    m = RiskMetricSpec(MetricKind.IPC, 1e-6, 10.0)
    with pytest.raises(ValueError):
        ScpConfig(N=1, dt=10.0, u_max=5e-6, metric=m)
    with pytest.raises(ValueError):
        ScpConfig(N=10, dt=10.0, u_max=0.0, metric=m)
    with pytest.raises(ValueError):
        ScpConfig(N=10, dt=10.0, u_max=5e-6, metric=m, tol_major=0.0)
    with pytest.raises(ValueError):
        ScpConfig(N=10, dt=10.0, u_max=5e-6, metric=m, sk_box=True)
    c = ScpConfig(N=10, dt=10.0, u_max=5e-6, metric=m)
    assert c.L == pytest.approx(5e-4) and c.V == pytest.approx(5e-5)


# ------------------------------------------------------------------ runs

@pytest.mark.slow
def test_zero_threat_single_major_no_dv():
    conj, cfg, plan = _runs.plan("zero_threat")
    assert plan.converged and plan.n_maj == 1
    assert plan.dv_total == 0.0
    assert plan.validation.e_m < 1e-3
    assert plan.validation.valid


@pytest.mark.slow
def test_zero_control_validation_exact():
    conj, cfg, plan = _runs.plan("zero_threat")
    rep = validate_plan(conj, plan, cfg)
    assert rep.e_m == pytest.approx(plan.validation.e_m)
    np.testing.assert_array_equal(rep.states, conj.primary_ballistic.states)


@pytest.mark.slow
@pytest.mark.parametrize("metric", _runs.LEO_METRICS)
def test_plan_invariants(metric):
    conj, cfg, plan = _runs.plan("leo_base", metric)
    un = np.linalg.norm(plan.controls, axis=1) / cfg.u_max
    assert np.all(un <= plan.slack + 1e-6)
    assert np.all(plan.slack <= 1 + 1e-9)
    np.testing.assert_allclose(plan.dv_node, un * cfg.u_max * cfg.dt * 1e6)
    assert plan.vc_sum <= 1e-7
    assert plan.validation.e_m < 1.0


@pytest.mark.slow
def test_miss_distance_plan_is_tangential():
    conj, cfg, plan = _runs.plan("leo_base", "MISS_DISTANCE")
    rtn = plan.dv_rtn()
    k = int(np.argmax(plan.dv_node))
    assert abs(rtn[k, 1]) > abs(rtn[k, 0]) and abs(rtn[k, 1]) > abs(rtn[k, 2])
    assert np.all(plan.validation.metric[1:] >= 2.0 * 0.95)


@pytest.mark.slow
def test_sensitivity_activates_at_single_peak_node():
    conj, cfg, plan = _runs.plan("leo_1orbit", "IPC", rho=0.4)
    active = [i for i, nd in enumerate(plan.lin) if nd.gamma is not None]
    assert len(active) == 1
    base = _runs.plan("leo_1orbit", "IPC")[2]
    assert active[0] == int(np.argmax([nd.p_ic for nd in base.lin]))


@pytest.mark.slow
def test_sensitivity_large_rho_matches_unconstrained():
    _, _, free = _runs.plan("leo_1orbit", "IPC")
    _, _, loose = _runs.plan("leo_1orbit", "IPC", rho=1e6)
    assert loose.dv_total == pytest.approx(free.dv_total, rel=1e-4, abs=1e-3)
