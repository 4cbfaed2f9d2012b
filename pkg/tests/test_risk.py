import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from longcam import risk
from longcam.risk import MetricKind, RelPosDistribution, RiskMetricSpec

from _oracles import ipc_quadrature, max_ipc_scan, mean_at_smd, random_spd

seeds = st.integers(0, 2**32 - 1)


@settings(max_examples=60, deadline=None)
@given(seeds)
def test_smd_is_whitened_norm(seed):
    rng = np.random.default_rng(seed)
    P = random_spd(rng)
    dm = rng.uniform(0.0, 6.0)
    mu = mean_at_smd(rng, P, dm)
    assert risk.smd(RelPosDistribution(mu, P)) == pytest.approx(dm**2, rel=1e-10, abs=1e-14)


@settings(max_examples=60, deadline=None)
@given(seeds)
def test_smd_gradient_central_difference(seed):
    rng = np.random.default_rng(seed)
    P = random_spd(rng)
    mu = mean_at_smd(rng, P, rng.uniform(0.5, 5.0))
    g = risk.smd_gradient(RelPosDistribution(mu, P))
    h = 1e-3 * np.sqrt(np.linalg.eigvalsh(P).min())
    fd = np.array([(risk.smd(RelPosDistribution(mu + h * e, P))
                    - risk.smd(RelPosDistribution(mu - h * e, P))) / (2 * h) for e in np.eye(3)])
    assert np.linalg.norm(fd - g) <= 1e-8 * np.linalg.norm(g)


@settings(max_examples=50, deadline=None)
@given(seeds)
def test_ipc_monotone_in_distance(seed):
    rng = np.random.default_rng(seed)
    P = random_spd(rng)
    mu = mean_at_smd(rng, P, 1.0)
    vals = [risk.ipc(RelPosDistribution(s * mu, P), 10.0) for s in (0.5, 1.0, 2.0, 4.0)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


@settings(max_examples=50, deadline=None)
@given(seeds)
def test_max_ipc_bounds_ipc(seed):
    rng = np.random.default_rng(seed)
    P = random_spd(rng)
    mu = mean_at_smd(rng, P, rng.uniform(0.2, 6.0))
    d = RelPosDistribution(mu, P)
    assert risk.max_ipc(d, 20.0) >= risk.ipc(d, 20.0) * (1 - 1e-12)


@settings(max_examples=50, deadline=None)
@given(seeds, st.sampled_from([MetricKind.IPC, MetricKind.MAX_IPC]))
def test_limit_round_trip(seed, kind):
    rng = np.random.default_rng(seed)
    P = random_spd(rng)
    dm2 = rng.uniform(0.5, 40.0)
    mu = mean_at_smd(rng, P, np.sqrt(dm2))
    R = 1e3 * 0.1 * np.sqrt(np.linalg.eigvalsh(P).min())
    d = RelPosDistribution(mu, P)
    val = risk.ipc(d, R) if kind is MetricKind.IPC else risk.max_ipc(d, R)
    lim = risk.smd_limit(RiskMetricSpec(kind, val, R), P)
    assert lim == pytest.approx(dm2, rel=1e-12)


def test_ipc_matches_quadrature_spot():
    rng = np.random.default_rng(0)
    P = random_spd(rng, 0.2, 1.0)
    mu = mean_at_smd(rng, P, 1.5)
    R_m = 1e3 * 0.05 * np.sqrt(np.linalg.eigvalsh(P).min())
    ref = ipc_quadrature(mu, P, R_m * 1e-3)
    assert risk.ipc(RelPosDistribution(mu, P), R_m) == pytest.approx(ref, rel=5e-3)


def test_max_ipc_matches_scan_spot():
    rng = np.random.default_rng(1)
    P = random_spd(rng)
    mu = mean_at_smd(rng, P, 2.0)
    assert risk.max_ipc(RelPosDistribution(mu, P), 15.0) == pytest.approx(
        max_ipc_scan(mu, P, 15.0), rel=1e-6)


def test_ipc_limit_unattainable():
    P = np.eye(3) * 1e-6
    m = RiskMetricSpec(MetricKind.IPC, 0.9, 10.0)
    assert risk.ipc_limit_or_zero(m, P * 1e6) == 0.0 or risk.ipc_limit_or_zero(m, P * 1e6) > 0
    # a tiny covariance against a large sphere: peak IPC far above the threshold
    m = RiskMetricSpec(MetricKind.IPC, 1e-6, 1000.0)
    big = np.eye(3) * 1e6
    with pytest.raises(risk.LimitUnattainable):
        risk.smd_limit(m, big)
    assert risk.ipc_limit_or_zero(m, big) == 0.0


def test_miss_distance_limit_is_threshold_squared():
    m = RiskMetricSpec(MetricKind.MISS_DISTANCE, 2.0, 10.0)
    assert risk.smd_limit(m, np.eye(3)) == 4.0


def test_max_ipc_undefined_at_centre():
    with pytest.raises(ValueError):
        risk.max_ipc(RelPosDistribution(np.zeros(3), np.eye(3)), 10.0)


def test_singular_covariance_rejected():
    P = np.diag([1.0, 1.0, 1e-14])
    with pytest.raises(risk.SingularCovariance):
        risk.smd(RelPosDistribution(np.ones(3), P, node=7))
    with pytest.raises(risk.SingularCovariance, match="node 7"):
        risk.smd(RelPosDistribution(np.ones(3), np.diag([1.0, -1.0, 1.0]), node=7))


def test_metric_spec_validation():
    with pytest.raises(ValueError):
        RiskMetricSpec(MetricKind.IPC, 1.5, 10.0)
    with pytest.raises(ValueError):
        RiskMetricSpec(MetricKind.MISS_DISTANCE, 0.0, 10.0)
    with pytest.raises(ValueError):
        RiskMetricSpec("IPC", 1e-6, -1.0)
    assert RiskMetricSpec("MAX_IPC", 1e-4, 10.0).kind is MetricKind.MAX_IPC


def test_covariance_propagation_symmetric_and_consistent():
    rng = np.random.default_rng(4)
    C0 = np.eye(6) * 1e-4
    A = [np.eye(6) + 0.1 * rng.normal(size=(6, 6)) for _ in range(5)]
    out = risk.propagate_covariance(C0, A)
    assert len(out) == 6
    Phi = np.eye(6)
    for a in A:
        Phi = a @ Phi
    np.testing.assert_allclose(out[-1], Phi @ C0 @ Phi.T, rtol=1e-10, atol=1e-16)
    for C in out:
        np.testing.assert_array_equal(C, C.T)


def test_state_covariance_checks():
    with pytest.raises(ValueError):
        risk.StateCovariance(np.eye(5))
    bad = np.eye(6)
    bad[0, 1] = 1.0
    with pytest.raises(ValueError):
        risk.StateCovariance(bad)
    with pytest.raises(ValueError):
        risk.StateCovariance(-np.eye(6))


def test_rtn_rotation_preserves_trace():
    rng = np.random.default_rng(2)
    Q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    C = np.diag(rng.uniform(1, 2, 6))
    out = risk.rtn_covariance_to_eci(C, Q)
    assert np.trace(out) == pytest.approx(np.trace(C))
    np.testing.assert_allclose(out[:3, :3], Q @ C[:3, :3] @ Q.T)


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_planar_closed_form_ratio(seed):
    rng = np.random.default_rng(seed)
    P = random_spd(rng)
    dm = rng.uniform(0.5, 8.0)
    d = RelPosDistribution(mean_at_smd(rng, P, dm), P)
    ratio = risk.max_ipc_planar(d, 10.0) / risk.max_ipc(d, 10.0)
    assert ratio == pytest.approx(2.0 * dm * np.sqrt(np.e) / 3.0**1.5, rel=1e-9)


def test_max_ipc_envelops_ipc_on_leo_fixture():
    from longcam import ballistic_metrics
    from _runs import conjunction
    m = ballistic_metrics(conjunction("leo_base"))
    assert np.all(m.max_ipc >= m.ipc * (1 - 1e-12))
