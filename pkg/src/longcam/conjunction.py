"""Turn a ScenarioSpec into node grids, covariances and ballistic metrics."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp

from . import risk
from .dynamics import EpochState, OrbitalModel, Trajectory, Units, coast_grid, period
from .frames import rtn_matrix
from .risk import MetricKind, RiskMetricSpec
from .scenario import ScenarioSpec


@dataclass
class Conjunction:
    spec: ScenarioSpec
    N: int
    dt: float                       # s
    T: float                        # primary period, s
    k_tca: int
    epochs: np.ndarray              # (N+1,)
    units: Units
    x0: EpochState                  # primary at node 0
    primary_ballistic: Trajectory
    secondary_states: np.ndarray    # (N+1, 6)
    Ps: np.ndarray                  # (N+1, 3, 3) secondary position covariance, km^2
    C0: np.ndarray                  # primary 6x6 covariance at node 0

    @property
    def t_over_T(self) -> np.ndarray:
        return (np.arange(self.N + 1) - self.k_tca) / self.spec.nodes_per_orbit

    def primary_covariances(self, stms) -> np.ndarray:
        C = risk.propagate_covariance(self.C0, stms)
        return np.array([risk.position_covariance(c) for c in C])


def _state_at(epoch, obj) -> EpochState:
    return EpochState.from_elements(epoch, *obj.elements)


def _shift(state: EpochState, dt: float, obj, forces, units) -> EpochState:
    """Ballistic propagation by dt (may be negative) in one integration."""
    if dt == 0:
        return state
    model = OrbitalModel(obj.params, forces)
    S = units.state_scale

    def fun(tau, y):
        t = state.epoch + tau * units.tu
        xc = y.reshape(1, 6)
        return (model.rhs(np.array([t]), xc * S, np.zeros((1, 3)), model.context(np.array([t])))
                / S * units.tu).ravel()
    sol = solve_ivp(fun, (0.0, dt / units.tu), state.x / S, method="DOP853", rtol=1e-12, atol=1e-13)
    if not sol.success:
        raise RuntimeError(sol.message)
    return EpochState.from_vector(state.epoch + dt, sol.y[:, -1] * S)


def build(spec: ScenarioSpec) -> Conjunction:
    a_p = spec.primary.elements[0]
    T = period(a_p)
    npo = spec.nodes_per_orbit
    dt = T / npo
    N = spec.N
    k_tca = spec.orbits_before * npo
    units = Units.from_sma(a_p)
    t0 = spec.tca_epoch - k_tca * dt
    fm = spec.forces
    p_tca = _state_at(spec.tca_epoch, spec.primary)
    s_tca = _state_at(spec.tca_epoch, spec.secondary)
    x0 = _shift(p_tca, t0 - spec.tca_epoch, spec.primary, fm, units)
    s0 = _shift(s_tca, t0 - spec.tca_epoch, spec.secondary, fm, units)
    prim = coast_grid(x0, N, dt, spec.primary.params, fm, units=units)
    sec = coast_grid(s0, N, dt, spec.secondary.params, fm, units=units)

    def cov0(obj, traj, state_at_cov):
        R = rtn_matrix(state_at_cov.position, state_at_cov.velocity)
        C = risk.rtn_covariance_to_eci(obj.cov_rtn_km, R)
        if spec.covariance_at == "start" or k_tca == 0:
            return C
        Phi = np.eye(6)
        for b in traj.bundles[:k_tca]:
            Phi = b.A @ Phi
        Pinv = np.linalg.inv(Phi)
        C0 = Pinv @ C @ Pinv.T
        return 0.5 * (C0 + C0.T)

    at_p = p_tca if spec.covariance_at == "tca" else x0
    at_s = s_tca if spec.covariance_at == "tca" else s0
    Cp0 = cov0(spec.primary, prim, at_p)
    Cs0 = cov0(spec.secondary, sec, at_s)
    Cs = risk.propagate_covariance(Cs0, [b.A for b in sec.bundles])
    Ps = np.array([risk.position_covariance(c) for c in Cs])
    return Conjunction(spec, N, dt, T, k_tca, prim.epochs, units, x0, prim, sec.states, Ps, Cp0)


@dataclass
class NodeMetrics:
    r_rel: np.ndarray          # (N+1, 3) km
    P: np.ndarray              # (N+1, 3, 3) combined, km^2
    d_m2: np.ndarray           # covariance-based SMD
    ipc: np.ndarray
    max_ipc: np.ndarray
    d_miss: np.ndarray         # km

    def value(self, kind: MetricKind) -> np.ndarray:
        return {MetricKind.IPC: self.ipc, MetricKind.MAX_IPC: self.max_ipc,
                MetricKind.MISS_DISTANCE: self.d_miss}[MetricKind(kind)]

    def smd_of(self, kind: MetricKind) -> np.ndarray:
        return self.d_miss**2 if MetricKind(kind) is MetricKind.MISS_DISTANCE else self.d_m2


def node_metrics(conj: Conjunction, primary_states, stms, identity_cov: bool = False) -> NodeMetrics:
    Pp = conj.primary_covariances(stms)
    r = primary_states[:, :3] - conj.secondary_states[:, :3]
    P = Pp + conj.Ps
    if identity_cov:
        P = np.broadcast_to(np.eye(3), P.shape).copy()
    R = conj.spec.combined_hbr
    n = len(r)
    d2 = np.empty(n)
    pic = np.empty(n)
    pm = np.empty(n)
    for i in range(n):
        d = risk.RelPosDistribution(r[i], P[i], node=i)
        d2[i] = risk.smd(d)
        pic[i] = risk.ipc(d, R)
        pm[i] = risk.max_ipc(d, R) if d2[i] > 0 else np.inf
    return NodeMetrics(r, P, d2, pic, pm, np.linalg.norm(r, axis=1))


def ballistic_metrics(conj: Conjunction, identity_cov: bool = False) -> NodeMetrics:
    tr = conj.primary_ballistic
    return node_metrics(conj, tr.states, [b.A for b in tr.bundles], identity_cov)


def limits(metric: RiskMetricSpec, P: np.ndarray) -> np.ndarray:
    """Per-node d_bar^2 (0 where the threshold can never be exceeded)."""
    if metric.kind is MetricKind.MISS_DISTANCE:
        return np.full(len(P), metric.threshold**2)
    return np.array([risk.ipc_limit_or_zero(metric, Pi) for Pi in P])
