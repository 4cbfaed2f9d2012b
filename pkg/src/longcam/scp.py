"""Sequential convex programming for long-term collision avoidance.

Each major iteration re-linearises the dynamics about the current reference
(multiple shooting) and recomputes the primary covariance history.  Minor
iterations re-project the relative position onto the keep-out ellipsoid and
replace the ellipsoid by its tangent half-space.  The convex subproblem is a
second-order cone program solved by the embedded interior-point solver.

Subproblem variables are deviations from the reference in segment-impulse
units (position L = u_max dt^2, velocity V = u_max dt) and controls
normalised by u_max.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from . import conic, risk
from .conjunction import Conjunction, build, limits
from .dynamics import (EpochState, OrbitalModel, SensitivityBundle, propagate_nodes,
                       rtn_to_eci, sensitivities_batch)
from .risk import MetricKind, RiskMetricSpec
from .scenario import ScenarioSpec
from .sk import SkBox, node_geodetic, return_target, sk_box_rows, solve_sk_target

log = logging.getLogger(__name__)

CONTROL_FLOOR = 1e-6        # normalised control treated as exactly zero
TR_DROP = 1e8               # trust-region half widths above this are vacuous


# ----------------------------------------------------------------- configs

@dataclass(frozen=True)
class SensitivityConfig:
    rho: float
    epsilon: float = 0.01
    delta_r: float = 0.0       # m; 0 means the combined HBR

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        if self.delta_r < 0:
            raise ValueError("delta_r must be >= 0")


@dataclass(frozen=True)
class ScpConfig:
    N: int
    dt: float                          # s
    u_max: float                       # km/s^2
    metric: RiskMetricSpec
    sensitivity: Optional[SensitivityConfig] = None
    trust_nu_bar: float = 1e-3
    tol_major: float = 1e-3
    tol_minor: float = 1e-6            # km
    j_max: int = 10
    k_max: int = 10
    kappa_vc: float = 1e4
    kappa_T: float = 1e2
    vc_tol: float = 1e-7
    sk_box: bool = False
    return_to_orbit: bool = False
    sk_target: bool = False
    box: Optional[SkBox] = None
    sk_days: float = 14.0
    sk_nodes_per_day: int = 4
    sk_margin: float = 0.8
    solver_tol: float = 1e-8

    def __post_init__(self):
        if self.N < 2:
            raise ValueError("need N >= 2")
        if not (self.dt > 0 and self.u_max > 0):
            raise ValueError("dt and u_max must be positive")
        for k in ("trust_nu_bar", "tol_major", "tol_minor", "kappa_vc", "kappa_T", "vc_tol"):
            if not getattr(self, k) > 0:
                raise ValueError(f"{k} must be positive")
        if self.j_max < 1 or self.k_max < 1:
            raise ValueError("iteration limits must be >= 1")
        if (self.sk_box or self.sk_target) and self.box is None:
            raise ValueError("station keeping needs a box")

    @property
    def L(self) -> float:
        return self.u_max * self.dt**2

    @property
    def V(self) -> float:
        return self.u_max * self.dt

    @property
    def state_scale(self) -> np.ndarray:
        return np.array([self.L] * 3 + [self.V] * 3)

    @classmethod
    def from_scenario(cls, spec: ScenarioSpec, dt: float, metric=None, sk: Optional[bool] = None,
                      return_to_orbit: Optional[bool] = None, rho: Optional[float] = None,
                      **overrides) -> "ScpConfig":
        s = spec.solver
        sens = None
        if rho is not None or spec.sensitivity is not None:
            base = spec.sensitivity
            sens = SensitivityConfig(rho=rho if rho is not None else base.rho,
                                     epsilon=base.epsilon if base else 0.01,
                                     delta_r=base.delta_r_m if base else 0.0)
        box_on = spec.sk.box if sk is None else sk
        tgt_on = spec.sk.target if sk is None else sk
        kw = dict(N=spec.N, dt=dt, u_max=spec.u_max, metric=spec.metric(metric), sensitivity=sens,
                  trust_nu_bar=s["trust_nu_bar"], tol_major=s["tol_major"],
                  tol_minor=s["tol_minor_km"], j_max=s["j_max"], k_max=s["k_max"],
                  kappa_vc=s["kappa_vc"], kappa_T=s["kappa_t"], vc_tol=s["vc_tol"],
                  sk_box=box_on, sk_target=tgt_on,
                  return_to_orbit=spec.sk.return_to_orbit if return_to_orbit is None
                  else return_to_orbit,
                  box=SkBox(spec.sk.phi0, spec.sk.delta_phi), sk_days=spec.sk.target_days,
                  sk_nodes_per_day=spec.sk.nodes_per_day, sk_margin=spec.sk.target_margin)
        kw.update(overrides)
        return cls(**kw)


# ------------------------------------------------------- keep-out geometry

def _whiten(P):
    lam, V = np.linalg.eigh(np.asarray(P, float))
    if lam.min() <= 0:
        raise risk.SingularCovariance("covariance not positive definite")
    return lam, V


def project_onto_ellipsoid(r, P, dbar2: float) -> np.ndarray:
    """Closest surface point in whitened coordinates (r must lie outside)."""
    r = np.asarray(r, float)
    if not dbar2 > 0:
        raise ValueError("dbar2 must be positive")
    if not np.any(r):
        raise ValueError("center of keep-out zone; no ray defined")
    lam, V = _whiten(P)
    rh = (V.T @ r) / np.sqrt(lam)
    nrm = np.linalg.norm(rh)
    if nrm < np.sqrt(dbar2) * (1.0 - 1e-9):
        raise ValueError("point inside the keep-out zone; seed it first")
    zh = np.sqrt(dbar2) * rh / nrm
    return V @ (np.sqrt(lam) * zh)


def seed_inside_point(r, P, dbar2: float) -> np.ndarray:
    """Intersection of the ray from the ellipsoid centre through r with its surface."""
    r = np.asarray(r, float)
    if not np.any(r):
        raise ValueError("center of keep-out zone; no ray defined")
    if not dbar2 > 0:
        raise ValueError("dbar2 must be positive")
    d2 = float(r @ np.linalg.solve(P, r))
    return r * np.sqrt(dbar2 / d2)


def ca_halfspace(z, P) -> tuple[np.ndarray, float]:
    """Gradient normal n = 2 P^-1 z and offset n.z; feasible side is n.r >= n.z."""
    n = 2.0 * np.linalg.solve(P, np.asarray(z, float))
    return n, float(n @ z)


def surface_point(r, P, dbar2: float) -> np.ndarray:
    """Seed if inside, then project."""
    r = np.asarray(r, float)
    if float(r @ np.linalg.solve(P, r)) <= dbar2:
        return seed_inside_point(r, P, dbar2)
    return project_onto_ellipsoid(r, P, dbar2)


# ------------------------------------------------------------ trust region

def nli_weights(bundle: SensitivityBundle) -> np.ndarray:
    """Per-variable nonlinearity index of a segment (9 entries: state, control)."""
    if bundle.tensor is None:
        raise ValueError("bundle has no second-order tensor")
    J2 = float(np.sum(bundle.jacobian**2))
    if not J2 > 0:
        raise ValueError("zero reference Jacobian")
    return np.sqrt(np.sum(bundle.tensor**2, axis=(0, 1)) / J2)


def trust_region_rows(xi, ref, nu_bar: float):
    """Component indices and bounds with xi_w |z_w - ref_w| <= nu_bar; xi_w = 0 omitted."""
    if not nu_bar > 0:
        raise ValueError("nu_bar must be positive")
    xi = np.asarray(xi, float)
    ref = np.asarray(ref, float)
    idx = np.flatnonzero(xi > 0)
    hw = nu_bar / xi[idx]
    return idx, ref[idx] - hw, ref[idx] + hw


# ------------------------------------------------------------ sensitivity

def sensitivity_active(p_ic: float, p_bar: float, epsilon: float) -> bool:
    return p_ic >= (1.0 - epsilon) * p_bar


def gradient_bound(rho: float, p_bar: float, p_ic: float, delta_r_km: float) -> float:
    """gamma = 2 rho Pbar / (P_IC dr): caps the first-order P_IC change over dr."""
    return 2.0 * rho * p_bar / (p_ic * delta_r_km)


def sensitivity_rows(p_ic: float, metric: RiskMetricSpec, rho: float, epsilon: float,
                     delta_r_m: float) -> Optional[float]:
    """gamma for an active node, else None."""
    if metric.kind is MetricKind.MISS_DISTANCE or not p_ic > 0:
        return None
    if not sensitivity_active(p_ic, metric.threshold, epsilon):
        return None
    dr = (delta_r_m or metric.combined_hbr) * 1e-3
    return gradient_bound(rho, metric.threshold, p_ic, dr)


# --------------------------------------------------------- linearisation

@dataclass
class NodeLinearization:
    bundle: Optional[SensitivityBundle]     # segment starting at this node (None at N)
    r: np.ndarray                           # reference relative position, km
    P: np.ndarray                           # combined covariance (identity for miss distance)
    dbar2: float
    dm2: float
    p_ic: float
    xi: Optional[np.ndarray] = None
    gamma: Optional[float] = None
    G: Optional[np.ndarray] = None          # 2x6 geodetic Jacobian
    phi: Optional[np.ndarray] = None        # reference (lat, lon), unwrapped
    z: Optional[np.ndarray] = None          # projection point
    normal: Optional[np.ndarray] = None     # unit CA normal

    def __post_init__(self):
        if self.xi is not None and np.any(np.asarray(self.xi) < 0):
            raise ValueError("xi must be nonnegative")

    @property
    def ca(self) -> bool:
        return self.normal is not None


@dataclass
class Layout:
    blocks: dict
    ca_nodes: list
    sk_nodes: list
    sens_nodes: list
    target: bool

    @property
    def n(self) -> int:
        return sum(np.size(v) for v in self.blocks.values())


def variable_count(N: int, n_ca: int = 0, n_sk: int = 0, n_sens: int = 0,
                   target: bool = False) -> int:
    """Documented size of the subproblem.

    dx 6(N+1), u 3N, s N, vdyn 6N, vca n_ca, vsk 2 n_sk, sensitivity 5 per
    node (g 3, t, vs), cone heads N, target slacks 12.
    """
    return 6 * (N + 1) + 3 * N + N + 6 * N + n_ca + 2 * n_sk + 5 * n_sens + N + (12 if target else 0)


def assemble_subproblem(lin: Sequence[NodeLinearization], ref_states: np.ndarray,
                        ref_controls: np.ndarray, cfg: ScpConfig,
                        x_target: Optional[np.ndarray] = None,
                        tr_rows: Optional[dict] = None) -> tuple[conic.ProblemBuilder, Layout]:
    """Build the convex subproblem about a reference.

    lin has N+1 entries; ref_states (N+1, 6) km, km/s; ref_controls (N, 3) km/s^2.
    tr_rows maps ("x", i) / ("u", i) to (indices, lo, hi) in variable units.
    """
    N = cfg.N
    if len(lin) != N + 1 or ref_states.shape != (N + 1, 6) or ref_controls.shape != (N, 3):
        raise ValueError("inconsistent node counts")
    S = cfg.state_scale
    L = cfg.L
    uref = ref_controls / cfg.u_max
    b = conic.ProblemBuilder()

    lbx = np.full((N + 1, 6), -np.inf)
    ubx = np.full((N + 1, 6), np.inf)
    lbx[0] = ubx[0] = 0.0
    lbu = -np.ones((N, 3))
    ubu = np.ones((N, 3))
    for (kind, i), (idx, lo, hi) in (tr_rows or {}).items():
        if kind == "x":
            lbx[i, idx] = np.maximum(lbx[i, idx], lo)
            ubx[i, idx] = np.minimum(ubx[i, idx], hi)
        else:
            lbu[i, idx] = np.maximum(lbu[i, idx], lo)
            ubu[i, idx] = np.minimum(ubu[i, idx], hi)
    dx = b.var("dx", (N + 1, 6), lbx, ubx)
    u = b.var("u", (N, 3), lbu, ubu)
    s = b.var("s", N, 0.0, 1.0)
    vdyn = b.var("vdyn", (N, 6))
    ca_nodes = [i for i in range(1, N + 1) if lin[i].ca]
    sk_nodes = [i for i in range(1, N + 1) if cfg.sk_box and lin[i].G is not None]
    sens_nodes = [i for i in range(1, N + 1) if lin[i].gamma is not None]
    vca = b.var("vca", len(ca_nodes))
    vsk = b.var("vsk", (len(sk_nodes), 2))
    g = b.var("g", (len(sens_nodes), 3))
    tg = b.var("t", len(sens_nodes))
    vs = b.var("vs", len(sens_nodes))
    V = b.var("V", N)
    b.cost(s, 1.0)
    b.cost(V, cfg.kappa_vc)

    # dynamics with virtual controls
    for i in range(N):
        bd = lin[i].bundle
        A = bd.A * S[None, :] / S[:, None]
        B = bd.B * cfg.u_max / S[:, None]
        d = (bd.xbar - ref_states[i + 1]) / S - B @ uref[i]
        b.eq([(dx[i + 1], np.eye(6)), (dx[i], -A), (u[i], -B), (vdyn[i], -np.eye(6))], d)
        b.cone(s[i], u[i])

    members: dict[int, list] = {i: [vdyn[i - 1]] for i in range(1, N + 1)}
    for k, i in enumerate(ca_nodes):
        nd = lin[i]
        n = nd.normal
        b.le([(dx[i, :3], -n), (vca[k], -1.0)], float(n @ (nd.r - nd.z)) / L)
        members[i].append([vca[k]])
    for k, i in enumerate(sk_nodes):
        nd = lin[i]
        dres = nd.G @ ref_states[i] - nd.phi
        M, Vm, rhs = sk_box_rows(nd.G, dres, cfg.box)
        MS = M * S[None, :]
        rhs = rhs - M @ ref_states[i]
        for row in range(4):
            w = np.linalg.norm(MS[row])
            if not w > 0:
                continue
            b.le([(dx[i], MS[row] / w), (vsk[k], Vm[row] / w)], rhs[row] / w)
        members[i].append(vsk[k])
    for k, i in enumerate(sens_nodes):
        nd = lin[i]
        W = 2.0 * np.linalg.inv(nd.P) / nd.gamma
        b.eq([(g[k], np.eye(3)), (dx[i, :3], -W * L)], W @ nd.r)
        b.eq([(tg[k], 1.0), (vs[k], -1.0)], [1.0])
        b.cone(tg[k], g[k])
        members[i].append([vs[k]])
    for i in range(1, N + 1):
        b.cone(V[i - 1], np.concatenate([np.atleast_1d(m).ravel() for m in members[i]]))

    target = x_target is not None
    if target:
        sp_ = b.var("sT_plus", 6, lb=0.0)
        sm_ = b.var("sT_minus", 6, lb=0.0)
        b.eq([(dx[N], np.eye(6)), (sp_, np.eye(6)), (sm_, -np.eye(6))],
             (np.asarray(x_target, float) - ref_states[N]) / S)
        b.cost(sp_, cfg.kappa_T)
        b.cost(sm_, cfg.kappa_T)
    return b, Layout(b.blocks, ca_nodes, sk_nodes, sens_nodes, target)


# ----------------------------------------------------------------- results

@dataclass
class ValidationReport:
    e_m: float                      # max node position error, m
    states: np.ndarray              # nonlinear node states
    d_m2: np.ndarray
    metric: np.ndarray              # metric of record per node
    node_ok: np.ndarray
    valid: bool
    latlon: Optional[np.ndarray] = None


@dataclass
class ManeuverPlan:
    epochs: np.ndarray
    states: np.ndarray              # last linear solution (N+1, 6)
    controls: np.ndarray            # (N, 3) km/s^2, ECI
    slack: np.ndarray               # (N,) normalised slack input
    dt: float
    u_max: float
    metric: RiskMetricSpec
    d_m2: np.ndarray
    dbar2: np.ndarray
    metric_values: np.ndarray
    vc_norms: np.ndarray
    n_maj: int
    n_min: int
    converged: bool
    trace: list = field(default_factory=list)
    wall_time: float = 0.0
    validation: Optional[ValidationReport] = None
    x_target: Optional[np.ndarray] = None
    lin: list = field(default_factory=list, repr=False)

    @property
    def status(self) -> str:
        return "CONVERGED" if self.converged else "NOT_CONVERGED"

    @property
    def dv_eci(self) -> np.ndarray:
        """Per-node delta-v vectors, mm/s."""
        return self.controls * self.dt * 1e6

    @property
    def dv_node(self) -> np.ndarray:
        return np.linalg.norm(self.dv_eci, axis=1)

    @property
    def dv_total(self) -> float:
        return float(self.dv_node.sum())

    def dv_rtn(self) -> np.ndarray:
        out = np.empty((len(self.controls), 3))
        for i, dv in enumerate(self.dv_eci):
            R = rtn_to_eci(EpochState.from_vector(self.epochs[i], self.states[i]))
            out[i] = R.T @ dv
        return out

    @property
    def vc_sum(self) -> float:
        return float(np.sum(self.vc_norms))


class ScpSolverError(RuntimeError):
    def __init__(self, msg: str, trace: list):
        super().__init__(f"{msg}; trace={trace}")
        self.trace = trace


# ------------------------------------------------------------------ engine

def _covariances(conj: Conjunction, stms) -> np.ndarray:
    return conj.primary_covariances(stms) + conj.Ps


def _metric_at(metric: RiskMetricSpec, r: np.ndarray, P: np.ndarray):
    """(d_m2 of the metric, P_IC, metric value, keep-out covariance, dbar2)."""
    if metric.kind is MetricKind.MISS_DISTANCE:
        Pk = np.broadcast_to(np.eye(3), P.shape)
    else:
        Pk = P
    dbar2 = limits(metric, Pk)
    n = len(r)
    dm2, pic, val = np.empty(n), np.empty(n), np.empty(n)
    for i in range(n):
        d = risk.RelPosDistribution(r[i], P[i], node=i)
        dm2[i] = risk.metric_smd(metric, risk.RelPosDistribution(r[i], Pk[i], node=i))
        pic[i] = risk.ipc(d, metric.combined_hbr)
        if metric.kind is MetricKind.MAX_IPC:
            val[i] = risk.max_ipc(d, metric.combined_hbr) if dm2[i] > 0 else np.inf
        elif metric.kind is MetricKind.IPC:
            val[i] = pic[i]
        else:
            val[i] = np.linalg.norm(r[i])
    return dm2, pic, val, Pk, dbar2


def _tr_rows(lin, cfg: ScpConfig, canon: np.ndarray, uref: np.ndarray) -> dict:
    """Trust-region bounds in subproblem units; node 0 state is fixed already."""
    S = cfg.state_scale
    rows = {}
    N = cfg.N
    for i in range(1, N + 1):
        xi = lin[i].xi
        if xi is None:
            continue
        idx, lo, hi = trust_region_rows(xi[:6], np.zeros(6), cfg.trust_nu_bar)
        conv = canon[idx] / S[idx]
        keep = (hi - lo) * conv < 2 * TR_DROP
        if np.any(keep):
            rows[("x", i)] = (idx[keep], (lo * conv)[keep], (hi * conv)[keep])
        if i < N:
            idx, lo, hi = trust_region_rows(xi[6:], uref[i], cfg.trust_nu_bar)
            keep = (hi - lo) < 2 * TR_DROP
            if np.any(keep):
                rows[("u", i)] = (idx[keep], lo[keep], hi[keep])
    return rows


def _x_target(conj: Conjunction, cfg: ScpConfig):
    spec = conj.spec
    if cfg.sk_target:
        xN = return_target(conj.primary_ballistic)
        M = max(2, int(round(cfg.sk_days * cfg.sk_nodes_per_day)))
        res = solve_sk_target(xN, cfg.sk_days, M, cfg.box, spec.primary.params, spec.forces,
                              margin=cfg.sk_margin)
        log.info("sk target: violation %.3e deg after %d iterations", res.violation, res.iterations)
        return res.x_T.x
    if cfg.return_to_orbit:
        return return_target(conj.primary_ballistic).x
    return None


def _rollout(lin, X: np.ndarray, U: np.ndarray, un: np.ndarray, vdyn: np.ndarray,
             cfg: ScpConfig) -> np.ndarray:
    """Linear state deviations (subproblem units) for given normalised controls."""
    S = cfg.state_scale
    dx = np.zeros((cfg.N + 1, 6))
    for i in range(cfg.N):
        bd = lin[i].bundle
        A = bd.A * S[None, :] / S[:, None]
        B = bd.B * cfg.u_max / S[:, None]
        d = (bd.xbar - X[i + 1]) / S - B @ (U[i] / cfg.u_max)
        dx[i + 1] = A @ dx[i] + B @ un[i] + d + vdyn[i]
    return dx


def run(scenario: Union[ScenarioSpec, Conjunction], cfg: Optional[ScpConfig] = None,
        validate: bool = True) -> ManeuverPlan:
    """Full SCP loop; returns the converged plan or the last one flagged NOT_CONVERGED."""
    t_start = time.perf_counter()
    conj = scenario if isinstance(scenario, Conjunction) else build(scenario)
    spec = conj.spec
    if cfg is None:
        cfg = ScpConfig.from_scenario(spec, conj.dt)
    if cfg.N != conj.N or abs(cfg.dt - conj.dt) > 1e-9 * conj.dt:
        raise ValueError("config grid does not match the scenario grid")
    N = cfg.N
    model = OrbitalModel(spec.primary.params, spec.forces)
    units = conj.units
    canon = units.state_scale
    S = cfg.state_scale
    L = cfg.L
    metric = cfg.metric
    sec_r = conj.secondary_states[:, :3]
    x_target = _x_target(conj, cfg)

    X = conj.primary_ballistic.states.copy()
    U = np.zeros((N, 3))
    trace: list = []
    n_min_total = 0
    sens_active: set = set()
    converged = False
    plan_lin: list = []
    s_norm = np.zeros(N)
    vc = np.zeros(N)
    for j in range(1, cfg.j_max + 1):
        bundles = sensitivities_batch(model, conj.epochs[:-1], X[:-1], U, cfg.dt, units,
                                      want_second_order=True, control_scale=cfg.u_max,
                                      first_segment=0)
        P = _covariances(conj, [bd.A for bd in bundles])
        r_ref = X[:, :3] - sec_r
        dm2, pic, _, Pk, dbar2 = _metric_at(metric, r_ref, P)
        xis = [nli_weights(bd.scaled(canon, cfg.u_max)) for bd in bundles]
        lin = []
        for i in range(N + 1):
            nd = NodeLinearization(bundle=bundles[i] if i < N else None, r=r_ref[i], P=Pk[i],
                                   dbar2=float(dbar2[i]), dm2=float(dm2[i]), p_ic=float(pic[i]),
                                   xi=xis[min(i, N - 1)])
            if cfg.sensitivity is not None and i > 0:
                # once constrained, a node stays constrained so the bound cannot toggle
                sc = cfg.sensitivity
                eps = 1.0 if i in sens_active else sc.epsilon
                nd.gamma = sensitivity_rows(nd.p_ic, metric, sc.rho, eps, sc.delta_r)
                if nd.gamma is not None:
                    sens_active.add(i)
            if cfg.sk_box and i > 0:
                nd.phi, nd.G = node_geodetic(EpochState.from_vector(conj.epochs[i], X[i]), cfg.box)
            lin.append(nd)
        tr = _tr_rows(lin, cfg, canon, U / cfg.u_max)

        r_prev = r_ref.copy()
        k = 0
        sol = layout = None
        while k < cfg.k_max:
            k += 1
            for i in range(1, N + 1):
                nd = lin[i]
                if nd.dbar2 > 0:
                    nd.z = surface_point(r_prev[i], nd.P, nd.dbar2)
                    n, _ = ca_halfspace(nd.z, nd.P)
                    nd.normal = n / np.linalg.norm(n)
            builder, layout = assemble_subproblem(lin, X, U, cfg, x_target, tr)
            sol = conic.solve(builder.build(), tol=cfg.solver_tol)
            if not sol.ok:
                trace.append(dict(major=j, minor=k, status=sol.status.value))
                raise ScpSolverError(f"subproblem {sol.status.value} at major {j}, minor {k}", trace)
            dx = sol.x[layout.blocks["dx"]]
            r_new = r_ref + L * dx[:, :3]
            err_m = float(np.max(np.abs(r_new - r_prev)))
            r_prev = r_new
            if err_m <= cfg.tol_minor:
                break
        n_min_total += k
        dx = sol.x[layout.blocks["dx"]]
        un = sol.x[layout.blocks["u"]].copy()
        s_norm = sol.x[layout.blocks["s"]].copy()
        small = np.linalg.norm(un, axis=1) < CONTROL_FLOOR
        if np.any(small & np.any(un != 0.0, axis=1)):
            un[small] = 0.0
            dx = _rollout(lin, X, U, un, sol.x[layout.blocks["vdyn"]], cfg)
        s_norm[small] = 0.0
        vc = sol.x[layout.blocks["V"]]
        vc_sum = float(np.sum(vc))
        err = float(np.max(np.abs(un - U / cfg.u_max)))
        X = X + dx * S[None, :]
        U = un * cfg.u_max
        plan_lin = lin
        dv = float(np.sum(np.linalg.norm(U, axis=1)) * cfg.dt * 1e6)
        trace.append(dict(major=j, minors=k, err=err, vc_sum=vc_sum, minor_err_km=err_m,
                          objective=sol.objective, dv_mm_s=dv, solver_iters=sol.iterations,
                          n_ca=len(layout.ca_nodes), n_sens=len(layout.sens_nodes)))
        log.info("major %d: minors %d err %.3e vc %.3e dv %.1f mm/s", j, k, err, vc_sum, dv)
        if err <= cfg.tol_major and vc_sum <= cfg.vc_tol:
            converged = True
            break

    P = _covariances(conj, [bd.A for bd in sensitivities_batch(
        model, conj.epochs[:-1], X[:-1], U, cfg.dt, units, control_scale=cfg.u_max)])
    dm2, _, val, _, dbar2 = _metric_at(metric, X[:, :3] - sec_r, P)
    plan = ManeuverPlan(epochs=conj.epochs.copy(), states=X, controls=U, slack=s_norm, dt=cfg.dt,
                        u_max=cfg.u_max, metric=metric, d_m2=dm2, dbar2=dbar2, metric_values=val,
                        vc_norms=np.asarray(vc), n_maj=len([t for t in trace if "err" in t]),
                        n_min=n_min_total, converged=converged, trace=trace,
                        x_target=x_target, lin=plan_lin)
    if validate:
        plan.validation = validate_plan(conj, plan, cfg)
    plan.wall_time = time.perf_counter() - t_start
    return plan


def validate_plan(conj: Conjunction, plan: ManeuverPlan, cfg: Optional[ScpConfig] = None,
                  slack: float = 0.05) -> ValidationReport:
    """Nonlinear re-propagation of the plan and re-evaluation of the metric."""
    spec = conj.spec
    x0 = EpochState.from_vector(conj.epochs[0], conj.primary_ballistic.states[0])
    if not np.any(plan.controls):
        Xn = conj.primary_ballistic.states.copy()
        stms = [bd.A for bd in conj.primary_ballistic.bundles]
    else:
        Xn = propagate_nodes(x0, plan.controls, conj.dt, spec.primary.params, spec.forces,
                             conj.units)
        model = OrbitalModel(spec.primary.params, spec.forces)
        stms = [bd.A for bd in sensitivities_batch(model, conj.epochs[:-1], Xn[:-1], plan.controls,
                                                   conj.dt, conj.units)]
    e_m = float(np.max(np.linalg.norm(Xn[:, :3] - plan.states[:, :3], axis=1)) * 1e3)
    P = _covariances(conj, stms)
    dm2, _, val, _, _ = _metric_at(plan.metric, Xn[:, :3] - conj.secondary_states[:, :3], P)
    ok = np.array([risk.metric_ok(plan.metric, v, slack) for v in val])
    ok[0] = True      # the initial state cannot be changed
    latlon = None
    if cfg is not None and cfg.sk_box:
        latlon = np.array([node_geodetic(EpochState.from_vector(t, x), cfg.box)[0]
                           for t, x in zip(conj.epochs, Xn)])
    return ValidationReport(e_m=e_m, states=Xn, d_m2=dm2, metric=val, node_ok=ok,
                            valid=bool(np.all(ok)), latlon=latlon)


__all__ = [
    "SensitivityConfig", "ScpConfig", "NodeLinearization", "Layout", "ManeuverPlan",
    "ValidationReport", "ScpSolverError", "project_onto_ellipsoid", "seed_inside_point",
    "ca_halfspace", "surface_point", "nli_weights", "trust_region_rows", "sensitivity_active",
    "gradient_bound", "sensitivity_rows", "variable_count", "assemble_subproblem", "run",
    "validate_plan",
]
