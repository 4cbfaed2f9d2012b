"""GEO station keeping: lat/lon box rows and the free-drift state targeting SCP."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import conic
from .dynamics import (EpochState, Trajectory, Units, coast_grid, eci_to_geodetic,
                       geodetic_jacobian, propagate_nodes)
from .forces import ForceModelConfig, SpacecraftParams
from .frames import wrap_deg

log = logging.getLogger(__name__)

# targeting variables: km for position, m/s for velocity
_TSCALE = np.array([1.0, 1.0, 1.0, 1e-3, 1e-3, 1e-3])


@dataclass(frozen=True)
class SkBox:
    phi0: tuple            # (lat, lon) deg
    delta_phi: tuple       # half widths (lat, lon) deg

    def __post_init__(self):
        if not (len(self.phi0) == 2 and len(self.delta_phi) == 2):
            raise ValueError("phi0 and delta_phi are 2-vectors")
        if min(self.delta_phi) <= 0:
            raise ValueError("box half widths must be positive")

    def shrunk(self, factor: float) -> "SkBox":
        return SkBox(self.phi0, tuple(factor * np.asarray(self.delta_phi)))

    def unwrap(self, latlon) -> np.ndarray:
        """Express longitude continuously about the box centre."""
        ll = np.array(latlon, float)
        ll[..., 1] = self.phi0[1] + wrap_deg(ll[..., 1] - self.phi0[1])
        return ll

    def violation(self, latlon) -> np.ndarray:
        """Per-node, per-component distance outside the box (deg)."""
        ll = self.unwrap(latlon)
        lo = np.asarray(self.phi0) - self.delta_phi
        hi = np.asarray(self.phi0) + self.delta_phi
        return np.maximum(ll - hi, 0.0) + np.maximum(lo - ll, 0.0)

    def contains(self, latlon, tol: float = 0.0) -> bool:
        return bool(np.all(self.violation(latlon) <= tol))


def sk_box_rows(G: np.ndarray, d: np.ndarray, box: SkBox):
    """Rows M x + V v <= rhs for the linearised box, v the shared 2-buffer.

    With phi(x) ~ G x - d, encodes G x >= phi0 - dphi + d - v and
    G x <= phi0 + dphi + d + v.
    """
    G = np.asarray(G, float).reshape(2, -1)
    d = np.asarray(d, float).reshape(2)
    p0 = np.asarray(box.phi0, float)
    dp = np.asarray(box.delta_phi, float)
    M = np.vstack([-G, G])
    V = -np.vstack([np.eye(2), np.eye(2)])
    rhs = np.concatenate([-(p0 - dp + d), p0 + dp + d])
    return M, V, rhs


def node_geodetic(state: EpochState, box: SkBox):
    """(phi, G): unwrapped (lat, lon) and its state Jacobian."""
    phi = box.unwrap(eci_to_geodetic(state))
    return phi, geodetic_jacobian(state)


def coast_latlon(x0: EpochState, days: float, step_s: float, params: SpacecraftParams,
                 forces: ForceModelConfig) -> tuple[np.ndarray, np.ndarray]:
    """Ballistic lat/lon sampled every step_s over the horizon."""
    n = int(np.ceil(days * 86400.0 / step_s))
    states = propagate_nodes(x0, np.zeros((n, 3)), step_s, params, forces,
                             Units.from_sma(float(np.linalg.norm(x0.position))))
    t = x0.epoch + step_s * np.arange(n + 1)
    ll = np.array([eci_to_geodetic(EpochState.from_vector(ti, s)) for ti, s in zip(t, states)])
    return t, ll


@dataclass
class SkTargetResult:
    x_T: EpochState
    violation: float               # deg*node on the true box
    objective: float               # deg*node on the shrunk box used for targeting
    latlon: np.ndarray             # (M+1, 2) over the horizon
    epochs: np.ndarray
    iterations: int
    history: list = field(default_factory=list)

    def __post_init__(self):
        if self.violation < 0:
            raise ValueError("violation must be nonnegative")


class SkTargetError(RuntimeError):
    def __init__(self, msg: str, trace: list):
        super().__init__(f"{msg}; trace={trace}")
        self.trace = trace


def _coast(x0: EpochState, M: int, dt: float, params, forces, units) -> Trajectory:
    return coast_grid(x0, M, dt, params, forces, units=units)


def _latlon(tr: Trajectory, box: SkBox) -> np.ndarray:
    return box.unwrap(np.array([eci_to_geodetic(tr.node(j)) for j in range(tr.N + 1)]))


def _target_lp(tr: Trajectory, ll: np.ndarray, box: SkBox, step_cap, reg: float):
    """One linearised targeting subproblem; returns (solution, initial-state step, blocks)."""
    M = tr.N
    b = conic.ProblemBuilder()
    dx = b.var("dx", (M + 1, 6))
    cp = b.var("chi_plus", (M + 1, 2), lb=0.0)
    cm = b.var("chi_minus", (M + 1, 2), lb=0.0)
    t = b.var("t", 1)
    b.cost(cp, 1.0)
    b.cost(cm, 1.0)
    b.cost(t, reg)
    b.cone(t[0], dx[0])
    for k in range(6):
        b.le([(dx[0, k], 1.0)], step_cap[k])
        b.le([(dx[0, k], -1.0)], step_cap[k])
    for j in range(M):
        A = _TSCALE[:, None] ** -1 * tr.bundles[j].A * _TSCALE[None, :]
        b.eq([(dx[j + 1], np.eye(6)), (dx[j], -A)], np.zeros(6))
    lo = np.asarray(box.phi0) - box.delta_phi
    hi = np.asarray(box.phi0) + box.delta_phi
    for j in range(M + 1):
        G = geodetic_jacobian(tr.node(j)) * _TSCALE[None, :]
        for c in range(2):
            b.le([(dx[j], G[c]), (cp[j, c], -1.0)], hi[c] - ll[j, c])
            b.le([(dx[j], -G[c]), (cm[j, c], -1.0)], ll[j, c] - lo[c])
    sol = conic.solve(b.build())
    return sol, (sol.x[dx[0]] if sol.x is not None else None), b.blocks


def solve_sk_target(x_f: EpochState, days: float, M: int, box: SkBox,
                    params: SpacecraftParams, forces: ForceModelConfig,
                    margin: float = 0.8, max_iter: int = 10, step_tol_km: float = 1e-3,
                    trust=(50.0, 5.0), reg: float = 1e-6) -> SkTargetResult:
    """Pick a state near x_f whose free drift stays in the box for `days`.

    The linearised violation is minimised against a box shrunk by `margin`;
    steps are capped at trust = (km, m/s) per component and halved while the
    nonlinear violation would grow, so the objective never increases.
    """
    if M < 2:
        raise ValueError("need M >= 2 nodes")
    if not days > 0:
        raise ValueError("horizon must be positive")
    dt = days * 86400.0 / M
    units = Units.from_sma(float(np.linalg.norm(x_f.position)))
    work = box.shrunk(margin)
    cap = np.array([trust[0]] * 3 + [trust[1]] * 3)
    x = x_f
    tr = _coast(x, M, dt, params, forces, units)
    ll = _latlon(tr, box)
    obj = float(work.violation(ll).sum())
    trace = [obj]
    it = 0
    while it < max_iter and obj > 0.0:
        it += 1
        sol, step, _ = _target_lp(tr, ll, work, cap, reg)
        if not sol.ok:
            raise SkTargetError(f"targeting subproblem {sol.status.value}", trace)
        alpha, accepted = 1.0, False
        for _ in range(6):
            xn = EpochState.from_vector(x.epoch, x.x + alpha * step * _TSCALE)
            trn = _coast(xn, M, dt, params, forces, units)
            lln = _latlon(trn, box)
            objn = float(work.violation(lln).sum())
            if objn <= obj:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            log.debug("sk target: no descent at iteration %d", it)
            break
        moved = np.linalg.norm(alpha * step[:3])
        x, tr, ll, obj = xn, trn, lln, objn
        trace.append(obj)
        log.debug("sk target it %d: objective %.3e deg, step %.3e km", it, obj, moved)
        if moved < step_tol_km:
            break
    return SkTargetResult(x_T=x, violation=float(box.violation(ll).sum()), objective=obj,
                          latlon=ll, epochs=tr.epochs, iterations=it, history=trace)


def return_target(ballistic: Trajectory) -> EpochState:
    """Final node of the zero-control trajectory."""
    return ballistic.node(ballistic.N)


__all__ = ["SkBox", "sk_box_rows", "node_geodetic", "coast_latlon", "SkTargetResult",
           "SkTargetError", "solve_sk_target", "return_target"]
