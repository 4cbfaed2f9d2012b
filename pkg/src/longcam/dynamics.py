"""Numerical propagation and flow-map sensitivities.

First-order sensitivities (A, B) come from variational equations integrated
next to the state; the Jacobian of the vector field is taken by complex step.
The second-order tensor is a central difference of (A|B).  All perturbed
copies of all segments are stacked into one ODE system so they share the
same step sequence, which keeps the differences smooth (and exactly zero
for linear dynamics).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .forces import ForceModelConfig, SpacecraftParams, moon_position, sun_position, total_accel
from .frames import (MU_EARTH, earth_rotation_angle, ecef_to_geodetic, elements_to_state,
                     eci_to_ecef_matrix, rtn_matrix, wrap_deg)

RTOL = 1e-12
ATOL = 1e-13
FD_REL_STEP = 1e-6
_CSTEP = 1e-30


class PropagationError(RuntimeError):
    def __init__(self, msg: str, segment: Optional[int] = None):
        self.segment = segment
        super().__init__(f"segment {segment}: {msg}" if segment is not None else msg)


@dataclass(frozen=True)
class EpochState:
    epoch: float                    # s past J2000 TT
    position: np.ndarray            # km, ECI
    velocity: np.ndarray            # km/s, ECI

    def __post_init__(self):
        r = np.asarray(self.position, dtype=float).reshape(3)
        v = np.asarray(self.velocity, dtype=float).reshape(3)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(v)) and np.isfinite(self.epoch)):
            raise ValueError("state must be finite")
        if not np.linalg.norm(r) > 0:
            raise ValueError("position norm must be positive")
        object.__setattr__(self, "position", r)
        object.__setattr__(self, "velocity", v)

    @property
    def x(self) -> np.ndarray:
        return np.concatenate([self.position, self.velocity])

    @classmethod
    def from_vector(cls, epoch: float, x) -> "EpochState":
        x = np.asarray(x, float)
        return cls(float(epoch), x[:3], x[3:6])

    @classmethod
    def from_elements(cls, epoch, a, e, i, argp, raan, nu) -> "EpochState":
        r, v = elements_to_state(a, e, i, argp, raan, nu)
        return cls(float(epoch), r, v)


@dataclass(frozen=True)
class Units:
    """Canonical units: DU km and TU s (so mu = 1 for two-body)."""
    du: float
    tu: float

    @classmethod
    def from_sma(cls, a: float, mu: float = MU_EARTH) -> "Units":
        return cls(float(a), float(np.sqrt(a**3 / mu)))

    @property
    def vu(self) -> float:
        return self.du / self.tu

    @property
    def acc(self) -> float:
        return self.du / self.tu**2

    @property
    def state_scale(self) -> np.ndarray:
        return np.array([self.du] * 3 + [self.vu] * 3)


# ---------------------------------------------------------------- models

class OrbitalModel:
    """x' = [v, a(t, r, v) + u] with u a constant ECI acceleration."""

    control_matrix = np.vstack([np.zeros((3, 3)), np.eye(3)])

    def __init__(self, params: SpacecraftParams, forces: ForceModelConfig):
        self.params = params
        self.forces = forces
        self._needs_ephem = forces.third_body_enabled or (forces.srp_enabled and params.srp_area > 0)

    def context(self, t):
        if not self._needs_ephem:
            return None
        return (sun_position(t), moon_position(t))

    def rhs(self, t, x, u, ctx=None):
        r, v = x[:, :3], x[:, 3:]
        a = total_accel(t, r, v, self.params, self.forces, ephem=ctx)
        return np.concatenate([v, a + u], axis=1)


class LinearModel:
    """x' = M x + N u; used to check that second-order terms vanish."""

    def __init__(self, M, N):
        self.M = np.asarray(M, float)
        self.control_matrix = np.asarray(N, float)

    def context(self, t):
        return None

    def rhs(self, t, x, u, ctx=None):
        return x @ self.M.T + u @ self.control_matrix.T


def _tile_ctx(ctx, k):
    if ctx is None:
        return None
    return tuple(np.repeat(c, k, axis=0) for c in ctx)


def integrate_batch(model, t0, x0, u, dt: float, units: Units, with_stm: bool = False,
                    segment_ids: Optional[Sequence[int]] = None):
    """Propagate n independent segments of equal length dt.

    Returns xf (n, 6) and, if requested, A (n, 6, 6) and B (n, 6, 3) in
    physical units (km, km/s, km/s^2).
    """
    t0 = np.atleast_1d(np.asarray(t0, float))
    x0 = np.atleast_2d(np.asarray(x0, float))
    u = np.atleast_2d(np.asarray(u, float))
    n = x0.shape[0]
    if not dt > 0:
        raise ValueError("dt must be positive")
    if not np.all(np.isfinite(u)):
        raise ValueError("control must be finite")
    S = units.state_scale
    tu, acc = units.tu, units.acc
    xc0 = x0 / S
    uc = u / acc
    Ec = (model.control_matrix / S[:, None]) * acc * tu
    t_end = dt / tu
    eye6 = np.eye(6)

    def fc(tau, xc, ctx, t, uu):
        return model.rhs(t, xc * S, uu * acc, ctx) / S * tu

    if not with_stm:
        def fun(tau, y):
            xc = y.reshape(n, 6)
            t = t0 + tau * tu
            return fc(tau, xc, model.context(t), t, uc).ravel()
        y0 = xc0.ravel()
    else:
        pert = 1j * _CSTEP * eye6

        def fun(tau, y):
            Y = y.reshape(n, 60)
            xc = Y[:, :6]
            phi = Y[:, 6:42].reshape(n, 6, 6)
            psi = Y[:, 42:].reshape(n, 6, 3)
            t = t0 + tau * tu
            ctx = model.context(t)
            X = (xc[:, None, :] + pert[None]).reshape(6 * n, 6)
            f = fc(tau, X, _tile_ctx(ctx, 6), np.repeat(t, 6), np.repeat(uc, 6, axis=0))
            f = f.reshape(n, 6, 6)
            F = np.swapaxes(f.imag, 1, 2) / _CSTEP        # F[i, row, col]
            dx = f[:, 0, :].real
            dphi = F @ phi
            dpsi = F @ psi + Ec[None]
            return np.concatenate([dx, dphi.reshape(n, 36), dpsi.reshape(n, 18)], axis=1).ravel()
        y0 = np.concatenate([xc0, np.tile(eye6.ravel(), (n, 1)), np.zeros((n, 18))], axis=1).ravel()

    sol = solve_ivp(fun, (0.0, t_end), y0, method="DOP853", rtol=RTOL, atol=ATOL)
    seg = None
    if segment_ids is not None and len(segment_ids):
        seg = int(segment_ids[0])
    if not sol.success:
        raise PropagationError(f"integrator failed: {sol.message}", seg)
    yf = sol.y[:, -1]
    if not np.all(np.isfinite(yf)):
        raise PropagationError("non-finite state", seg)
    if not with_stm:
        return yf.reshape(n, 6) * S
    Y = yf.reshape(n, 60)
    xf = Y[:, :6] * S
    Ac = Y[:, 6:42].reshape(n, 6, 6)
    Bc = Y[:, 42:].reshape(n, 6, 3)
    A = S[None, :, None] * Ac / S[None, None, :]
    B = S[None, :, None] * Bc / acc
    return xf, A, B


# ------------------------------------------------------------ sensitivities

@dataclass
class SensitivityBundle:
    """Linearisation of one segment about (x_ref, u_ref).

    x_{i+1} ~= A x + B u + c with c = xbar - A x_ref - B u_ref.
    tensor[k, v, w] = d^2 x_{i+1,k} / dz_v dz_w with z = (x, u).
    """
    A: np.ndarray
    B: np.ndarray
    xbar: np.ndarray
    x_ref: np.ndarray
    u_ref: np.ndarray
    tensor: Optional[np.ndarray] = None

    @property
    def c(self) -> np.ndarray:
        return self.xbar - self.A @ self.x_ref - self.B @ self.u_ref

    @property
    def jacobian(self) -> np.ndarray:
        return np.hstack([self.A, self.B])

    def predict(self, x, u) -> np.ndarray:
        return self.A @ x + self.B @ u + self.c

    def scaled(self, state_scale, control_scale) -> "SensitivityBundle":
        """Express the bundle in variables x' = x/state_scale, u' = u/control_scale."""
        sx = np.asarray(state_scale, float) * np.ones(6)
        su = np.asarray(control_scale, float) * np.ones(3)
        sz = np.concatenate([sx, su])
        ten = None
        if self.tensor is not None:
            ten = self.tensor / sx[:, None, None] * sz[None, :, None] * sz[None, None, :]
        return SensitivityBundle(A=self.A * sx[None, :] / sx[:, None],
                                 B=self.B * su[None, :] / sx[:, None],
                                 xbar=self.xbar / sx, x_ref=self.x_ref / sx,
                                 u_ref=self.u_ref / su, tensor=ten)


def sensitivities_batch(model, epochs, states, controls, dt: float, units: Units,
                        want_second_order: bool = False, control_scale: float = 1e-6,
                        first_segment: int = 0) -> list[SensitivityBundle]:
    """Bundles for many segments in one stacked integration."""
    epochs = np.atleast_1d(np.asarray(epochs, float))
    X = np.atleast_2d(np.asarray(states, float))
    U = np.atleast_2d(np.asarray(controls, float))
    n = X.shape[0]
    if not want_second_order:
        xf, A, B = integrate_batch(model, epochs, X, U, dt, units, with_stm=True,
                                   segment_ids=[first_segment])
        return [SensitivityBundle(A[i], B[i], xf[i], X[i].copy(), U[i].copy()) for i in range(n)]

    steps = np.concatenate([FD_REL_STEP * units.state_scale, np.full(3, FD_REL_STEP * control_scale)])
    Z = np.concatenate([X, U], axis=1)
    pert = np.concatenate([np.zeros((1, 9)), np.diag(steps), -np.diag(steps)])   # (19, 9)
    Zs = (Z[:, None, :] + pert[None]).reshape(19 * n, 9)
    xf, A, B = integrate_batch(model, np.repeat(epochs, 19), Zs[:, :6], Zs[:, 6:], dt, units,
                               with_stm=True, segment_ids=[first_segment])
    J = np.concatenate([A, B], axis=2).reshape(n, 19, 6, 9)
    out = []
    for i in range(n):
        Jp, Jm = J[i, 1:10], J[i, 10:19]                  # (9, 6, 9) indexed by w
        ten = np.transpose((Jp - Jm) / (2.0 * steps[:, None, None]), (1, 2, 0))
        k = 19 * i
        out.append(SensitivityBundle(A[k], B[k], xf[k], X[i].copy(), U[i].copy(), ten))
    return out


def _default_units(state: EpochState) -> Units:
    return Units.from_sma(float(np.linalg.norm(state.position)))


def propagate_segment(state: EpochState, control, dt: float, params: SpacecraftParams,
                      forces: ForceModelConfig, units: Optional[Units] = None,
                      segment: Optional[int] = None) -> EpochState:
    units = units or _default_units(state)
    xf = integrate_batch(OrbitalModel(params, forces), [state.epoch], state.x[None],
                         np.reshape(control, (1, 3)), dt, units,
                         segment_ids=None if segment is None else [segment])
    return EpochState.from_vector(state.epoch + dt, xf[0])


def sensitivities(state: EpochState, control, dt: float, params: SpacecraftParams,
                  forces: ForceModelConfig, want_second_order: bool = False,
                  units: Optional[Units] = None, control_scale: float = 1e-6) -> SensitivityBundle:
    units = units or _default_units(state)
    return sensitivities_batch(OrbitalModel(params, forces), [state.epoch], state.x[None],
                               np.reshape(control, (1, 3)), dt, units, want_second_order,
                               control_scale)[0]


# ---------------------------------------------------------------- grids

@dataclass
class Trajectory:
    epochs: np.ndarray                      # (N+1,)
    states: np.ndarray                      # (N+1, 6)
    controls: np.ndarray                    # (N, 3) km/s^2
    dt: float
    bundles: list = field(default_factory=list)

    @property
    def N(self) -> int:
        return len(self.epochs) - 1

    def node(self, i: int) -> EpochState:
        return EpochState.from_vector(self.epochs[i], self.states[i])


def propagate_nodes(x0: EpochState, controls, dt: float, params, forces,
                    units: Optional[Units] = None) -> np.ndarray:
    """Chain propagation through N segments with piecewise-constant control."""
    controls = np.atleast_2d(controls)
    units = units or _default_units(x0)
    model = OrbitalModel(params, forces)
    N = controls.shape[0]
    out = np.empty((N + 1, 6))
    out[0] = x0.x
    for i in range(N):
        out[i + 1] = integrate_batch(model, [x0.epoch + i * dt], out[i][None], controls[i][None],
                                     dt, units, segment_ids=[i])[0]
    return out


def coast_grid(x0: EpochState, N: int, dt: float, params: SpacecraftParams,
               forces: ForceModelConfig, want_second_order: bool = False,
               units: Optional[Units] = None, controls=None,
               control_scale: float = 1e-6) -> Trajectory:
    """Node states and per-segment bundles of the (default: zero-control) trajectory."""
    if N < 1:
        raise ValueError("need at least one segment")
    units = units or _default_units(x0)
    U = np.zeros((N, 3)) if controls is None else np.asarray(controls, float).reshape(N, 3)
    states = propagate_nodes(x0, U, dt, params, forces, units)
    epochs = x0.epoch + dt * np.arange(N + 1)
    bundles = sensitivities_batch(OrbitalModel(params, forces), epochs[:-1], states[:-1], U, dt,
                                  units, want_second_order, control_scale)
    return Trajectory(epochs, states, U, dt, bundles)


# ---------------------------------------------------------------- frames

def rtn_to_eci(state: EpochState) -> np.ndarray:
    return rtn_matrix(state.position, state.velocity)


def eci_to_geodetic(state: EpochState) -> tuple[float, float]:
    r = state.position
    if not np.linalg.norm(r) > 0.5 * 6378.137:
        raise ValueError("position below half an Earth radius")
    lat, lon, _ = ecef_to_geodetic(eci_to_ecef_matrix(state.epoch) @ r)
    return lat, lon


def geodetic_jacobian(state: EpochState) -> np.ndarray:
    """2x6 central-difference Jacobian of (lat, lon) in deg per km, deg per km/s."""
    x = state.x
    G = np.zeros((2, 6))
    h = 1e-6 * np.linalg.norm(state.position)
    for k in range(6):
        e = np.zeros(6)
        e[k] = h
        p = np.array(eci_to_geodetic(EpochState.from_vector(state.epoch, x + e)))
        m = np.array(eci_to_geodetic(EpochState.from_vector(state.epoch, x - e)))
        d = p - m
        d[1] = wrap_deg(d[1])
        G[:, k] = d / (2.0 * h)
    return G


def period(a: float, mu: float = MU_EARTH) -> float:
    return 2.0 * np.pi * np.sqrt(a**3 / mu)


__all__ = [
    "EpochState", "Units", "OrbitalModel", "LinearModel", "SensitivityBundle", "Trajectory",
    "PropagationError", "integrate_batch", "sensitivities_batch", "propagate_segment",
    "sensitivities", "propagate_nodes", "coast_grid", "rtn_to_eci", "eci_to_geodetic",
    "geodetic_jacobian", "period", "earth_rotation_angle",
]
