"""Covariance propagation and collision metrics.

Positions in km, HBR in metres (converted internally).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

COND_MAX = 1e12
_MAXIPC_C = np.sqrt(6.0) * np.exp(-1.5)


class MetricKind(str, enum.Enum):
    IPC = "IPC"
    MAX_IPC = "MAX_IPC"
    MISS_DISTANCE = "MISS_DISTANCE"


@dataclass(frozen=True)
class RiskMetricSpec:
    kind: MetricKind
    threshold: float          # probability, or km for miss distance
    combined_hbr: float       # m

    def __post_init__(self):
        object.__setattr__(self, "kind", MetricKind(self.kind))
        if not self.threshold > 0:
            raise ValueError("threshold must be positive")
        if self.kind is not MetricKind.MISS_DISTANCE and not self.threshold < 1:
            raise ValueError("probability threshold must be < 1")
        if self.combined_hbr < 0:
            raise ValueError("hbr must be >= 0")

    @property
    def R_km(self) -> float:
        return self.combined_hbr * 1e-3


@dataclass(frozen=True)
class StateCovariance:
    C: np.ndarray
    frame: str = "ECI"

    def __post_init__(self):
        C = np.asarray(self.C, float)
        if C.shape != (6, 6):
            raise ValueError("covariance must be 6x6")
        if not np.allclose(C, C.T, rtol=0, atol=1e-12 * max(np.trace(np.abs(C)), 1e-300)):
            raise ValueError("covariance not symmetric")
        tr = np.trace(C)
        if np.linalg.eigvalsh(C).min() < -1e-12 * max(tr, 0.0):
            raise ValueError("covariance not positive semi-definite")
        object.__setattr__(self, "C", C)


@dataclass(frozen=True)
class RelPosDistribution:
    mu: np.ndarray            # km
    P: np.ndarray             # km^2
    node: Optional[int] = None


class SingularCovariance(ValueError):
    pass


def _sym(M):
    return 0.5 * (M + M.T)


def propagate_covariance(C0, stms: Iterable[np.ndarray]) -> list[np.ndarray]:
    """C_{i+1} = A C_i A^T with symmetrisation; returns [C_0, ..., C_N]."""
    C = _sym(np.asarray(getattr(C0, "C", C0), float))
    out = [C]
    for A in stms:
        C = _sym(A @ C @ A.T)
        out.append(C)
    return out


def position_covariance(C, H: Optional[np.ndarray] = None) -> np.ndarray:
    C = np.asarray(getattr(C, "C", C), float)
    if H is None:
        return _sym(C[:3, :3].copy())
    return _sym(H @ C @ H.T)


def combined_relative(r_p, P_p, r_s, P_s, node: Optional[int] = None) -> RelPosDistribution:
    return RelPosDistribution(np.asarray(r_p, float) - np.asarray(r_s, float),
                              _sym(np.asarray(P_p, float) + np.asarray(P_s, float)), node)


def _chol(P, node=None):
    try:
        L = np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        raise SingularCovariance(f"covariance not positive definite at node {node}") from None
    d = np.diag(L)
    if (d.max() / d.min()) ** 2 > COND_MAX:
        raise SingularCovariance(f"covariance ill-conditioned (cond > 1e12) at node {node}")
    return L


def _solve(P, b, node=None):
    L = _chol(P, node)
    y = np.linalg.solve(L, b)
    return np.linalg.solve(L.T, y)


def _det(P, node=None):
    return float(np.prod(np.diag(_chol(P, node))) ** 2)


def smd(d: RelPosDistribution) -> float:
    L = _chol(d.P, d.node)
    y = np.linalg.solve(L, d.mu)
    return float(y @ y)


def smd_gradient(d: RelPosDistribution) -> np.ndarray:
    return 2.0 * _solve(d.P, d.mu, d.node)


def ipc(d: RelPosDistribution, R_m: float) -> float:
    R = R_m * 1e-3
    dm2 = smd(d)
    val = np.sqrt(2.0 / (np.pi * _det(d.P, d.node))) * R**3 / 3.0 * np.exp(-0.5 * dm2)
    return float(min(max(val, 0.0), 1.0))


def max_ipc(d: RelPosDistribution, R_m: float) -> float:
    """Largest ipc over covariance scalings k P (attained at k = d_m^2 / 3)."""
    R = R_m * 1e-3
    dm2 = smd(d)
    if not dm2 > 0:
        raise ValueError(f"max IPC undefined at the ellipsoid centre (node {d.node})")
    return float(_MAXIPC_C * R**3 / (dm2**1.5 * np.sqrt(np.pi * _det(d.P, d.node))))


def max_ipc_planar(d: RelPosDistribution, R_m: float) -> float:
    """Closed form with a 1/d_m^2 law from the planar encounter derivation.

    Not the maximum over covariance scaling of ipc; kept for comparison only.
    Ratio to max_ipc is 2 d_m sqrt(e) / 3^1.5.
    """
    R = R_m * 1e-3
    dm2 = smd(d)
    if not dm2 > 0:
        raise ValueError(f"max IPC undefined at the ellipsoid centre (node {d.node})")
    return float((np.sqrt(2.0) * R) ** 3 / (3.0 * np.e * dm2 * np.sqrt(np.pi * _det(d.P, d.node))))


class LimitUnattainable(ValueError):
    pass


def smd_limit(metric: RiskMetricSpec, P) -> float:
    """Keep-out level d_bar^2.  For MISS_DISTANCE the caller must use P = I."""
    P = np.asarray(P, float)
    if metric.kind is MetricKind.MISS_DISTANCE:
        return float(metric.threshold) ** 2
    R = metric.R_km
    det = _det(P)
    if metric.kind is MetricKind.IPC:
        arg = 3.0 * metric.threshold / R**3 * np.sqrt(np.pi * det / 2.0)
        if arg >= 1.0:
            raise LimitUnattainable("IPC threshold above the peak value: always satisfied (d_bar^2 <= 0)")
        return float(-2.0 * np.log(arg))
    return float((_MAXIPC_C * R**3 / (metric.threshold * np.sqrt(np.pi * det))) ** (2.0 / 3.0))


def ipc_limit_or_zero(metric: RiskMetricSpec, P) -> float:
    """Like smd_limit but returns 0 when the threshold can never be exceeded."""
    try:
        return smd_limit(metric, P)
    except LimitUnattainable:
        return 0.0


def metric_value(metric: RiskMetricSpec, d: RelPosDistribution) -> float:
    if metric.kind is MetricKind.IPC:
        return ipc(d, metric.combined_hbr)
    if metric.kind is MetricKind.MAX_IPC:
        return max_ipc(d, metric.combined_hbr)
    return float(np.linalg.norm(d.mu))


def metric_ok(metric: RiskMetricSpec, value: float, slack: float = 0.0) -> bool:
    if metric.kind is MetricKind.MISS_DISTANCE:
        return value >= metric.threshold * (1.0 - slack)
    return value <= metric.threshold * (1.0 + slack)


def metric_smd(metric: RiskMetricSpec, d: RelPosDistribution) -> float:
    """d_m^2 in the metric's own sense (identity covariance for miss distance)."""
    if metric.kind is MetricKind.MISS_DISTANCE:
        return float(d.mu @ d.mu)
    return smd(d)


def rtn_covariance_to_eci(C_rtn, R_rtn: np.ndarray) -> np.ndarray:
    """Rotate a 6x6 RTN covariance into ECI with a block-diagonal rotation."""
    T = np.zeros((6, 6))
    T[:3, :3] = R_rtn
    T[3:, 3:] = R_rtn
    return _sym(T @ np.asarray(C_rtn, float) @ T.T)
