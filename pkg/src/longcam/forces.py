"""Perturbing accelerations.

Everything here is vectorised over leading axis n and safe for complex-step
differentiation: no abs(), no np.linalg.norm on state-dependent arrays.
Units are km, s.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .frames import J2000_JD, MU_EARTH, OMEGA_EARTH, R_EARTH

J2 = 1.08262668e-3
J3 = -2.53265649e-6
J4 = -1.61962159e-6
MU_SUN = 1.32712440018e11
MU_MOON = 4902.800066
AU = 149597870.7
P_SUN = 4.56e-6                 # N/m^2 at 1 AU
OBLIQUITY = np.radians(23.43929111)
ARCSEC = np.pi / (180.0 * 3600.0)


@dataclass(frozen=True)
class SpacecraftParams:
    mass: float                 # kg
    drag_area: float = 0.0      # m^2
    cd: float = 2.2
    srp_area: float = 0.0       # m^2
    cr: float = 1.0
    hbr: float = 0.0            # m

    def __post_init__(self):
        if not self.mass > 0:
            raise ValueError("mass must be positive")
        for k in ("drag_area", "cd", "srp_area", "cr", "hbr"):
            if getattr(self, k) < 0:
                raise ValueError(f"{k} must be >= 0")


@dataclass(frozen=True)
class ForceModelConfig:
    zonal_degree: int = 2
    drag_enabled: bool = False
    srp_enabled: bool = False
    third_body_enabled: bool = False
    density_base: float = 3.725e-12        # kg/m^3 at density_ref_alt
    density_ref_alt: float = 400.0          # km
    density_scale_height: float = 58.515    # km

    def __post_init__(self):
        if self.zonal_degree not in (0, 2, 3, 4):
            raise ValueError("zonal_degree must be one of 0, 2, 3, 4")
        if self.density_scale_height <= 0:
            raise ValueError("density scale height must be positive")


def _rot_ecliptic(v):
    ce, se = np.cos(OBLIQUITY), np.sin(OBLIQUITY)
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    return np.stack([x, ce * y - se * z, se * y + ce * z], axis=-1)


def sun_position(t_tt):
    """Low-precision solar position (km, ECI ~ J2000) for TT seconds past J2000."""
    T = np.asarray(t_tt, float) / 86400.0 / 36525.0
    M = np.radians(357.5256 + 35999.049 * T)
    lam = np.radians(282.9400) + M + (6892.0 * np.sin(M) + 72.0 * np.sin(2 * M)) * ARCSEC
    r = (149.619 - 2.499 * np.cos(M) - 0.021 * np.cos(2 * M)) * 1e6
    ecl = np.stack([r * np.cos(lam), r * np.sin(lam), np.zeros_like(r)], axis=-1)
    return _rot_ecliptic(ecl)


def moon_position(t_tt):
    """Low-precision lunar position (km, ECI ~ J2000)."""
    T = np.asarray(t_tt, float) / 86400.0 / 36525.0
    d2r = np.pi / 180.0
    L0 = (218.31617 + 481267.88088 * T - 1.3972 * T) * d2r
    l = (134.96292 + 477198.86753 * T) * d2r
    lp = (357.52543 + 35999.04944 * T) * d2r
    F = (93.27283 + 483202.01873 * T) * d2r
    D = (297.85027 + 445267.11135 * T) * d2r
    s = np.sin
    lam = L0 + ARCSEC * (
        22640 * s(l) + 769 * s(2 * l) - 4586 * s(l - 2 * D) + 2370 * s(2 * D)
        - 668 * s(lp) - 412 * s(2 * F) - 212 * s(2 * l - 2 * D) - 206 * s(l + lp - 2 * D)
        + 192 * s(l + 2 * D) - 165 * s(lp - 2 * D) + 148 * s(l - lp) - 125 * s(D)
        - 110 * s(l + lp) - 55 * s(2 * F - 2 * D))
    beta = ARCSEC * (
        18520 * s(F + lam - L0 + ARCSEC * (412 * s(2 * F) + 541 * s(lp)))
        - 526 * s(F - 2 * D) + 44 * s(l + F - 2 * D) - 31 * s(-l + F - 2 * D)
        - 25 * s(-2 * l + F) - 23 * s(lp + F - 2 * D) + 21 * s(-l + F) + 11 * s(-lp + F - 2 * D))
    c = np.cos
    r = (385000 - 20905 * c(l) - 3699 * c(2 * D - l) - 2956 * c(2 * D) - 570 * c(2 * l)
         + 246 * c(2 * l - 2 * D) - 205 * c(lp - 2 * D) - 171 * c(l + 2 * D) - 152 * c(l + lp - 2 * D))
    ecl = np.stack([r * c(beta) * c(lam), r * c(beta) * s(lam), r * s(beta)], axis=-1)
    return _rot_ecliptic(ecl)


def _dot(a, b):
    return np.sum(a * b, axis=-1)


def zonal_accel(r, degree: int, mu=MU_EARTH):
    """Point mass plus zonal harmonics up to `degree` (0 means point mass only)."""
    x, y, z = r[..., 0], r[..., 1], r[..., 2]
    r2 = x * x + y * y + z * z
    rn = np.sqrt(r2)
    k = -mu / (r2 * rn)
    ax, ay, az = k * x, k * y, k * z
    if degree >= 2:
        s2 = z * z / r2
        f = -1.5 * J2 * mu * R_EARTH**2 / (r2 * r2 * rn)
        ax = ax + f * x * (1.0 - 5.0 * s2)
        ay = ay + f * y * (1.0 - 5.0 * s2)
        az = az + f * z * (3.0 - 5.0 * s2)
    if degree >= 3:
        f = -2.5 * J3 * mu * R_EARTH**3 / (r2 * r2 * r2 * rn)
        g = 3.0 * z - 7.0 * z**3 / r2
        ax = ax + f * x * g
        ay = ay + f * y * g
        az = az + f * (6.0 * z * z - 7.0 * z**4 / r2 - 0.6 * r2)
    if degree >= 4:
        s2 = z * z / r2
        f = 1.875 * J4 * mu * R_EARTH**4 / (r2 * r2 * r2 * rn)
        g = 1.0 - 14.0 * s2 + 21.0 * s2 * s2
        ax = ax + f * x * g
        ay = ay + f * y * g
        az = az + f * z * (5.0 - 70.0 / 3.0 * s2 + 21.0 * s2 * s2)
    return np.stack([ax, ay, az], axis=-1)


def zonal_potential(r, degree: int, mu=MU_EARTH):
    """Geopotential matching zonal_accel (used only as a test oracle)."""
    r = np.asarray(r, float)
    rn = np.linalg.norm(r, axis=-1)
    s = r[..., 2] / rn
    P = {2: 0.5 * (3 * s**2 - 1), 3: 0.5 * (5 * s**3 - 3 * s), 4: (35 * s**4 - 30 * s**2 + 3) / 8}
    J = {2: J2, 3: J3, 4: J4}
    u = 1.0
    for n in range(2, degree + 1):
        u = u - J[n] * (R_EARTH / rn) ** n * P[n]
    return mu / rn * u


def third_body_accel(r, rb, mu_b):
    d = rb - r
    d3 = _dot(d, d) ** 1.5
    rb3 = _dot(rb, rb) ** 1.5
    return mu_b * (d / d3[..., None] - rb / rb3[..., None])


def drag_accel(r, v, sc: SpacecraftParams, fm: ForceModelConfig):
    rn = np.sqrt(_dot(r, r))
    rho = fm.density_base * np.exp(-(rn - R_EARTH - fm.density_ref_alt) / fm.density_scale_height)
    vrel = np.stack([v[..., 0] + OMEGA_EARTH * r[..., 1],
                     v[..., 1] - OMEGA_EARTH * r[..., 0],
                     v[..., 2]], axis=-1)
    vr = np.sqrt(_dot(vrel, vrel))
    bc = sc.cd * sc.drag_area / sc.mass                     # m^2/kg
    # rho[kg/m^3]*bc[m^2/kg] -> 1/m ; times v^2 km^2/s^2 -> 1e3 km/s^2
    return (-0.5e3 * rho * bc * vr)[..., None] * vrel


def srp_accel(r, rsun, sc: SpacecraftParams):
    d = r - rsun
    dn = np.sqrt(_dot(d, d))
    k = 1e-3 * P_SUN * sc.cr * sc.srp_area / sc.mass * AU**2   # km/s^2 * km^2
    return (k / dn**3)[..., None] * d


def total_accel(t, r, v, sc: SpacecraftParams, fm: ForceModelConfig, ephem=None):
    """Sum of all enabled accelerations.  `ephem` = (r_sun, r_moon) precomputed."""
    a = zonal_accel(r, fm.zonal_degree)
    if fm.drag_enabled and sc.drag_area > 0:
        a = a + drag_accel(r, v, sc, fm)
    if fm.third_body_enabled or (fm.srp_enabled and sc.srp_area > 0):
        if ephem is None:
            ephem = (sun_position(t), moon_position(t))
        rs, rm = ephem
        if fm.third_body_enabled:
            a = a + third_body_accel(r, rs, MU_SUN) + third_body_accel(r, rm, MU_MOON)
        if fm.srp_enabled and sc.srp_area > 0:
            a = a + srp_accel(r, rs, sc)
    return a


def julian_date_tt(t_tt):
    return J2000_JD + np.asarray(t_tt, float) / 86400.0
