"""Reference frames, time scales and element conversions.

Times are seconds past J2000 (TT).  The inertial frame is the mean
equator and equinox of J2000.  Earth orientation is IAU-1976 precession
followed by IAU-1982 GMST; nutation and polar motion are ignored.
"""
from __future__ import annotations

import numpy as np

MU_EARTH = 398600.4418          # km^3/s^2
R_EARTH = 6378.137              # km
WGS84_F = 1.0 / 298.257223563
WGS84_E2 = WGS84_F * (2.0 - WGS84_F)
OMEGA_EARTH = 7.292115e-5       # rad/s
TT_MINUS_UT1 = 69.184           # s, held constant
J2000_JD = 2451545.0


def earth_rotation_angle(t_tt):
    """ERA in radians for TT seconds past J2000 (array ok)."""
    du = (np.asarray(t_tt, dtype=float) - TT_MINUS_UT1) / 86400.0
    frac = 0.7790572732640 + 1.00273781191135448 * du
    return 2.0 * np.pi * np.mod(frac, 1.0)


def _rot3(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])


def _rot2(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, -s], [0.0, 1.0, 0.0], [s, 0.0, c]])


_AS2R = np.pi / 648000.0


def precession_matrix(t_tt: float) -> np.ndarray:
    """IAU-1976 precession, J2000 mean equator to mean equator of date."""
    T = float(t_tt) / 86400.0 / 36525.0
    zeta = (2306.2181 * T + 0.30188 * T**2 + 0.017998 * T**3) * _AS2R
    z = (2306.2181 * T + 1.09468 * T**2 + 0.018203 * T**3) * _AS2R
    theta = (2004.3109 * T - 0.42665 * T**2 - 0.041833 * T**3) * _AS2R
    return _rot3(-z) @ _rot2(theta) @ _rot3(-zeta)


def gmst(t_tt) -> float:
    """IAU-1982 Greenwich mean sidereal time in radians."""
    du = (float(t_tt) - TT_MINUS_UT1) / 86400.0
    T = du / 36525.0
    sec = 67310.54841 + (876600.0 * 3600.0 + 8640184.812866) * T + 0.093104 * T**2 - 6.2e-6 * T**3
    return float(np.mod(sec * (2.0 * np.pi / 86400.0), 2.0 * np.pi))


def eci_to_ecef_matrix(t_tt: float) -> np.ndarray:
    return _rot3(gmst(t_tt)) @ precession_matrix(t_tt)


def ecef_to_geodetic(r_ecef) -> tuple[float, float, float]:
    """WGS-84 geodetic latitude/longitude (deg) and height (km)."""
    x, y, z = (float(v) for v in r_ecef)
    lon = np.arctan2(y, x)
    p = np.hypot(x, y)
    lat = np.arctan2(z, p * (1.0 - WGS84_E2))
    h = 0.0
    for _ in range(30):
        sl = np.sin(lat)
        n = R_EARTH / np.sqrt(1.0 - WGS84_E2 * sl * sl)
        if abs(np.cos(lat)) > 1e-12:
            h = p / np.cos(lat) - n
        else:
            h = abs(z) - n * (1.0 - WGS84_E2)
        new = np.arctan2(z, p * (1.0 - WGS84_E2 * n / (n + h)))
        if abs(new - lat) < 1e-15:
            lat = new
            break
        lat = new
    lon_deg = np.degrees(lon)
    if lon_deg <= -180.0:
        lon_deg += 360.0
    return float(np.degrees(lat)), float(lon_deg), float(h)


def geodetic_to_ecef(lat_deg: float, lon_deg: float, h_km: float = 0.0) -> np.ndarray:
    lat, lon = np.radians(lat_deg), np.radians(lon_deg)
    sl = np.sin(lat)
    n = R_EARTH / np.sqrt(1.0 - WGS84_E2 * sl * sl)
    return np.array([
        (n + h_km) * np.cos(lat) * np.cos(lon),
        (n + h_km) * np.cos(lat) * np.sin(lon),
        (n * (1.0 - WGS84_E2) + h_km) * sl,
    ])


def wrap_deg(a):
    """Wrap angle(s) to (-180, 180]."""
    w = -np.mod(-np.asarray(a, dtype=float) + 180.0, 360.0) + 180.0
    return w if np.ndim(w) else float(w)


def rtn_matrix(r, v) -> np.ndarray:
    """Columns are the radial, transverse and normal unit vectors in ECI."""
    r = np.asarray(r, dtype=float)
    v = np.asarray(v, dtype=float)
    h = np.cross(r, v)
    hn = np.linalg.norm(h)
    if not hn > 1e-12 * np.linalg.norm(r) * max(np.linalg.norm(v), 1e-300):
        raise ValueError("degenerate state: angular momentum is zero, RTN undefined")
    rhat = r / np.linalg.norm(r)
    nhat = h / hn
    that = np.cross(nhat, rhat)
    return np.column_stack([rhat, that, nhat])


def elements_to_state(a, e, i_deg, argp_deg, raan_deg, nu_deg, mu=MU_EARTH):
    """Classical osculating elements -> ECI position (km) and velocity (km/s)."""
    i, w, om, nu = np.radians([i_deg, argp_deg, raan_deg, nu_deg])
    p = a * (1.0 - e * e)
    rmag = p / (1.0 + e * np.cos(nu))
    r_pf = rmag * np.array([np.cos(nu), np.sin(nu), 0.0])
    v_pf = np.sqrt(mu / p) * np.array([-np.sin(nu), e + np.cos(nu), 0.0])
    co, so = np.cos(om), np.sin(om)
    ci, si = np.cos(i), np.sin(i)
    cw, sw = np.cos(w), np.sin(w)
    rot = np.array([
        [co * cw - so * sw * ci, -co * sw - so * cw * ci, so * si],
        [so * cw + co * sw * ci, -so * sw + co * cw * ci, -co * si],
        [sw * si, cw * si, ci],
    ])
    return rot @ r_pf, rot @ v_pf


def state_to_elements(r, v, mu=MU_EARTH):
    """Inverse of elements_to_state for non-circular, inclined orbits (tests only)."""
    r = np.asarray(r, float)
    v = np.asarray(v, float)
    rn, vn = np.linalg.norm(r), np.linalg.norm(v)
    h = np.cross(r, v)
    nvec = np.cross([0.0, 0.0, 1.0], h)
    evec = ((vn**2 - mu / rn) * r - np.dot(r, v) * v) / mu
    e = np.linalg.norm(evec)
    a = 1.0 / (2.0 / rn - vn**2 / mu)
    i = np.degrees(np.arccos(h[2] / np.linalg.norm(h)))
    raan = np.degrees(np.arctan2(nvec[1], nvec[0]))
    hh = h / np.linalg.norm(h)
    argp = np.degrees(np.arctan2(np.dot(np.cross(nvec, evec), hh), np.dot(nvec, evec))) % 360.0
    nu = np.degrees(np.arctan2(np.dot(np.cross(evec, r), hh), np.dot(evec, r))) % 360.0
    return a, e, i, argp, raan, nu
