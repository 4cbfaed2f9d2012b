"""Scenario files: YAML with unit suffixes in the key names.

Validation reports the offending line and key.  Unknown keys are rejected,
and a known quantity given with the wrong unit suffix (``a_m`` for ``a_km``)
is reported as a unit error.
"""
from __future__ import annotations

import copy
import io
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from .forces import ForceModelConfig, SpacecraftParams
from .risk import MetricKind, RiskMetricSpec


class ScenarioError(ValueError):
    def __init__(self, msg: str, line: Optional[int] = None, key: Optional[str] = None):
        self.line, self.key = line, key
        loc = []
        if line is not None:
            loc.append(f"line {line}")
        if key is not None:
            loc.append(f"field '{key}'")
        super().__init__((", ".join(loc) + ": " if loc else "") + msg)


# key -> (type, default); default REQUIRED means mandatory
REQUIRED = object()

_ORBIT = {
    "a_km": (float, REQUIRED), "e": (float, REQUIRED), "i_deg": (float, REQUIRED),
    "argp_deg": (float, REQUIRED), "raan_deg": (float, REQUIRED), "theta_deg": (float, REQUIRED),
    "mass_kg": (float, REQUIRED), "drag_area_m2": (float, 0.0), "cd": (float, 2.2),
    "srp_area_m2": (float, 0.0), "cr": (float, 1.0), "hbr_m": (float, REQUIRED),
    "cov_rtn_diag_m2_m2ps2": (list, REQUIRED),
}
SCHEMA: dict[str, Any] = {
    "name": (str, "scenario"),
    "tca_epoch_tt_s": (float, REQUIRED),
    "window": {
        "orbits_before": (int, 1), "orbits_after": (int, 1), "nodes_per_orbit": (int, 60),
        "covariance_at": (str, "tca"),
    },
    "primary": _ORBIT,
    "secondary": _ORBIT,
    "forces": {
        "zonal_degree": (int, 2), "drag": (bool, False), "srp": (bool, False),
        "third_body": (bool, False), "density_base_kg_m3": (float, 3.725e-12),
        "density_ref_alt_km": (float, 400.0), "density_scale_height_km": (float, 58.515),
    },
    "metric": {
        "kind": (str, "IPC"), "ipc_threshold": (float, 1e-6), "max_ipc_threshold": (float, 1e-4),
        "miss_distance_km": (float, 2.0),
    },
    "solver": {
        "u_max_mm_s2": (float, 5.0), "trust_nu_bar": (float, 1e-3), "tol_major": (float, 1e-3),
        "tol_minor_km": (float, 1e-6), "j_max": (int, 10), "k_max": (int, 10),
        "kappa_vc": (float, 1e4), "kappa_t": (float, 1e2), "vc_tol": (float, 1e-7),
    },
    "sensitivity": {
        "enabled": (bool, False), "rho": (float, 0.4), "epsilon": (float, 0.01),
        "delta_r_m": (float, 0.0),
    },
    "station_keeping": {
        "box": (bool, False), "return_to_orbit": (bool, False), "target": (bool, False),
        "lat0_deg": (float, 0.0), "lon0_deg": (float, 0.0), "half_lat_deg": (float, 0.05),
        "half_lon_deg": (float, 0.05), "target_days": (float, 14.0), "nodes_per_day": (int, 4),
        "target_margin": (float, 0.8),
    },
}
_UNIT_TOKENS = {"km", "m", "deg", "rad", "s", "kg", "m2", "m3", "mm", "s2", "kg_m3", "m2_m2ps2",
                "mm_s2", "m_s2", "km_s2", "tt_s", "day", "days", "ps2"}


def _base(key: str) -> str:
    parts = key.split("_")
    while len(parts) > 1 and parts[-1] in _UNIT_TOKENS:
        parts.pop()
    return "_".join(parts)


def _convert(node: yaml.Node, typ, key: str):
    line = node.start_mark.line + 1
    if typ is list:
        if not isinstance(node, yaml.SequenceNode):
            raise ScenarioError("expected a list", line, key)
        return [_convert(n, float, key) for n in node.value]
    if not isinstance(node, yaml.ScalarNode):
        raise ScenarioError("expected a scalar", line, key)
    raw = node.value
    try:
        if typ is bool:
            v = yaml.safe_load(raw)
            if not isinstance(v, bool):
                raise ValueError
            return v
        if typ is int:
            v = yaml.safe_load(raw)
            if isinstance(v, bool) or not isinstance(v, int):
                raise ValueError
            return v
        if typ is float:
            v = float(raw)
            if not np.isfinite(v):
                raise ValueError
            return v
        return str(raw)
    except ValueError:
        raise ScenarioError(f"cannot read {raw!r} as {typ.__name__}", line, key) from None


def _walk(node: yaml.Node, schema: dict, path: str) -> dict:
    if not isinstance(node, yaml.MappingNode):
        raise ScenarioError("expected a mapping", node.start_mark.line + 1, path or None)
    out: dict = {}
    seen = set()
    for kn, vn in node.value:
        key = kn.value
        full = f"{path}.{key}" if path else key
        line = kn.start_mark.line + 1
        if key in seen:
            raise ScenarioError("duplicate key", line, full)
        seen.add(key)
        if key not in schema:
            same = [k for k in schema if _base(k) == _base(key) and k != key]
            if same:
                raise ScenarioError(f"unit suffix mismatch, expected '{same[0]}'", line, full)
            raise ScenarioError("unknown key", line, full)
        spec = schema[key]
        if isinstance(spec, dict):
            out[key] = _walk(vn, spec, full)
        else:
            out[key] = _convert(vn, spec[0], full)
    for key, spec in schema.items():
        if key in out:
            continue
        full = f"{path}.{key}" if path else key
        if isinstance(spec, dict):
            out[key] = _walk(yaml.MappingNode("tag:yaml.org,2002:map", [],
                                              start_mark=node.start_mark), spec, full)
        elif spec[1] is REQUIRED:
            raise ScenarioError("missing required key", node.start_mark.line + 1, full)
        else:
            out[key] = copy.copy(spec[1])
    return out


@dataclass(frozen=True)
class ObjectSpec:
    elements: tuple          # a_km, e, i, argp, raan, theta (deg)
    params: SpacecraftParams
    cov_rtn_diag: tuple      # m^2 and m^2/s^2

    @property
    def cov_rtn_km(self) -> np.ndarray:
        d = np.asarray(self.cov_rtn_diag, float) * 1e-6
        return np.diag(d)


@dataclass(frozen=True)
class SkOptions:
    box: bool = False
    return_to_orbit: bool = False
    target: bool = False
    phi0: tuple = (0.0, 0.0)
    delta_phi: tuple = (0.05, 0.05)
    target_days: float = 14.0
    nodes_per_day: int = 4
    target_margin: float = 0.8


@dataclass(frozen=True)
class SensitivityOptions:
    rho: float
    epsilon: float
    delta_r_m: float


@dataclass
class ScenarioSpec:
    name: str
    tca_epoch: float
    orbits_before: int
    orbits_after: int
    nodes_per_orbit: int
    covariance_at: str
    primary: ObjectSpec
    secondary: ObjectSpec
    forces: ForceModelConfig
    metric_kind: MetricKind
    thresholds: dict
    u_max: float                     # km/s^2
    solver: dict
    sensitivity: Optional[SensitivityOptions]
    sk: SkOptions
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def combined_hbr(self) -> float:
        return self.primary.params.hbr + self.secondary.params.hbr

    def metric(self, kind=None) -> RiskMetricSpec:
        kind = MetricKind(kind or self.metric_kind)
        thr = {MetricKind.IPC: self.thresholds["ipc"], MetricKind.MAX_IPC: self.thresholds["max_ipc"],
               MetricKind.MISS_DISTANCE: self.thresholds["miss_km"]}[kind]
        return RiskMetricSpec(kind, thr, self.combined_hbr)

    @property
    def N(self) -> int:
        return (self.orbits_before + self.orbits_after) * self.nodes_per_orbit

    def echo(self) -> str:
        """Resolved scenario (defaults filled in) as YAML."""
        return yaml.safe_dump(self.raw, sort_keys=False, default_flow_style=None)


def _object(d: dict, key: str) -> ObjectSpec:
    cov = d["cov_rtn_diag_m2_m2ps2"]
    if len(cov) != 6 or min(cov) < 0:
        raise ScenarioError("need six nonnegative diagonal entries", None, f"{key}.cov_rtn_diag_m2_m2ps2")
    try:
        sc = SpacecraftParams(mass=d["mass_kg"], drag_area=d["drag_area_m2"], cd=d["cd"],
                              srp_area=d["srp_area_m2"], cr=d["cr"], hbr=d["hbr_m"])
    except ValueError as exc:
        raise ScenarioError(str(exc), None, key) from None
    if not (d["a_km"] > 0 and 0 <= d["e"] < 1):
        raise ScenarioError("need a_km > 0 and 0 <= e < 1", None, key)
    el = (d["a_km"], d["e"], d["i_deg"], d["argp_deg"], d["raan_deg"], d["theta_deg"])
    return ObjectSpec(el, sc, tuple(cov))


def parse_scenario(text: str, source: str = "<string>") -> ScenarioSpec:
    try:
        node = yaml.compose(io.StringIO(text))
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ScenarioError(f"YAML syntax error in {source}", mark.line + 1 if mark else None) from None
    if node is None:
        raise ScenarioError(f"empty scenario file {source}")
    d = _walk(node, SCHEMA, "")
    w, f, m, s, sk, sens = (d["window"], d["forces"], d["metric"], d["solver"],
                            d["station_keeping"], d["sensitivity"])
    if w["orbits_before"] < 0 or w["orbits_after"] < 0 or w["orbits_before"] + w["orbits_after"] < 1:
        raise ScenarioError("window must span at least one orbit", None, "window")
    if w["nodes_per_orbit"] < 2:
        raise ScenarioError("need at least 2 nodes per orbit", None, "window.nodes_per_orbit")
    if w["covariance_at"] not in ("tca", "start"):
        raise ScenarioError("must be 'tca' or 'start'", None, "window.covariance_at")
    try:
        kind = MetricKind(m["kind"])
    except ValueError:
        raise ScenarioError(f"unknown metric {m['kind']!r}", None, "metric.kind") from None
    try:
        forces = ForceModelConfig(zonal_degree=f["zonal_degree"], drag_enabled=f["drag"],
                                  srp_enabled=f["srp"], third_body_enabled=f["third_body"],
                                  density_base=f["density_base_kg_m3"],
                                  density_ref_alt=f["density_ref_alt_km"],
                                  density_scale_height=f["density_scale_height_km"])
    except ValueError as exc:
        raise ScenarioError(str(exc), None, "forces") from None
    for k in ("u_max_mm_s2", "trust_nu_bar", "tol_major", "tol_minor_km", "kappa_vc", "kappa_t"):
        if not s[k] > 0:
            raise ScenarioError("must be positive", None, f"solver.{k}")
    if s["j_max"] < 1 or s["k_max"] < 1:
        raise ScenarioError("iteration limits must be >= 1", None, "solver")
    sens_opt = None
    if sens["enabled"]:
        if not (0 < sens["rho"] <= 1 and 0 <= sens["epsilon"] <= 1):
            raise ScenarioError("need 0 < rho <= 1 and 0 <= epsilon <= 1", None, "sensitivity")
        sens_opt = SensitivityOptions(sens["rho"], sens["epsilon"], sens["delta_r_m"])
    if sk["half_lat_deg"] <= 0 or sk["half_lon_deg"] <= 0:
        raise ScenarioError("box half widths must be positive", None, "station_keeping")
    sko = SkOptions(sk["box"], sk["return_to_orbit"], sk["target"], (sk["lat0_deg"], sk["lon0_deg"]),
                    (sk["half_lat_deg"], sk["half_lon_deg"]), sk["target_days"], sk["nodes_per_day"],
                    sk["target_margin"])
    thr = dict(ipc=m["ipc_threshold"], max_ipc=m["max_ipc_threshold"], miss_km=m["miss_distance_km"])
    spec = ScenarioSpec(
        name=d["name"], tca_epoch=d["tca_epoch_tt_s"], orbits_before=w["orbits_before"],
        orbits_after=w["orbits_after"], nodes_per_orbit=w["nodes_per_orbit"],
        covariance_at=w["covariance_at"], primary=_object(d["primary"], "primary"),
        secondary=_object(d["secondary"], "secondary"), forces=forces, metric_kind=kind,
        thresholds=thr, u_max=s["u_max_mm_s2"] * 1e-6, solver=dict(s), sensitivity=sens_opt,
        sk=sko, raw=d)
    spec.metric()        # threshold sanity
    return spec


def load_scenario(path) -> ScenarioSpec:
    """Load a scenario from a path or a bundled name (leo_base, geo_base, ...)."""
    p = Path(path)
    if not p.exists() and not p.suffix:
        ref = resources.files("longcam") / "data" / f"{path}.yaml"
        if ref.is_file():
            return parse_scenario(ref.read_text(), str(path))
    if not p.exists():
        raise ScenarioError(f"scenario file not found: {path}")
    return parse_scenario(p.read_text(), str(p))


def bundled_scenarios() -> list[str]:
    d = resources.files("longcam") / "data"
    return sorted(f.name[:-5] for f in d.iterdir() if f.name.endswith(".yaml"))
