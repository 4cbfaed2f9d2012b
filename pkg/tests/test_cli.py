import csv
import json
import re
from importlib import resources

import numpy as np
import pytest
import yaml

from longcam import bundled_scenarios, load_scenario
from longcam.cli import main
from longcam.scenario import ScenarioError, parse_scenario


def bundled_text(name: str) -> str:
    return (resources.files("longcam") / "data" / f"{name}.yaml").read_text()


def modified(tmp_path, name, **sections):
    d = yaml.safe_load(bundled_text(name))
    for sec, vals in sections.items():
        d.setdefault(sec, {}).update(vals)
    p = tmp_path / f"{name}_mod.yaml"
    p.write_text(yaml.safe_dump(d))
    return p


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float)


# ---------------------------------------------------------------- scenarios

def test_bundled_fixtures_present():
    assert {"leo_base", "leo_1orbit", "geo_base", "zero_threat"} <= set(bundled_scenarios())


def test_leo_base_values():
    s = load_scenario("leo_base")
    assert (s.primary.elements[0], s.secondary.elements[0]) == (6800.0, 6802.0)
    assert s.secondary.elements[5] == -1.9103
    assert (s.primary.params.hbr, s.secondary.params.hbr) == (25.0, 7.0)
    assert s.N == 120
    assert s.thresholds == dict(ipc=1e-6, max_ipc=1e-4, miss_km=2.0)
    assert s.u_max == pytest.approx(5e-6)


def test_geo_base_values():
    s = load_scenario("geo_base")
    assert (s.primary.elements[0], s.secondary.elements[0]) == (42166.03, 42167.76)
    assert s.primary.elements[2] == s.secondary.elements[2] == 0.119
    assert (s.primary.params.hbr, s.secondary.params.hbr) == (35.0, 10.0)


def test_loading_is_deterministic():
    a, b = load_scenario("geo_base"), load_scenario("geo_base")
    assert a.echo() == b.echo()


def test_empty_file_is_schema_error(tmp_path):
    p = tmp_path / "empty.yaml"
    p.write_text("")
    with pytest.raises(ScenarioError):
        load_scenario(p)
    assert main(["solve", str(p)]) == 1


def test_unknown_key_rejected():
    text = bundled_text("zero_threat") + "bogus: 1\n"
    with pytest.raises(ScenarioError, match="bogus"):
        parse_scenario(text)


def test_unit_suffix_mismatch_reported_with_line():
    text = bundled_text("zero_threat").replace("a_km: 6800.0", "a_m: 6800000.0", 1)
    with pytest.raises(ScenarioError, match="unit") as ei:
        parse_scenario(text)
    assert ei.value.line is not None


def test_missing_file_and_bad_subcommand(tmp_path):
    assert main(["solve", str(tmp_path / "nope.yaml")]) == 1
    assert main(["frobnicate"]) == 1
    assert main([]) == 1


# --------------------------------------------------------------------- cli

def test_solve_zero_threat(tmp_path):
    out = tmp_path / "out"
    assert main(["solve", "zero_threat", "--out", str(out)]) == 0
    header, data = read_csv(out / "nodes.csv")
    spec = load_scenario("zero_threat")
    assert data.shape[0] == spec.N + 1
    assert all(re.fullmatch(r"[\w]+\[[^\]]+\]", h) or h == "node" for h in header)
    plan = json.loads((out / "plan.json").read_text())
    assert plan["dv_total_mm_s"] == 0.0
    assert plan["valid"] is True
    assert (out / "report.txt").read_text().startswith("scenario")


def test_solve_is_byte_identical(tmp_path):
    for k in ("a", "b"):
        assert main(["solve", "zero_threat", "--out", str(tmp_path / k)]) == 0
    for f in ("nodes.csv", "plan.json", "report.txt"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_validate_round_trip(tmp_path):
    assert main(["solve", "zero_threat", "--out", str(tmp_path)]) == 0
    assert main(["validate", "zero_threat", str(tmp_path / "plan.json")]) == 0
    # a plan for a different grid is a usage error
    assert main(["validate", "leo_base", str(tmp_path / "plan.json")]) == 1


def test_not_converged_exits_2(tmp_path):
    p = modified(tmp_path, "leo_1orbit", solver={"j_max": 1})
    assert main(["solve", str(p), "--out", str(tmp_path / "o")]) == 2


def test_metrics_identity_covariance(tmp_path):
    assert main(["metrics", "leo_base", "--identity-cov", "--out", str(tmp_path)]) == 0
    header, data = read_csv(tmp_path / "metrics.csv")
    assert data.shape[0] == load_scenario("leo_base").N + 1
    col = {h: i for i, h in enumerate(header)}
    np.testing.assert_allclose(data[:, col["d_m2[-]"]], data[:, col["d_miss[km]"]] ** 2, rtol=1e-12)


def test_metrics_max_ipc_envelops_ipc(tmp_path):
    assert main(["metrics", "leo_base", "--out", str(tmp_path)]) == 0
    header, data = read_csv(tmp_path / "metrics.csv")
    col = {h: i for i, h in enumerate(header)}
    assert np.all(data[:, col["P_IC_max[-]"]] >= data[:, col["P_IC[-]"]])


@pytest.mark.xfail(strict=True, reason="ballistic GEO minimum is 2.3 km under the repo force model")
def test_geo_ballistic_miss_below_threshold(tmp_path):
    assert main(["metrics", "geo_base", "--out", str(tmp_path)]) == 0
    header, data = read_csv(tmp_path / "metrics.csv")
    assert data[:, header.index("d_miss[km]")].min() < 2.0


def test_sk_target_geo(tmp_path):
    assert main(["sk-target", "geo_base", "--out", str(tmp_path)]) == 0
    header, data = read_csv(tmp_path / "coast.csv")
    assert header == ["node", "epoch[s_TT]", "lat[deg]", "lon[deg]"]
    spec = load_scenario("geo_base")
    assert data.shape[0] == round(14 * spec.sk.nodes_per_day) + 1
    assert np.all(np.abs(data[:, 2] - spec.sk.phi0[0]) <= 0.05)
    assert np.all(np.abs(data[:, 3] - spec.sk.phi0[1]) <= 0.05)
    tgt = json.loads((tmp_path / "target.json").read_text())
    assert tgt["violation_deg_node"] == 0.0


def test_sk_target_shifted_box_exits_2(tmp_path):
    p = modified(tmp_path, "geo_base", station_keeping={"lat0_deg": 0.2})
    assert main(["sk-target", str(p), "--days", "7", "--out", str(tmp_path / "o")]) == 2
    tgt = json.loads((tmp_path / "o" / "target.json").read_text())
    assert tgt["violation_deg_node"] > 0
