"""GEO conjunction with and without the station-keeping box, plus a 14-day coast check."""
import argparse

import numpy as np

from longcam import build, load_scenario
from longcam.dynamics import EpochState
from longcam.scp import ScpConfig, run
from longcam.sk import coast_latlon


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scenario", default="geo_base")
    ap.add_argument("--days", type=float, default=14.0)
    args = ap.parse_args()
    conj = build(load_scenario(args.scenario))
    spec = conj.spec
    for sk in (True, False):
        cfg = ScpConfig.from_scenario(spec, conj.dt, sk=sk)
        plan = run(conj, cfg)
        xf = EpochState.from_vector(conj.epochs[-1], plan.validation.states[-1])
        _, ll = coast_latlon(xf, args.days, 1800.0, spec.primary.params, spec.forces)
        dev = np.max(np.abs(cfg.box.unwrap(ll) - np.asarray(cfg.box.phi0)), axis=0)
        print(f"sk={sk!s:<5} dv {plan.dv_total:8.2f} mm/s  n_maj {plan.n_maj}  "
              f"e {plan.validation.e_m:.2e} m  coast max |dlat| {dev[0]:.3f} |dlon| {dev[1]:.3f} deg")


if __name__ == "__main__":
    main()
