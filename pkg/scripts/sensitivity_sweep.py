"""Total delta-v of the one-orbit LEO case as the sensitivity bound rho tightens."""
import argparse

from longcam import build, load_scenario
from longcam.scp import ScpConfig, run


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scenario", default="leo_1orbit")
    ap.add_argument("--rho", type=float, nargs="+", default=[0.4, 0.3, 0.2, 0.1])
    args = ap.parse_args()
    conj = build(load_scenario(args.scenario))
    free = run(conj, ScpConfig.from_scenario(conj.spec, conj.dt, metric="IPC"))
    print(f"unconstrained  dv {free.dv_total:8.2f} mm/s")
    for rho in args.rho:
        plan = run(conj, ScpConfig.from_scenario(conj.spec, conj.dt, metric="IPC", rho=rho))
        active = [i for i, nd in enumerate(plan.lin) if nd.gamma is not None]
        print(f"rho={rho:<5}     dv {plan.dv_total:8.2f} mm/s  n_maj {plan.n_maj}  "
              f"constrained nodes {active}")


if __name__ == "__main__":
    main()
