"""STIRAP trajectory at the reference pulse timing plus the (Lambda, sigma) transfer map."""

import numpy as np

from nvraman.experiment import Protocol
from nvraman.sweep import StirapMap, SweepSpec, connected_region, nearest_index, run_sweep

from _common import manifest, parser


def main():
    p = parser(__doc__, "stirap_plateau")
    p.add_argument("--points", type=int, default=21)
    args = p.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    pr = Protocol(scheme="stirap")
    res = pr.scan(np.linspace(0, pr.raman_length, 401))
    path = args.out / "stirap_trajectory.csv"
    res.to_csv(path)
    manifest(path, script=__file__, protocol=pr.to_dict())
    print(f"trajectory: final P+1={res.populations[-1, 2]:.6f}, max P0={res.populations[:, 1].max():.4f}")

    lam, sig = np.linspace(0, 3, args.points), np.linspace(0.2, 1.5, args.points)
    spec = SweepSpec(StirapMap(tuple(lam), tuple(sig)), pr, audit=True)
    g = run_sweep(spec, jobs=args.jobs)
    g.write(args.out / "stirap_map.csv")
    region = connected_region(g.state(1) > 0.9, (nearest_index(lam, 1.2), nearest_index(sig, 0.85)))
    print(f"map: plateau through (1.2, 0.85) covers {region.mean():.1%} of cells, audit passed: {g.audit_passed}")


if __name__ == "__main__":
    main()
