"""Final P(+1) over per-tone detuning errors for STIRAP and for SRT at Delta = 5 MHz."""

import numpy as np

from nvraman.experiment import Protocol
from nvraman.sweep import DetuningMap, SweepSpec, robust_area, run_sweep

from _common import parser


def main():
    p = parser(__doc__, "robustness")
    p.add_argument("--threshold", type=float, default=0.8)
    args = p.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    grid = tuple(np.linspace(-1, 1, 21))
    for name, base in (("stirap", Protocol(scheme="stirap")), ("srt", Protocol(raman_detuning=5.0))):
        g = run_sweep(SweepSpec(DetuningMap(grid, grid), base, audit=True), jobs=args.jobs)
        g.write(args.out / f"{name}_detuning_map.csv")
        print(f"{name}: robust area at {args.threshold:g} = {robust_area(g, 1, args.threshold):.3f}, "
              f"audit passed: {g.audit_passed}")


if __name__ == "__main__":
    main()
