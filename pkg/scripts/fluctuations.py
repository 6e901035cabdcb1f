"""SRT transfer under temperature drift and NV displacement in the field gradient.

Also prints the common-mode versus differential detuning comparison at
matched per-tone offsets.
"""

import numpy as np

from nvraman.experiment import Protocol
from nvraman.sweep import FluctuationCurve, SweepSpec, run_sweep

from _common import parser


def main():
    args = parser(__doc__, "fluctuations").parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    tau = tuple(np.linspace(0, 6, 241))
    base = Protocol(raman_detuning=5.0, tau=6.0)
    for variable, values in (("dT", (0.0, 5.0, 10.0)), ("dz", (0.0, 5.0, 10.0))):
        g = run_sweep(SweepSpec(FluctuationCurve(variable, values, tau), base), jobs=args.jobs)
        g.write(args.out / f"srt_{variable}.csv")
        for v, m in zip(values, g.maxima[:, 2]):
            print(f"{variable}={v:g}: max P+1={m:.3f}")
    for dm, dp in ((0.5, 0.5), (0.3, 0.3), (-0.3, 0.3), (0.3, -0.3)):
        pr = Protocol(raman_detuning=5.0, detuning_minus=dm, detuning_plus=dp, tau=6.0)
        print(f"delta_-={dm:+g} delta_+={dp:+g}: max P+1={pr.scan(tau).populations[:, 2].max():.3f}")


if __name__ == "__main__":
    main()
