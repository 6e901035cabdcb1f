"""SRT population dynamics versus Raman block length for several detunings.

Writes one CSV per detuning; ``--lab`` repeats each run in the lab frame.
"""

import numpy as np

from nvraman.experiment import Protocol

from _common import manifest, parser


def main():
    p = parser(__doc__, "srt_dynamics")
    p.add_argument("--lab", action="store_true", help="also integrate in the lab frame")
    args = p.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    tau = np.linspace(0, 12, 241)
    frames = ("rwa", "lab") if args.lab else ("rwa",)
    for Delta in (0.0, 2.0, 5.0, 8.0):
        for frame in frames:
            pr = Protocol(raman_detuning=Delta, tau=12.0, frame=frame)
            res = pr.scan(tau)
            path = args.out / f"srt_D{Delta:g}_{frame}.csv"
            res.to_csv(path)
            manifest(path, script=__file__, protocol=pr.to_dict())
            print(f"Delta={Delta:g} MHz [{frame}]: max P0={res.populations[:, 1].max():.3f} "
                  f"max P+1={res.populations[:, 2].max():.3f}")


if __name__ == "__main__":
    main()
