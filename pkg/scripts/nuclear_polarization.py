"""SRT dynamics with a polarized versus an unpolarized 15N nuclear spin."""

import numpy as np

from nvraman.experiment import Protocol

from _common import manifest, parser


def main():
    args = parser(__doc__, "nuclear_polarization").parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    tau = np.linspace(0, 6, 241)
    for nuclear in ("polarized_plus", "unpolarized"):
        pr = Protocol(raman_detuning=5.0, tau=6.0, nuclear=nuclear)
        res = pr.scan(tau)
        path = args.out / f"srt_{nuclear}.csv"
        res.to_csv(path)
        manifest(path, script=__file__, protocol=pr.to_dict())
        print(f"{nuclear}: max P+1={res.populations[:, 2].max():.3f}")


if __name__ == "__main__":
    main()
