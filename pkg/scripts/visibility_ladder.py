"""Fringe visibility for single-photon, coherent and thermal signals, closed form and Monte Carlo."""
import argparse

import numpy as np

from jsamode.analysis import fringe_visibility
from jsamode.core import Interferogram, gaussian_mode, make_grid
from jsamode.forward import Coherent, SinglePhoton, Thermal, expected_interferogram, monte_carlo_interferogram


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--bins", type=int, default=128)
    ap.add_argument("--tau", type=float, default=1e4, help="reference delay (fs)")
    ap.add_argument("--width", type=float, default=3e-3, help="mode width (rad/fs)")
    ap.add_argument("--shots", type=int, default=100_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=4)
    args = ap.parse_args()

    grid = make_grid(1.2153, 9.3e-3, args.bins)
    psi = gaussian_mode(grid, args.width)
    n_ref = 0.0125
    v = fringe_visibility(expected_interferogram(psi, psi.scaled(np.sqrt(n_ref)), args.tau, SinglePhoton()))
    print(f"{'statistics':<14}{'closed form':>12}{'monte carlo':>13}")
    print(f"{'single':<14}{v:>12.4f}{'-':>13}")
    for name, stats in (("coherent", Coherent(1.0)), ("thermal", Thermal(1.0))):
        v = fringe_visibility(expected_interferogram(psi, psi, args.tau, stats))
        mean, _ = monte_carlo_interferogram(psi, psi, args.tau, stats, args.shots, args.seed,
                                            workers=args.workers)
        v_mc = fringe_visibility(Interferogram(grid, grid, mean), args.tau)
        print(f"{name:<14}{v:>12.4f}{v_mc:>13.4f}")


if __name__ == "__main__":
    main()
