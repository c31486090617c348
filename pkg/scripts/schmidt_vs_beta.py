"""Schmidt number of the complex JSA and of its modulus as the pump GDD grows."""
import argparse

import numpy as np

from jsamode.analysis import g2_predicted, schmidt
from jsamode.forward import SourceModel, build_jsa, source_grids


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--max-beta", type=float, default=6e5, help="largest pump GDD (fs^2)")
    ap.add_argument("--steps", type=int, default=13)
    ap.add_argument("--bins", type=int, default=128)
    args = ap.parse_args()

    print(f"{'beta_fs2':>10}{'K':>9}{'K_abs':>9}{'g2':>8}")
    for beta in np.linspace(0, args.max_beta, args.steps):
        model = SourceModel.separable(1.6e-3, pump_gdd=beta)
        g1, g2 = source_grids(model, args.bins, 9.3e-3)
        jsa = build_jsa(model, g1, g2)
        k, k_abs = schmidt(jsa).K, schmidt(jsa.abs()).K
        print(f"{beta:>10.0f}{k:>9.4f}{k_abs:>9.4f}{g2_predicted(k):>8.4f}")


if __name__ == "__main__":
    main()
