"""Recovered correlated chirp versus event count for the chirped heralded source."""
import argparse

import numpy as np

from jsamode.analysis import UnwrapError, fit_chirp, overlap
from jsamode.core import gaussian_mode
from jsamode.forward import (DetectorModel, SourceModel, apply_detector_blur, build_jsa,
                             expected_heralded_histogram, sample_counts, source_grids)
from jsamode.reconstruction import reconstruct_heralded


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--beta", type=float, default=2e5, help="pump GDD (fs^2)")
    ap.add_argument("--bins", type=int, default=128)
    ap.add_argument("--tau", type=float, default=1e4)
    ap.add_argument("--events", type=float, nargs="+", default=[3e4, 1e5, 3.6e5, 1e6])
    ap.add_argument("--seeds", type=int, default=3)
    args = ap.parse_args()

    model = SourceModel.separable(1.6e-3, pump_gdd=args.beta)
    g1, g2 = source_grids(model, args.bins, 9.3e-3)
    jsa = build_jsa(model, g1, g2)
    ra = gaussian_mode(g1, 3e-3).scaled(np.sqrt(0.0125))
    rb = gaussian_mode(g2, 3e-3).scaled(np.sqrt(0.0125))
    det = DetectorModel()
    ha = apply_detector_blur(expected_heralded_histogram(jsa, ra, args.tau), det)
    hb = apply_detector_blur(expected_heralded_histogram(jsa.transpose(), rb, args.tau), det)
    print(f"{'events':>10}{'seed':>6}{'beta_hat':>12}{'rel_err':>9}{'overlap':>9}")
    for n in args.events:
        for s in range(args.seeds):
            sa = sample_counts(ha, int(n), 2 * s)
            sb = sample_counts(hb, int(n), 2 * s + 1)
            rec, _ = reconstruct_heralded(sa, ra, sb, rb, args.tau)
            try:
                b = fit_chirp(rec).beta
                err = f"{b / args.beta - 1:+9.3f}"
                b = f"{b:12.0f}"
            except UnwrapError:
                b, err = f"{'n/a':>12}", f"{'':>9}"
            print(f"{int(n):>10}{s:>6}{b}{err}{overlap(rec, jsa):9.4f}")


if __name__ == "__main__":
    main()
