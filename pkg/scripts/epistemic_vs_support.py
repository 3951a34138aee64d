"""How epistemic and aleatoric entropy shrink with class support.

Two unit-covariance classes at (-2, 0) and (2, 0) with equal priors; for each
per-class count the parameter posterior is sampled and both uncertainties are
averaged over seeds at points along the line between the means.

    python scripts/epistemic_vs_support.py --counts 20 100 1000 10000
"""

import argparse

import numpy as np

from gmu.ensemble import build_posterior, ensemble_scores, sample_ensemble
from gmu.gmm import model_from_params


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--counts", type=int, nargs="+", default=[20, 100, 1000, 10_000])
    ap.add_argument("--offsets", type=float, nargs="+", default=[0.0, 0.1, 0.25, 0.5, 1.0])
    ap.add_argument("--ensemble-size", type=int, default=200)
    ap.add_argument("--seeds", type=int, default=10)
    args = ap.parse_args()

    pts = np.array([[x, 0.0] for x in args.offsets])
    print("n_c,offset,epistemic,aleatoric")
    for n in args.counts:
        model = model_from_params([[-2.0, 0.0], [2.0, 0.0]], [np.eye(2)] * 2, [0.5, 0.5], counts=[n, n])
        post = build_posterior(model)
        ep = np.zeros(len(pts))
        al = np.zeros(len(pts))
        for s in range(args.seeds):
            sc = ensemble_scores(sample_ensemble(post, args.ensemble_size, seed=s), pts)
            ep += sc.epistemic
            al += sc.aleatoric
        for x, e, a in zip(args.offsets, ep / args.seeds, al / args.seeds):
            print(f"{n},{x:g},{e:.4f},{a:.4f}")


if __name__ == "__main__":
    main()
