"""Table of lambda * n^2 for percolation clusters and for the full box."""

import argparse
import math

import numpy as np

from perciso.cluster import origin_box_cluster
from perciso.errors import EmptyClusterError
from perciso.percolation import Model, sample_configuration
from perciso.spectral import build_walk_matrix, full_box_gap, spectral_gap


def scaled_gaps(model, p, n, seeds):
    out = []
    for s in seeds:
        try:
            c = origin_box_cluster(sample_configuration(model, n, p, s), n)
        except EmptyClusterError:
            continue
        if c.size > 1:
            out.append(spectral_gap(build_walk_matrix(c)).gap * n * n)
    return np.array(out)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--ns", default="8,16,32,64")
    ap.add_argument("--seeds", type=int, default=20)
    args = ap.parse_args()
    ns = [int(x) for x in args.ns.split(",")]
    print(f"{'model':8s} {'p':>5s} {'n':>4s} {'min':>8s} {'median':>8s} {'max':>8s}")
    for model, p in ((Model.site2d(), 0.7), (Model.bond(2), 0.6)):
        for n in ns:
            v = scaled_gaps(model, p, n, range(args.seeds))
            print(f"{str(model):8s} {p:5.2f} {n:4d} {v.min():8.4f} {np.median(v):8.4f} {v.max():8.4f}")
    print("\nfull box (d=2):  n   lambda n^2   pi^2/16   pi^2/8")
    for n in ns:
        print(f"{n:17d} {full_box_gap(n, 2) * n * n:12.5f} {math.pi**2 / 16:9.5f} {math.pi**2 / 8:8.5f}")


if __name__ == "__main__":
    main()
