"""Size of each term in the upper-bound assembly as t grows (d=2)."""

import argparse

from perciso.walk import upper_bound_assembly


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--b", type=float, default=0.09)
    ap.add_argument("--beta", type=float, default=1.0)
    args = ap.parse_args()
    print(f"{'t':>8s} {'n':>10s} {'C':>10s} {'exit':>8s} {'box':>10s}")
    for t in (1e4, 1e5, 1e6, 1e7, 1e8):
        r = upper_bound_assembly(2, t, args.b, args.beta)
        print(f"{t:8.0e} {r['n']:10.1f} {r['C']:10.3f} {r['ratios']['exit']:8.4f} "
              f"{r['ratios']['box']:10.3e}")


if __name__ == "__main__":
    main()
