"""Discrete Korn constant across thicknesses, with a grid-doubling check at the thinnest one.

    python scripts/korn_sweep.py --out runs/korn.csv
"""

import argparse
import math

from thinplate.fields import GridSpec
from thinplate.korn import korn_constant, korn_sweep


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--h", type=float, nargs="+", default=[1, 0.5, 0.25, 0.125, 0.0625, 0.03125])
    p.add_argument("--n-tan", type=int, default=64)
    p.add_argument("--n-thick", type=int, default=33)
    p.add_argument("--out", default="korn.csv")
    a = p.parse_args()
    res = korn_sweep(a.h, a.d, a.n_tan, a.n_thick, csv_path=a.out)
    for r in res:
        print(f"h={r.h:<10g} C={r.constant:.6f} mode={r.mode} residual={r.residual:.1e}")
    C = [r.constant for r in res]
    print(f"max/min = {max(C) / min(C):.4f}")
    h = min(a.h)
    fine = korn_constant(GridSpec(a.d, math.pi, 2 * a.n_tan, 2 * (a.n_thick - 1) + 1, h), keep_vector=False)
    print(f"doubled grid at h={h}: C={fine.constant:.6f}")


if __name__ == "__main__":
    main()
