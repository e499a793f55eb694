"""Sweep h for the default single-mode experiment and report fitted rates.

    python scripts/convergence.py --theta 0.5 --out runs/converge_half
"""

import argparse
import sys

from thinplate.asymptotics import ConvergenceConfig, convergence_study


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--theta", type=float, default=0.5)
    p.add_argument("--h", type=float, nargs="+", default=[0.25, 0.125, 0.0625, 0.03125, 0.015625])
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--n-tan", type=int, default=16)
    p.add_argument("--n-thick", type=int, default=9)
    p.add_argument("--no-richardson", action="store_true")
    p.add_argument("--out", default="runs/converge")
    a = p.parse_args()
    cfg = ConvergenceConfig(theta=a.theta, h_values=tuple(a.h), T=a.T, N_tan=a.n_tan, N_thick=a.n_thick,
                            richardson=not a.no_richardson)

    def progress(leg):
        print(f"h={leg.h:<10g} error={leg.error:.4e} gap={leg.initial_gap:.4e} "
              f"residual={leg.residual:.4e} steps={leg.steps} ({leg.wall:.1f}s)", flush=True)

    rep = convergence_study(cfg, a.out, progress)
    print(f"solution error slope {rep.slope:.3f} (target {rep.target} +- {rep.window})")
    print(f"initial gap slope    {rep.gap_slope:.3f}")
    print(f"residual slope       {rep.residual_slope:.3f}")
    if rep.richardson:
        r = rep.richardson
        print(f"refined grid at h={r['h']}: {r['error']:.6e} vs {r['error_refined']:.6e}")
    return 0 if rep.passed else 1


if __name__ == "__main__":
    sys.exit(main())
