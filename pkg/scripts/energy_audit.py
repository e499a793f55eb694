"""Energy drift of the unforced solver under repeated halving of dt.

    python scripts/energy_audit.py --h 0.125 --halvings 3
"""

import argparse
import math

import numpy as np

from thinplate.fields import Field, GridSpec
from thinplate.material import MaterialModel
from thinplate.solver3d import SimState, low_frequency_data, simulate, stable_dt


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--h", type=float, default=0.125)
    p.add_argument("--n-tan", type=int, default=16)
    p.add_argument("--n-thick", type=int, default=17)
    p.add_argument("--amplitude", type=float, default=1e-3)
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--halvings", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    a = p.parse_args()
    model = MaterialModel(d=2)
    grid = GridSpec(2, math.pi, a.n_tan, a.n_thick, a.h)
    u = low_frequency_data(grid, model, np.random.default_rng(a.seed), a.amplitude, max_wavenumber=2)
    state = SimState(Field(grid, u), Field.zeros(grid))
    dt = stable_dt(grid, model)
    prev = None
    for k in range(a.halvings):
        tr = simulate(state, model, None, math.inf, a.T, dt=dt / 2**k)
        drift = tr.max_relative_drift
        order = f"  order {math.log2(prev / drift):.3f}" if prev else ""
        print(f"dt={tr.dt:.3e} steps={tr.steps:<7d} relative drift {drift:.3e}{order}")
        prev = drift


if __name__ == "__main__":
    main()
