"""Random solenoidal flow in the pseudo-spectral solver under the schedule forcing.

    python3 scripts/hydro_experiment.py --n 64 --t-end 2
"""

import argparse
import csv
from pathlib import Path

from granular import cli


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", type=Path, default=Path("runs/hydro"))
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--t-end", type=float, default=2.0)
    p.add_argument("--dt", type=float, default=2e-3)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    code = cli.main(["hydro", "--out", str(args.out), "--seed", str(args.seed),
                     "--set", f"hydro.n={args.n}", "--set", f"hydro.dim={args.dim}",
                     "--set", f"hydro.t_end={args.t_end}", "--set", f"hydro.dt={args.dt}",
                     "--set", "hydro.initial=random_solenoidal", "--set", "hydro.theta_amplitude=0.1",
                     "--set", "hydro.nu0=0.02", "--set", "hydro.nu1=0.02", "--set", "hydro.record_every=50"])
    if code:
        raise SystemExit(code)
    with open(args.out / "diagnostics.csv") as fh:
        for r in csv.DictReader(fh):
            print(f"t={float(r['t']):7.3f}  KE={float(r['kinetic_energy']):.6e}"
                  f"  enstrophy={float(r['enstrophy']):.6e}  div={float(r['max_divergence']):.1e}")


if __name__ == "__main__":
    main()
