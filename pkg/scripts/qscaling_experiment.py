"""Monte Carlo scaling of the weighted norm of Q(M, M) against the scale parameter.

    python3 scripts/qscaling_experiment.py --ells 1e-12,1e-9,1e-6,1e-3,1e-2,1e-1
"""

import argparse
import csv
from pathlib import Path

import numpy as np

from granular import cli


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", type=Path, default=Path("runs/qscaling"))
    p.add_argument("--ells", default="1e-12,1e-9,1e-6,1e-3,1e-2,1e-1")
    p.add_argument("--samples", type=int, default=400_000)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    code = cli.main(["qscaling", "--out", str(args.out), "--seed", str(args.seed),
                     "--set", f"qscaling.ells={args.ells}", "--set", f"qscaling.samples={args.samples}"])
    if code:
        raise SystemExit(code)
    with open(args.out / "qscaling.csv") as fh:
        rows = [(float(r["ell"]), float(r["norm"])) for r in csv.DictReader(fh)]
    ell, norm = np.array(rows).T
    local = np.diff(np.log(norm)) / np.diff(np.log(ell))
    for a, b, s in zip(ell[:-1], ell[1:], local):
        print(f"local slope on [{a:.0e}, {b:.0e}]: {s:.4f}")


if __name__ == "__main__":
    main()
