"""Free cooling of a viscoelastic and a constant-restitution gas with Haff fits.

    python3 scripts/haff_experiment.py --out runs/haff --particles 100000
"""

import argparse
import json
from pathlib import Path

from granular import cli


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", type=Path, default=Path("runs/haff"))
    p.add_argument("--particles", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--drop", type=float, default=1e3)
    args = p.parse_args()
    common = ["--seed", str(args.seed), "--set", f"dsmc.n_particles={args.particles}",
              "--set", f"dsmc.temperature_drop={args.drop}"]
    cases = {"viscoelastic": [], "constant_e0.9": ["--set", "restitution.kind=constant", "--set", "restitution.e0=0.9"]}
    for name, extra in cases.items():
        out = args.out / name
        code = cli.main(["haff", "--out", str(out)] + common + extra)
        if code:
            raise SystemExit(code)
        summary = json.loads((out / "summary.json").read_text())
        fit = summary["fit"]
        print(f"{name:>15}: slope {fit['slope']:.4f} [{fit['ci_low']:.4f}, {fit['ci_high']:.4f}]"
              f" expected {summary['expected_slope']:.4f}, {summary['steps']} steps")


if __name__ == "__main__":
    main()
