"""Command line entry point.

    granular <subcommand> [--config FILE] [--set section.key=value ...] [--out DIR]
    granular rerun MANIFEST [--out DIR]

Every run writes ``manifest.ini`` (resolved configuration, subcommand and
build identifier) next to its CSV and JSON outputs. Exit status is 0 on
success, 1 on validation failure and 2 on numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import subprocess
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from granular import __version__
from granular import diagnostics as dg
from granular import dissipation as dis
from granular import dsmc, hydro
from granular import restitution as rst
from granular.collision import kernel_from_name
from granular.config import SUBCOMMANDS, RunConfig, parse_config, read_pairs
from granular.errors import DomainError, InvariantViolation, NumericError, ValidationError
from granular.scaling import ScalingSchedule

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def build_id() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True, text=True,
                             cwd=Path(__file__).resolve().parent, timeout=5)
        tag = out.stdout.strip() if out.returncode == 0 else ""
    except (OSError, subprocess.SubprocessError):
        tag = ""
    return f"granular {__version__}" + (f" ({tag})" if tag else "")


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path: Path, header: Sequence[str], columns: Sequence[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*columns):
            w.writerow([_fmt(x) for x in row])


def write_json(path: Path, data: dict) -> None:
    with open(path, "w", newline="\n") as fh:
        json.dump(data, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")


def _model(cfg: RunConfig) -> rst.RestitutionModel:
    if cfg["restitution.kind"] == "constant":
        return rst.constant(cfg["restitution.e0"])
    return rst.viscoelastic(cfg["restitution.a0"])


def _schedule(cfg: RunConfig, model) -> ScalingSchedule:
    gamma = model.gamma if model.gamma is not None else cfg["kinetic.gamma"]
    a1 = dis.kinetic_constants(rst.viscoelastic(cfg["restitution.a0"]) if model.gamma is None else model,
                               cfg["kinetic.theta_star"]).a1
    return ScalingSchedule(cfg["schedule.epsilon"], gamma, a1, cfg["schedule.b1"], cfg["kinetic.theta_star"])


def _threads(cfg: RunConfig) -> int:
    env = os.environ.get("GRANULAR_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValidationError([f"GRANULAR_THREADS must be an integer, got {env!r}"]) from None
    return cfg["runtime.threads"]


def cmd_validate_restitution(cfg: RunConfig, out: Path) -> int:
    model = _model(cfg)
    r = np.geomspace(cfg["validate.r_min"], cfg["validate.r_max"], cfg["validate.points"])
    report = rst.verify_class(model, r)
    e = np.asarray(rst.evaluate(model, r))
    write_csv(out / "restitution.csv", ["r", "e", "eta", "jacobian"],
              [r, e, np.asarray(rst.eta(model, r)), np.asarray(rst.jacobian(model, r))])
    write_json(out / "report.json", {
        "passed": report.passed, "e_in_unit_interval": report.e_in_unit_interval,
        "e_nonincreasing": report.e_nonincreasing, "eta_increasing": report.eta_increasing,
        "expansion_bound": report.expansion_bound, "jacobian_lower_bound": report.jacobian_lower_bound,
        "jacobian_deviation": report.jacobian_deviation, "constants": report.constants, "notes": report.notes,
    })
    return EXIT_OK if report.passed else EXIT_VALIDATION


def cmd_constants(cfg: RunConfig, out: Path) -> int:
    model = rst.viscoelastic(cfg["restitution.a0"])
    k = dis.kinetic_constants(model, cfg["kinetic.theta_star"])
    g = k.gamma
    alphas = (-2.0, -1.5, -1.0, -0.5, 0.0, 1.0, 2.0)
    write_json(out / "constants.json", {
        "gamma": g, "gamma_bar": k.gamma_bar, "a0": k.a0, "theta_star": k.theta_star, "b1": cfg["schedule.b1"],
        "a1": k.a1, "a2": k.a2, "ratio": k.ratio, "K_gamma": k.K[g], "K_gamma_plus_2": k.K[g + 2.0],
        "K_ratio": k.K[g + 2.0] / k.K[g],
        "sign_integrals": {repr(a): dis.gaussian_sign_integral(a) for a in alphas},
    })
    return EXIT_OK


def cmd_scaling_table(cfg: RunConfig, out: Path) -> int:
    sch = _schedule(cfg, rst.viscoelastic(cfg["restitution.a0"]))
    tab = sch.table(cfg["scaling.t0"], cfg["scaling.t1"], cfg["scaling.points"])
    cols = ["t", "V", "tau", "xi", "ell", "z"]
    write_csv(out / "scaling.csv", cols, [tab[c] for c in cols])
    return EXIT_OK


def _dsmc_config(cfg: RunConfig, mode: str, schedule=None, t_end=None, drop=None) -> dsmc.DsmcConfig:
    return dsmc.DsmcConfig(
        n_particles=cfg["dsmc.n_particles"], dt=cfg["dsmc.dt"], mode=mode, spatial=cfg["dsmc.spatial"],
        cells_per_dim=cfg["dsmc.cells_per_dim"], space_dim=cfg["dsmc.space_dim"],
        kernel=kernel_from_name(cfg["dsmc.kernel"]), restitution=_model(cfg), schedule=schedule,
        seed=cfg.seed, t_end=cfg["dsmc.t_end"] if t_end is None else t_end,
        temperature_drop=drop, majorant_safety=cfg["dsmc.majorant_safety"],
        collision_probability=cfg["dsmc.collision_probability"], units=cfg["dsmc.units"],
        threads=_threads(cfg), theta_star=cfg["kinetic.theta_star"], output_interval=cfg["dsmc.output_interval"])


def _series_csv(path: Path, s: dsmc.CoolingSeries, extra: Optional[Dict[str, np.ndarray]] = None) -> None:
    header = ["t", "T", "px", "py", "pz", "n_collisions"]
    cols = [s.times, s.temperatures, s.momentum[:, 0], s.momentum[:, 1], s.momentum[:, 2], s.n_collisions]
    for k, v in (extra or {}).items():
        header.append(k)
        cols.append(v)
    write_csv(path, header, cols)


def cmd_haff(cfg: RunConfig, out: Path) -> int:
    dc = _dsmc_config(cfg, "physical_cooling", drop=cfg["dsmc.temperature_drop"])
    s = dsmc.run_free_cooling(dc)
    _series_csv(out / "timeseries.csv", s)
    model = dc.restitution
    offset = 0.0
    if model.kind == "constant" and model.e0 < 1:
        offset = dg.haff_time_shift(model.e0, float(s.temperatures[0]))
    t_min = None
    if cfg["haff.tail_decades"] is not None:
        t_min = float(s.times[-1]) * 10.0 ** (-cfg["haff.tail_decades"])
        if offset:
            t_min = (float(s.times[-1]) + offset) * 10.0 ** (-cfg["haff.tail_decades"]) - offset
    summary = {"seed": cfg.seed, "build": build_id(), "steps": s.steps, "time_offset": offset,
               "temperature_drop": float(s.temperatures[0] / s.temperatures[-1]),
               "expected_slope": -2.0 / (model.gamma + 1.0) if model.gamma else -2.0}
    if model.is_elastic:
        summary["fit"] = None
    else:
        fit = dg.haff_fit(s.times, s.temperatures, cfg["haff.tail_fraction"], cfg["haff.bootstrap"],
                          seed=cfg.seed, t_min=t_min, offset=offset)
        summary["fit"] = json.loads(fit.to_json())
    write_json(out / "summary.json", summary)
    return EXIT_OK


def cmd_rescaled(cfg: RunConfig, out: Path) -> int:
    model = _model(cfg)
    sch = _schedule(cfg, model)
    t_end = cfg["dsmc.t_end"] if cfg.explicit.get("dsmc.t_end") else 20.0
    dc = _dsmc_config(cfg, "rescaled", schedule=sch, t_end=t_end)
    s = dsmc.run_rescaled(dc)
    _series_csv(out / "timeseries.csv", s, {"fluctuation": s.fluctuation_norms, "stretch": s.stretch_ledger})
    write_json(out / "summary.json", {
        "seed": cfg.seed, "build": build_id(), "splitting": s.splitting, "steps": s.steps,
        "epsilon": sch.epsilon, "T_min": float(s.temperatures.min()), "T_max": float(s.temperatures.max()),
        "fluctuation_trend": dg.fluctuation_trend(s.fluctuation_norms),
    })
    return EXIT_OK


def cmd_hydro(cfg: RunConfig, out: Path) -> int:
    xi_mode = cfg["hydro.xi"]
    schedule = _schedule(cfg, rst.viscoelastic(cfg["restitution.a0"])) if xi_mode == "schedule" else None
    hc = hydro.HydroConfig(
        n=cfg["hydro.n"], dim=cfg["hydro.dim"], nu0=cfg["hydro.nu0"], nu1=cfg["hydro.nu1"],
        theta_star=cfg["kinetic.theta_star"], gamma=cfg["kinetic.gamma"], schedule=schedule,
        xi_constant=cfg["hydro.xi_constant"] if xi_mode == "constant" else None,
        dt=cfg["hydro.dt"], t_end=cfg["hydro.t_end"], dealias=cfg["hydro.dealias"],
        conventional=cfg["hydro.conventional"])
    init = cfg["hydro.initial"]
    if init == "taylor_green":
        f0 = hydro.taylor_green(hc)
    elif init == "random_solenoidal":
        f0 = hydro.random_solenoidal(hc, cfg.seed, cfg["hydro.spectrum_slope"], cfg["hydro.energy"],
                                     theta_amplitude=cfg["hydro.theta_amplitude"])
    else:
        f0 = hydro.read_snapshot(cfg["hydro.file"], hc)
    tr = hydro.run(hc, f0, cfg["hydro.record_every"], cfg["hydro.snapshot_every"])
    write_csv(out / "diagnostics.csv", ["t", "kinetic_energy", "enstrophy", "max_divergence", "theta_mean"],
              [tr.times, tr.kinetic_energy, tr.enstrophy, tr.max_divergence, tr.theta_mean])
    for i, snap in enumerate(tr.snapshots):
        hydro.write_snapshot(out / f"snapshot_{i:04d}.bin", snap, hc)
    res = tr.energy_balance_residual
    write_json(out / "summary.json", {
        "seed": cfg.seed, "build": build_id(), "steps": int(round(hc.t_end / hc.dt)),
        "max_divergence": float(tr.max_divergence.max()),
        "energy_balance_residual_max": float(np.abs(res).max()) if res.size else 0.0,
        "snapshots": len(tr.snapshots),
    })
    return EXIT_OK


def cmd_qscaling(cfg: RunConfig, out: Path) -> int:
    model = _model(cfg)
    if model.gamma is None:
        raise ValidationError(["qscaling needs a restitution law with a declared gamma"])
    ells = np.array(cfg["qscaling.ells"])
    rows = []
    for i, ell in enumerate(ells):
        rows.append(dis.q_mm_weighted_norm(model, float(ell), cfg["qscaling.samples"],
                                           np.random.default_rng([cfg.seed, i]), cfg["kinetic.theta_star"]))
    norms = np.array([r.norm for r in rows])
    write_csv(out / "qscaling.csv", ["ell", "norm", "std_error"], [ells, norms, [r.std_error for r in rows]])
    slope = float(np.polyfit(np.log(ells), np.log(norms), 1)[0]) if ells.size >= 2 else math.nan
    write_json(out / "summary.json", {"seed": cfg.seed, "build": build_id(), "slope": slope,
                                      "expected_slope": model.gamma})
    return EXIT_OK


COMMANDS = {
    "validate-restitution": cmd_validate_restitution,
    "constants": cmd_constants,
    "scaling-table": cmd_scaling_table,
    "haff": cmd_haff,
    "rescaled": cmd_rescaled,
    "hydro": cmd_hydro,
    "qscaling": cmd_qscaling,
}


def write_manifest(path: Path, cfg: RunConfig) -> None:
    text = f"[manifest]\nsubcommand = {cfg.subcommand}\nbuild = {build_id()}\nseed = {cfg.seed}\n\n" + cfg.to_text()
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


def load_manifest(path: Path) -> RunConfig:
    text = Path(path).read_text()
    pairs = read_pairs(text)
    sub = pairs.pop("manifest.subcommand", None)
    if sub is None:
        raise ValidationError([f"{path} has no manifest.subcommand"])
    for key in [k for k in pairs if k.startswith("manifest.")]:
        pairs.pop(key)
    return parse_config("", sub, pairs)


def execute(cfg: RunConfig, out: Path) -> int:
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out / "manifest.ini", cfg)
    return COMMANDS[cfg.subcommand](cfg, out)


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="granular", description="Granular gas kinetics toolkit")
    sub = p.add_subparsers(dest="command", metavar="subcommand", parser_class=_Parser)
    for name in SUBCOMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", type=Path, help="INI file with section.key settings")
        s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one key")
        s.add_argument("--out", type=Path, default=Path("."), help="output directory")
        s.add_argument("--seed", type=int)
        if name == "scaling-table":
            s.add_argument("--eps", type=str)
            s.add_argument("--t0", type=str)
            s.add_argument("--t1", type=str)
            s.add_argument("--points", type=str)
    r = sub.add_parser("rerun")
    r.add_argument("manifest", type=Path)
    r.add_argument("--out", type=Path, default=Path("."))
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = _parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_VALIDATION
    try:
        if args.command == "rerun":
            cfg = load_manifest(args.manifest)
        else:
            overrides = {}
            for item in args.set:
                key, sep, value = item.partition("=")
                if not sep:
                    raise ValidationError([f"--set expects KEY=VALUE, got {item!r}"])
                overrides[key.strip()] = value.strip()
            if args.seed is not None:
                overrides["run.seed"] = str(args.seed)
            if args.command == "scaling-table":
                for flag, key in (("eps", "schedule.epsilon"), ("t0", "scaling.t0"),
                                  ("t1", "scaling.t1"), ("points", "scaling.points")):
                    if getattr(args, flag) is not None:
                        overrides[key] = getattr(args, flag)
            text = args.config.read_text() if args.config else ""
            cfg = parse_config(text, args.command, overrides)
        return execute(cfg, args.out)
    except (ValidationError, DomainError) as exc:
        print(f"granular: validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericError, InvariantViolation) as exc:
        detail = getattr(exc, "diagnostics", None)
        print(f"granular: numeric failure: {exc}" + (f" {detail}" if detail else ""), file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"granular: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
