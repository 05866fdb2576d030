"""Flat ``section.key = value`` run configuration.

Files are INI text (``[section]`` headers with ``key = value`` lines). Every
key has a declared type and default; unknown keys and bad values are all
collected before a single ValidationError is raised.
"""

from __future__ import annotations

import configparser
import io
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple

from granular.errors import ValidationError

SUBCOMMANDS = ("validate-restitution", "constants", "scaling-table", "haff", "rescaled", "hydro", "qscaling")


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text: str) -> Optional[float]:
    return None if text.strip().lower() in ("", "none") else float(text)


def _floats(text: str) -> Tuple[float, ...]:
    return tuple(float(x) for x in text.split(",") if x.strip())


def _choice(*options):
    def parse(text: str) -> str:
        t = text.strip()
        if t not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {t!r}")
        return t
    return parse


# key -> (parser, default); None defaults mean "unset"
SCHEMA: Dict[str, Tuple[Callable[[str], Any], Any]] = {
    "run.seed": (int, 0),
    "runtime.threads": (int, 1),
    "restitution.kind": (_choice("viscoelastic", "constant"), "viscoelastic"),
    "restitution.e0": (_opt_float, None),
    "restitution.a0": (float, 1.0),
    "kinetic.theta_star": (float, 1.0),
    "kinetic.gamma": (float, 0.2),
    "schedule.epsilon": (float, 1.0),
    "schedule.b1": (float, 1.0),
    "validate.r_min": (float, 1e-8),
    "validate.r_max": (float, 1e8),
    "validate.points": (int, 161),
    "scaling.t0": (float, 0.0),
    "scaling.t1": (float, 20.0),
    "scaling.points": (int, 21),
    "dsmc.n_particles": (int, 100_000),
    "dsmc.dt": (_opt_float, None),
    "dsmc.t_end": (float, 1e12),
    "dsmc.temperature_drop": (_opt_float, 1e3),
    "dsmc.majorant_safety": (float, 1.5),
    "dsmc.collision_probability": (float, 0.05),
    "dsmc.units": (int, 4),
    "dsmc.kernel": (_choice("hard_sphere", "isotropic"), "hard_sphere"),
    "dsmc.spatial": (_choice("homogeneous", "torus"), "homogeneous"),
    "dsmc.cells_per_dim": (int, 8),
    "dsmc.space_dim": (int, 1),
    "dsmc.output_interval": (float, 0.0),
    "haff.tail_fraction": (float, 0.5),
    "haff.tail_decades": (_opt_float, 1.0),
    "haff.bootstrap": (int, 200),
    "hydro.n": (int, 64),
    "hydro.dim": (int, 2),
    "hydro.nu0": (float, 1.0),
    "hydro.nu1": (float, 1.0),
    "hydro.dt": (float, 1e-3),
    "hydro.t_end": (float, 1.0),
    "hydro.dealias": (_bool, True),
    "hydro.conventional": (_bool, False),
    "hydro.xi": (_choice("schedule", "constant", "none"), "schedule"),
    "hydro.xi_constant": (float, 0.0),
    "hydro.initial": (_choice("taylor_green", "random_solenoidal", "from_file"), "taylor_green"),
    "hydro.spectrum_slope": (float, -5.0 / 3.0),
    "hydro.energy": (float, 0.5),
    "hydro.theta_amplitude": (float, 0.0),
    "hydro.file": (str, ""),
    "hydro.record_every": (int, 1),
    "hydro.snapshot_every": (int, 0),
    "qscaling.ells": (_floats, (1e-3, 1e-2, 1e-1)),
    "qscaling.samples": (int, 100_000),
}


@dataclass
class RunConfig:
    subcommand: str
    values: Dict[str, Any]
    explicit: Dict[str, str] = field(default_factory=dict)  # raw text of keys set by the user

    def __getitem__(self, key: str):
        return self.values[key]

    @property
    def seed(self) -> int:
        return self.values["run.seed"]

    def to_text(self) -> str:
        """Fully resolved configuration in the input format, keys sorted."""
        sections: Dict[str, List[Tuple[str, str]]] = {}
        for key in sorted(self.values):
            sec, name = key.split(".", 1)
            sections.setdefault(sec, []).append((name, format_value(self.values[key])))
        out = io.StringIO()
        for sec in sorted(sections):
            out.write(f"[{sec}]\n")
            for name, text in sections[sec]:
                out.write(f"{name} = {text}\n")
            out.write("\n")
        return out.getvalue()


def format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(repr(float(v)) for v in value)
    return str(value)


def read_pairs(text: str) -> Dict[str, str]:
    """Raw ``section.key -> text`` pairs; syntax errors carry the line number."""
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.ParsingError as exc:
        lines = ", ".join(f"line {n}: {line.strip()}" for n, line in exc.errors)
        raise ValidationError([f"syntax error ({lines})"]) from None
    except configparser.MissingSectionHeaderError as exc:
        raise ValidationError([f"syntax error at line {exc.lineno}: key outside a [section]"]) from None
    except configparser.Error as exc:
        raise ValidationError([f"syntax error: {exc.message}"]) from None
    return {f"{s}.{k}": v for s in parser.sections() for k, v in parser.items(s)}


def parse_config(text: str, subcommand: str, overrides: Optional[Dict[str, str]] = None) -> RunConfig:
    """Validate ``text`` plus overrides against the schema for ``subcommand``."""
    problems: List[str] = []
    if subcommand not in SUBCOMMANDS:
        problems.append(f"unknown subcommand {subcommand!r}")
    try:
        raw = read_pairs(text)
    except ValidationError as exc:
        raw = {}
        problems.extend(exc.problems)
    raw.update(overrides or {})
    values = {k: d for k, (_, d) in SCHEMA.items()}
    for key in sorted(raw):
        if key not in SCHEMA:
            problems.append(f"unknown key {key}")
            continue
        parser, _ = SCHEMA[key]
        try:
            values[key] = parser(raw[key])
        except ValueError as exc:
            problems.append(f"{key}: {exc}")
    problems.extend(_semantic(values))
    if problems:
        raise ValidationError(problems)
    return RunConfig(subcommand, values, dict(raw))


def _semantic(v: Dict[str, Any]) -> List[str]:
    p = []
    if v["restitution.kind"] == "constant":
        e0 = v["restitution.e0"]
        if e0 is None:
            p.append("restitution.e0 is required when restitution.kind = constant")
        elif not 0.0 < e0 <= 1.0:
            p.append("restitution.e0 must lie in (0, 1]")
    if not v["restitution.a0"] > 0:
        p.append("restitution.a0 must be positive")
    if not v["kinetic.theta_star"] > 0:
        p.append("kinetic.theta_star must be positive")
    if not 0 < v["kinetic.gamma"]:
        p.append("kinetic.gamma must be positive")
    if not 0 < v["schedule.epsilon"] <= 1:
        p.append("schedule.epsilon must lie in (0, 1]")
    if not v["schedule.b1"] > 0:
        p.append("schedule.b1 must be positive")
    if not 0 < v["validate.r_min"] < v["validate.r_max"]:
        p.append("validate.r_min must be positive and below validate.r_max")
    if v["validate.points"] < 2:
        p.append("validate.points must be at least 2")
    if v["scaling.points"] < 2 or v["scaling.t1"] < v["scaling.t0"] or v["scaling.t0"] < 0:
        p.append("scaling needs points >= 2 and 0 <= t0 <= t1")
    if v["dsmc.n_particles"] < 2:
        p.append("dsmc.n_particles must be at least 2 (N >= 2)")
    if v["dsmc.dt"] is not None and not v["dsmc.dt"] > 0:
        p.append("dsmc.dt must be positive")
    if v["dsmc.majorant_safety"] < 1.2:
        p.append("dsmc.majorant_safety must be at least 1.2")
    if not 0 < v["dsmc.collision_probability"] < 0.1:
        p.append("dsmc.collision_probability must lie in (0, 0.1)")
    if v["dsmc.units"] < 1:
        p.append("dsmc.units must be positive")
    if v["runtime.threads"] < 1:
        p.append("runtime.threads must be positive")
    if not 0 < v["haff.tail_fraction"] <= 1:
        p.append("haff.tail_fraction must lie in (0, 1]")
    td = v["dsmc.temperature_drop"]
    if td is not None and not td > 1:
        p.append("dsmc.temperature_drop must exceed 1")
    n = v["hydro.n"]
    if n < 4 or n & (n - 1):
        p.append("hydro.n must be a power of two, at least 4")
    if v["hydro.dim"] not in (2, 3):
        p.append("hydro.dim must be 2 or 3")
    if v["hydro.initial"] == "from_file" and not v["hydro.file"]:
        p.append("hydro.file is required when hydro.initial = from_file")
    if not v["qscaling.ells"] or any(not x > 0 for x in v["qscaling.ells"]):
        p.append("qscaling.ells must be a non-empty list of positive scales")
    if v["qscaling.samples"] < 100_000:
        p.append("qscaling.samples must be at least 100000")
    for key in ("hydro.nu0", "hydro.nu1", "hydro.dt"):
        if not v[key] > 0:
            p.append(f"{key} must be positive")
    if not math.isfinite(v["dsmc.t_end"]) or v["dsmc.t_end"] <= 0:
        p.append("dsmc.t_end must be positive and finite")
    return p
