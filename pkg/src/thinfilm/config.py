"""Line-oriented ``key = value`` run configuration with ``#`` comments."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable

SUBCOMMANDS = ("kernel", "ibvp", "cauchy", "verify", "convergence")


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        super().__init__("\n".join(errors))
        self.errors = errors


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _float(text: str) -> float:
    v = float(text)
    if math.isnan(v):
        raise ValueError("nan is not allowed")
    return v


def _floats(text: str) -> tuple[float, ...]:
    return tuple(_float(t) for t in text.replace(",", " ").split())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.replace(",", " ").split())


def _p(text: str) -> float:
    return math.inf if text.lower() in ("inf", "infinity") else _float(text)


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any
    check: Callable[[Any], bool] = lambda v: True
    rule: str = ""


def _pos(v):
    return v > 0


SCHEMA: dict[str, Key] = {
    "subcommand": Key(str, None, lambda v: v in SUBCOMMANDS, f"one of {', '.join(SUBCOMMANDS)}"),
    "seed": Key(int, 0, lambda v: v >= 0, ">= 0"),
    # grid block
    "grid.N": Key(int, None, lambda v: 1 <= v <= 3, "1, 2 or 3"),
    "grid.extent": Key(_float, None, _pos, "> 0"),
    "grid.points": Key(int, None, lambda v: v >= 8, ">= 8"),
    "grid.boundary": Key(str, "neumann", lambda v: v in ("neumann", "periodic"), "neumann or periodic"),
    # kernel block
    "kernel.N": Key(int, None, lambda v: 1 <= v <= 8, "1..8"),
    "kernel.eta_max": Key(_float, 20.0, lambda v: v >= 0, ">= 0"),
    "kernel.resolution": Key(int, 2001, lambda v: v >= 16, ">= 16"),
    "kernel.tol": Key(_float, 1e-13, _pos, "> 0"),
    "kernel.method": Key(str, "auto", lambda v: v in ("auto", "series", "panel"), "auto, series or panel"),
    # flux block
    "g.form": Key(str, "zero", lambda v: v in ("zero", "cubic", "power", "truncated"), "zero, cubic, power or truncated"),
    "g.c": Key(_float, 1.0, _pos, "> 0"),
    "g.alpha": Key(_float, 1.0, _pos, "> 0"),
    "g.base": Key(str, "cubic", lambda v: v in ("zero", "cubic", "power"), "zero, cubic or power"),
    "g.theta_outer": Key(_float, 2.0, lambda v: v > 1, "> 1"),
    # time block
    "time.T": Key(_float, None, _pos, "> 0"),
    "time.steps": Key(int, None, lambda v: v >= 1, ">= 1"),
    "time.samples": Key(int, 33, lambda v: v >= 2, ">= 2"),
    "time.snapshots": Key(_floats, (), lambda v: all(t >= 0 for t in v), "nonnegative times"),
    # initial data
    "init.kind": Key(str, "cos", lambda v: v in ("cos", "constant", "bump", "tent", "random"), "cos, constant, bump, tent or random"),
    "init.amplitude": Key(_float, 1.0, lambda v: math.isfinite(v), "finite"),
    "init.offset": Key(_float, 0.0, lambda v: math.isfinite(v), "finite"),
    "init.mode": Key(_ints, (1,), lambda v: len(v) >= 1 and all(m >= 0 for m in v), "nonnegative integers"),
    "init.width": Key(_float, 1.0, _pos, "> 0"),
    # tolerances
    "tol.inner": Key(_float, 1e-10, _pos, "> 0"),
    "tol.max_iter": Key(int, 200, lambda v: v >= 1, ">= 1"),
    "tol.damping": Key(_float, 1.0, lambda v: 0 < v <= 1, "in (0, 1]"),
    "tol.damping_floor": Key(_float, 0.25, lambda v: 0 < v <= 1, "in (0, 1]"),
    "tol.picard": Key(_float, 1e-10, _pos, "> 0"),
    "tol.picard_max_iter": Key(int, 60, lambda v: v >= 1, ">= 1"),
    # run options
    "run.allow_unsupported": Key(_bool, False),
    "run.k": Key(int, 2, lambda v: v >= 1, ">= 1"),
    "run.horizon_c1": Key(_float, 1.0, _pos, "> 0"),
    "run.horizon_c2": Key(_float, 1.0, _pos, "> 0"),
    # decay fit (cauchy)
    "decay.p": Key(_p, None, lambda v: v >= 1, ">= 1 or inf"),
    "decay.t_min": Key(_float, 16.0, _pos, "> 0"),
    "decay.t_max": Key(_float, 256.0, _pos, "> 0"),
    "decay.samples": Key(int, 8, lambda v: v >= 4, ">= 4"),
    # verify
    "verify.samples": Key(int, 64, lambda v: v >= 1, ">= 1"),
    "verify.fields": Key(int, 100, lambda v: v >= 1, ">= 1"),
    "verify.draws": Key(int, 50, lambda v: v >= 1, ">= 1"),
    "verify.points": Key(int, 24, lambda v: v >= 8, ">= 8"),
    # convergence
    "convergence.levels": Key(_ints, (64, 128, 256, 512, 1024), lambda v: len(v) >= 2 and all(x >= 1 for x in v), "at least two positive step counts"),
}

REQUIRED = {
    "kernel": ("kernel.N",),
    "ibvp": ("grid.N", "grid.extent", "grid.points", "time.T", "time.steps"),
    "cauchy": ("grid.N", "grid.extent", "grid.points", "time.T"),
    "verify": (),
    "convergence": ("grid.N", "grid.extent", "grid.points", "time.T"),
}


@dataclass
class RunConfig:
    subcommand: str
    values: dict[str, Any]
    explicit: set[str] = field(default_factory=set)

    def __getitem__(self, key: str):
        return self.values[key]

    @property
    def seed(self) -> int:
        return self.values["seed"]

    def block(self, prefix: str) -> dict[str, Any]:
        return {k.split(".", 1)[1]: v for k, v in self.values.items() if k.startswith(prefix + ".")}

    def effective(self) -> dict[str, Any]:
        """Every parameter with its effective value; infinities as strings."""
        out = {}
        for k, v in sorted(self.values.items()):
            if isinstance(v, tuple):
                v = list(v)
            if isinstance(v, float) and math.isinf(v):
                v = "inf"
            out[k] = v
        return out


def parse_config(text: str, subcommand: str | None = None, overrides: dict[str, str] | None = None) -> RunConfig:
    """Parse and validate; collects every error (with line numbers) before raising ConfigError."""
    errors: list[str] = []
    raw: dict[str, tuple[str, int]] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            errors.append(f"line {lineno}: expected 'key = value'")
            continue
        key, value = (s.strip() for s in body.split("=", 1))
        if key not in SCHEMA:
            errors.append(f"line {lineno}: unknown key {key!r}")
            continue
        if key in raw:
            errors.append(f"line {lineno}: duplicate key {key!r} (first on line {raw[key][1]})")
            continue
        if value == "":
            errors.append(f"line {lineno}: empty value for {key!r}")
            continue
        raw[key] = (value, lineno)
    for key, value in (overrides or {}).items():
        raw[key] = (value, 0)

    values: dict[str, Any] = {}
    for key, (value, lineno) in raw.items():
        spec = SCHEMA[key]
        where = f"line {lineno}" if lineno else "command line"
        try:
            parsed = spec.parse(value)
        except ValueError as exc:
            errors.append(f"{where}: {key} = {value!r} is invalid ({exc})")
            continue
        if not spec.check(parsed):
            errors.append(f"{where}: {key} = {value!r} out of range (must be {spec.rule})")
            continue
        values[key] = parsed

    sub = subcommand or values.get("subcommand")
    if sub is None:
        errors.append("no subcommand given")
    elif sub not in SUBCOMMANDS:
        errors.append(f"unknown subcommand {sub!r}")
    elif "subcommand" in values and subcommand and values["subcommand"] != subcommand:
        errors.append(f"line {raw['subcommand'][1]}: file is for {values['subcommand']!r}, not {subcommand!r}")
    else:
        for key in REQUIRED[sub]:
            if key not in values and key not in raw:
                block = key.split(".")[0]
                errors.append(f"missing {key} (the {block} block is incomplete for {sub})")
        if sub == "cauchy" and values.get("grid.boundary", "neumann") != "periodic" and "grid.boundary" in raw:
            errors.append(f"line {raw['grid.boundary'][1]}: cauchy runs need grid.boundary = periodic")
        if values.get("decay.t_min", 16.0) >= values.get("decay.t_max", 256.0):
            errors.append("decay.t_min must be below decay.t_max")
        if values.get("tol.damping_floor", 0.25) > values.get("tol.damping", 1.0):
            errors.append("tol.damping_floor must not exceed tol.damping")
    if errors:
        raise ConfigError(errors)

    explicit = set(values)
    for key, spec in SCHEMA.items():
        if key not in values:
            values[key] = spec.default
    if sub == "cauchy":
        values["grid.boundary"] = "periodic"
    values["subcommand"] = sub
    return RunConfig(sub, values, explicit)
