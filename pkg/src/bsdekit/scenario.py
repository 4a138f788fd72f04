"""Scenario files: JSON descriptions of spaces, clocks, drivers, problems and commands."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import jsonschema
import numpy as np

from .bsde import BsdeProblem
from .drivers import (
    AbsZDriver,
    ClippedDriver,
    ComponentwiseDriver,
    Driver,
    LinearDriver,
    ZeroDriver,
)
from .errors import BsdeError, SchemaError, UnresolvedReference
from .space import FiniteFilteredSpace, MartingaleBasis, build_martingale_basis, reference_clock
from .stieltjes import StieltjesFunction, TimeGrid

SCHEMA_VERSION = 1

_num = {"type": "number"}
_nums = {"type": "array", "items": _num}
_lip = {"oneOf": [_num, {"type": "array", "items": _num, "minItems": 1}]}

DRIVER_SCHEMA = {
    "type": "object",
    "required": ["type"],
    "properties": {
        "type": {"enum": ["zero", "linear", "abs_z", "clipped", "componentwise"]},
        "K": {"type": "integer", "minimum": 1},
        "lip_y": _lip,
        "lip_z": _lip,
        "A": {"type": "array", "items": _nums},
        "B": {"type": "array"},
        "g": _nums,
        "alpha": {"type": "number", "minimum": 0},
        "inner": {"type": "string"},
        "lo": {"oneOf": [_num, _nums, {"type": "null"}]},
        "hi": {"oneOf": [_num, _nums, {"type": "null"}]},
        "parts": {"type": "array", "items": {"type": "string"}, "minItems": 1},
    },
    "allOf": [
        {"if": {"properties": {"type": {"const": "linear"}}},
         "then": {"required": ["A", "lip_y", "lip_z"]}},
        {"if": {"properties": {"type": {"const": "abs_z"}}},
         "then": {"required": ["alpha", "lip_y", "lip_z"]}},
        {"if": {"properties": {"type": {"const": "clipped"}}},
         "then": {"required": ["inner", "lip_y", "lip_z"]}},
        {"if": {"properties": {"type": {"const": "componentwise"}}},
         "then": {"required": ["parts", "lip_y", "lip_z"]}},
    ],
    "additionalProperties": False,
}

COMMAND_SCHEMA = {
    "type": "object",
    "required": ["cmd"],
    "properties": {
        "cmd": {"enum": ["solve", "oracle", "compare", "expect", "axioms", "check-driver",
                         "basis", "stieltjes"]},
        "problem": {"type": "string"},
        "problem_bar": {"type": "string"},
        "start": {"type": "integer", "minimum": 0},
        "space": {"type": "string"},
        "clock": {"type": "string"},
        "driver": {"type": "string"},
        "terminal": {"type": "array"},
        "t": {"type": "integer", "minimum": 0},
        "trials": {"type": "integer", "minimum": 1},
        "mode": {"enum": ["linear", "quadratic"]},
        "op": {"enum": ["exp", "invert", "gronwall"]},
        "side": {"enum": ["left", "right"]},
        "direction": {"enum": ["backward", "forward"]},
        "alpha": _nums,
        "samples": {"type": "integer", "minimum": 0},
    },
    "allOf": [
        {"if": {"properties": {"cmd": {"enum": ["solve", "oracle", "check-driver"]}}},
         "then": {"required": ["problem"]}},
        {"if": {"properties": {"cmd": {"const": "compare"}}},
         "then": {"required": ["problem", "problem_bar"]}},
        {"if": {"properties": {"cmd": {"const": "expect"}}},
         "then": {"required": ["space", "clock", "driver", "terminal"]}},
        {"if": {"properties": {"cmd": {"const": "axioms"}}},
         "then": {"required": ["space", "clock", "driver"]}},
        {"if": {"properties": {"cmd": {"const": "basis"}}},
         "then": {"required": ["space"]}},
        {"if": {"properties": {"cmd": {"const": "stieltjes"}}},
         "then": {"required": ["op", "clock"]}},
    ],
    "additionalProperties": False,
}

SCENARIO_SCHEMA = {
    "type": "object",
    "required": ["schema_version"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "seed": {"type": "integer", "minimum": 0},
        "spaces": {"type": "object", "additionalProperties": {
            "type": "object",
            "required": ["outcomes", "prob", "times", "partitions"],
            "properties": {
                "outcomes": {"type": "array", "items": {"type": "string"}, "minItems": 1},
                "prob": _nums,
                "times": {"type": "array", "items": _num, "minItems": 2},
                "partitions": {"type": "array", "items": {
                    "type": "array", "items": {"type": "array", "items": {"type": "string"}}}},
            },
            "additionalProperties": False,
        }},
        "clocks": {"type": "object", "additionalProperties": {
            "oneOf": [
                {"type": "object", "required": ["times", "cont", "atoms"],
                 "properties": {"times": _nums, "cont": _nums, "atoms": _nums},
                 "additionalProperties": False},
                {"type": "object", "required": ["reference"],
                 "properties": {"reference": {"type": "string"}},
                 "additionalProperties": False},
            ]}},
        "drivers": {"type": "object", "additionalProperties": DRIVER_SCHEMA},
        "problems": {"type": "object", "additionalProperties": {
            "type": "object",
            "required": ["space", "clock", "driver", "terminal"],
            "properties": {
                "space": {"type": "string"},
                "clock": {"type": "string"},
                "driver": {"type": "string"},
                "norm_clock": {"type": "string"},
                "terminal": {"type": "array"},
            },
            "additionalProperties": False,
        }},
        "commands": {"type": "array", "items": COMMAND_SCHEMA},
    },
    "additionalProperties": False,
}


def _path(parts) -> str:
    return ".".join(str(p) for p in parts) or "$"


@dataclass
class Scenario:
    raw: dict
    spaces: dict = field(default_factory=dict)
    bases: dict = field(default_factory=dict)
    clocks: dict = field(default_factory=dict)
    drivers: dict = field(default_factory=dict)
    problems: dict = field(default_factory=dict)

    @property
    def commands(self) -> list:
        return self.raw.get("commands", [])

    @property
    def seed(self) -> int | None:
        return self.raw.get("seed")

    def to_dict(self) -> dict:
        out = {"schema_version": SCHEMA_VERSION}
        if self.seed is not None:
            out["seed"] = self.seed
        out["spaces"] = {k: v.to_record() for k, v in self.spaces.items()}
        clocks = {}
        for k, rec in self.raw.get("clocks", {}).items():
            clocks[k] = dict(rec) if "reference" in rec else self.clocks[k].to_record()
        out["clocks"] = clocks
        out["drivers"] = {k: dict(v) for k, v in self.raw.get("drivers", {}).items()}
        out["problems"] = {k: dict(v) for k, v in self.raw.get("problems", {}).items()}
        out["commands"] = [dict(c) for c in self.commands]
        return out


def _finite(obj, path, errors):
    if isinstance(obj, float) and not np.isfinite(obj):
        errors.append((_path(path), "non-finite number"))
    elif isinstance(obj, dict):
        for k, v in obj.items():
            _finite(v, path + [k], errors)
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            _finite(v, path + [i], errors)


def _ref(table: dict, name: str, kind: str, path: str):
    if name not in table:
        raise UnresolvedReference([(path, f"unknown {kind} {name!r}")])
    return table[name]


def parse_scenario(text: str) -> Scenario:
    """Parse and validate scenario JSON; raises :class:`SchemaError` with paths."""
    try:
        data = json.loads(text, parse_constant=lambda c: float(c))
    except json.JSONDecodeError as exc:
        raise SchemaError([("$", f"invalid JSON: {exc.msg} at line {exc.lineno}")]) from None
    return build_scenario(data)


def build_scenario(data: dict) -> Scenario:
    validator = jsonschema.Draft202012Validator(SCENARIO_SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        raise SchemaError([(_path(e.absolute_path), e.message) for e in errors])
    bad = []
    _finite(data, [], bad)
    if bad:
        raise SchemaError(bad)
    scn = Scenario(data)
    for name, rec in data.get("spaces", {}).items():
        scn.spaces[name] = _build_space(name, rec)
        scn.bases[name] = build_martingale_basis(scn.spaces[name])
    for name, rec in data.get("clocks", {}).items():
        path = f"clocks.{name}"
        if "reference" in rec:
            sp = _ref(scn.spaces, rec["reference"], "space", path + ".reference")
            scn.clocks[name] = reference_clock(sp, scn.bases[rec["reference"]])
            continue
        try:
            scn.clocks[name] = StieltjesFunction(TimeGrid(rec["times"]), rec["cont"], rec["atoms"])
        except (ValueError, BsdeError) as exc:
            raise SchemaError([(path, str(exc))]) from None
    pending = dict(data.get("drivers", {}))
    while pending:
        progress = False
        for name, rec in list(pending.items()):
            deps = [rec["inner"]] if rec["type"] == "clipped" else rec.get("parts", [])
            missing = [d for d in deps if d not in scn.drivers]
            unknown = [d for d in missing if d not in pending]
            if unknown:
                raise UnresolvedReference([(f"drivers.{name}", f"unknown driver {unknown[0]!r}")])
            if missing:
                continue
            scn.drivers[name] = _build_driver(name, rec, scn.drivers)
            del pending[name]
            progress = True
        if not progress:
            raise SchemaError([("drivers", "cyclic driver references")])
    for name, rec in data.get("problems", {}).items():
        scn.problems[name] = _build_problem(scn, f"problems.{name}", rec, rec["terminal"])
    for i, cmd in enumerate(scn.commands):
        _check_command(scn, f"commands.{i}", cmd)
    return scn


def _build_space(name: str, rec: dict) -> FiniteFilteredSpace:
    path = f"spaces.{name}"
    prob = np.asarray(rec["prob"], dtype=float)
    if prob.size != len(rec["outcomes"]):
        raise SchemaError([(path + ".prob", "one probability per outcome required")])
    if np.any(prob <= 0):
        raise SchemaError([(path + ".prob", "probabilities must be strictly positive")])
    if abs(prob.sum() - 1.0) > 1e-12:
        raise SchemaError([(path + ".prob", f"probabilities sum to {prob.sum():.12g}, not 1")])
    try:
        grid = TimeGrid(rec["times"])
    except ValueError as exc:
        raise SchemaError([(path + ".times", str(exc))]) from None
    try:
        return FiniteFilteredSpace(rec["outcomes"], prob, grid, rec["partitions"])
    except BsdeError as exc:
        msg = str(exc)
        sub = ".partitions"
        if msg.startswith("step "):
            sub += "." + msg.split(":")[0].split()[1]
        raise SchemaError([(path + sub, msg)]) from None


def _build_driver(name: str, rec: dict, built: dict) -> Driver:
    path = f"drivers.{name}"
    t = rec["type"]
    try:
        if t == "zero":
            return ZeroDriver(rec.get("K", 1))
        if t == "linear":
            A = np.asarray(rec["A"], dtype=float)
            K = A.shape[0]
            B = None if "B" not in rec else np.asarray(rec["B"], dtype=float).reshape(-1, K, K)
            return LinearDriver(A, B, rec.get("g"), K=K, lip_y=rec["lip_y"], lip_z=rec["lip_z"])
        if t == "abs_z":
            d = AbsZDriver(rec["alpha"], rec.get("K", 1))
            d.lip_y, d.lip_z = rec["lip_y"], rec["lip_z"]
            return d
        if t == "clipped":
            lo = -np.inf if rec.get("lo") is None else rec["lo"]
            hi = np.inf if rec.get("hi") is None else rec["hi"]
            d = ClippedDriver(built[rec["inner"]], lo, hi)
            d.lip_y, d.lip_z = rec["lip_y"], rec["lip_z"]
            return d
        d = ComponentwiseDriver([built[p] for p in rec["parts"]])
        d.lip_y, d.lip_z = rec["lip_y"], rec["lip_z"]
        return d
    except (ValueError, BsdeError) as exc:
        raise SchemaError([(path, str(exc))]) from None


def _terminal(space: FiniteFilteredSpace, K: int, values, path: str) -> np.ndarray:
    Q = np.asarray(values, dtype=float)
    if Q.ndim == 1:
        Q = Q[:, None]
    if Q.shape != (space.size, K):
        raise SchemaError([(path, f"terminal needs shape ({space.size}, {K}), got {Q.shape}")])
    return Q


def _build_problem(scn: Scenario, path: str, rec: dict, terminal) -> BsdeProblem:
    space = _ref(scn.spaces, rec["space"], "space", path + ".space")
    clock = _ref(scn.clocks, rec["clock"], "clock", path + ".clock")
    driver = _ref(scn.drivers, rec["driver"], "driver", path + ".driver")
    norm = None
    if "norm_clock" in rec:
        norm = _ref(scn.clocks, rec["norm_clock"], "clock", path + ".norm_clock")
    Q = _terminal(space, driver.K, terminal, path + ".terminal")
    try:
        return BsdeProblem(space, scn.bases[rec["space"]], clock, driver, Q, norm)
    except BsdeError as exc:
        raise SchemaError([(path, str(exc))]) from None


def _check_command(scn: Scenario, path: str, cmd: dict) -> None:
    for key, table, kind in (("problem", scn.problems, "problem"),
                             ("problem_bar", scn.problems, "problem"),
                             ("space", scn.spaces, "space"),
                             ("clock", scn.clocks, "clock"),
                             ("driver", scn.drivers, "driver")):
        if key in cmd:
            _ref(table, cmd[key], kind, f"{path}.{key}")
    if cmd["cmd"] == "expect":
        space = scn.spaces[cmd["space"]]
        _terminal(space, scn.drivers[cmd["driver"]].K, cmd["terminal"], path + ".terminal")


def dump_scenario(scn: Scenario) -> str:
    return json.dumps(scn.to_dict(), sort_keys=True, indent=2)
