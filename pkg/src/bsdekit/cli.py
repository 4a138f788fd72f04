"""Command-line entry point: run a scenario file and emit a JSON report.

Exit codes: 0 when every command ran and every verdict passed, 2 when a
verdict failed, 1 when a command raised an error (or the scenario is invalid).
"""

from __future__ import annotations

import argparse
import json
import sys
import time

import numpy as np

from .bsde import check_standard, solve_backward_oracle, solve_picard
from .compare import ComparisonInstance, check_comparison_assumptions
from .errors import BsdeError, SchemaError
from .expectation import ExpectationEngine, axiom_suite
from .scenario import SCHEMA_VERSION, Scenario, parse_scenario
from .space import h2_norm
from .stieltjes import (
    backward_gronwall_bound,
    exponential_path,
    forward_gronwall_bound,
    left_jump_inversion,
    right_jump_inversion,
)

EXIT_OK, EXIT_ERROR, EXIT_FAIL = 0, 1, 2


def _clean(obj):
    """Make a result JSON-safe: arrays to lists, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if np.isfinite(x) else repr(x)
    return obj


class Runner:
    def __init__(self, scn: Scenario, seed: int, tol: float, max_iter: int):
        self.scn, self.seed, self.tol, self.max_iter = scn, seed, tol, max_iter
        self.solutions = {}  # (solver, problem) -> BsdeSolution

    def rng(self, index: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, index])

    def solve(self, cmd, i):
        name = cmd["problem"]
        p = self.scn.problems[name]
        sol = solve_picard(p, tol=self.tol, max_outer=self.max_iter, max_inner=self.max_iter)
        self.solutions[("picard", name)] = sol
        return self._solution_result(name, sol)

    def oracle(self, cmd, i):
        name = cmd["problem"]
        p = self.scn.problems[name]
        sol = solve_backward_oracle(p, tol=self.tol, max_inner=self.max_iter)
        self.solutions[("oracle", name)] = sol
        return self._solution_result(name, sol)

    def _solution_result(self, name, sol):
        ok = sol.diagnostics.defect <= 10 * self.tol + 1e-12
        return "ok" if ok else "fail", {"problem": name, "Y0": sol.Y[0, 0], **sol.to_record()}

    def compare(self, cmd, i):
        p = self.scn.problems[cmd["problem"]]
        pb = self.scn.problems[cmd["problem_bar"]]
        sol = solve_backward_oracle(p, tol=self.tol, max_inner=self.max_iter)
        solb = solve_backward_oracle(pb, tol=self.tol, max_inner=self.max_iter)
        inst = ComparisonInstance(p, sol, pb, solb, start=cmd.get("start", 0))
        rep = check_comparison_assumptions(inst)
        ok = all(v != "fail" for v in rep.statuses.values()) and rep.conclusion_holds is not False
        rec = rep.to_record()
        rec.update(problem=cmd["problem"], problem_bar=cmd["problem_bar"], start=inst.start,
                   processes={"d2f": rep.processes.d2f, "X": rep.processes.X})
        return "ok" if ok else "fail", rec

    def _engine(self, cmd):
        s = cmd["space"]
        return ExpectationEngine(self.scn.spaces[s], self.scn.bases[s], self.scn.clocks[cmd["clock"]],
                                 self.scn.drivers[cmd["driver"]])

    def expect(self, cmd, i):
        eng = self._engine(cmd)
        Q = np.asarray(cmd["terminal"], dtype=float)
        Y = eng.solve(Q)
        t = cmd.get("t", 0)
        return "ok", {"t": t, "value": Y[t], "risk": -Y[t]}

    def axioms(self, cmd, i):
        eng = self._engine(cmd)
        seed = int(self.rng(i).integers(0, 2 ** 31))
        rep = axiom_suite(eng, trials=cmd.get("trials", 100), seed=seed)
        return "ok" if rep["passed"] else "fail", rep

    def check_driver(self, cmd, i):
        p = self.scn.problems[cmd["problem"]]
        rep = check_standard(p, cmd.get("mode", "linear"), samples=cmd.get("samples", 32),
                             rng=self.rng(i))
        return "ok" if rep.passed else "fail", {"problem": cmd["problem"], **rep.to_record()}

    def basis(self, cmd, i):
        b = self.scn.bases[cmd["space"]]
        nodes = [{"step": nd.step, "parent": [b.space.outcomes[j] for j in nd.parent],
                  "q": nd.q, "vectors": nd.vectors, "qv": nd.qv} for nd in b.nodes]
        return "ok", {"space": cmd["space"], "d": b.d, "nodes": nodes}

    def stieltjes(self, cmd, i):
        nu = self.scn.clocks[cmd["clock"]]
        op = cmd["op"]
        if op == "exp":
            return "ok", {"op": op, "values": exponential_path(nu)}
        if op == "invert":
            side = cmd.get("side", "left")
            inv = left_jump_inversion(nu) if side == "left" else right_jump_inversion(nu)
            return "ok", {"op": op, "side": side, **inv.to_record()}
        alpha = np.asarray(cmd.get("alpha", np.ones(nu.n + 1)), dtype=float)
        direction = cmd.get("direction", "backward")
        fn = backward_gronwall_bound if direction == "backward" else forward_gronwall_bound
        return "ok", {"op": op, "direction": direction, "bound": fn(alpha, nu)}


def execute(scn: Scenario, seed: int | None = None, tol: float = 1e-10,
            max_iter: int = 10000) -> tuple[dict, int]:
    """Run every command; returns the report and the exit code."""
    seed = scn.seed if seed is None else seed
    seed = 0 if seed is None else seed
    runner = Runner(scn, seed, tol, max_iter)
    results = []
    code = EXIT_OK
    for i, cmd in enumerate(scn.commands):
        handler = getattr(runner, cmd["cmd"].replace("-", "_"))
        start = time.perf_counter()
        try:
            status, payload = handler(cmd, i)
        except (BsdeError, ValueError, ArithmeticError) as exc:
            status, payload = "error", {"error": type(exc).__name__, "message": str(exc)}
        rec = {"cmd": cmd["cmd"], "index": i, "status": status, **payload,
               "timing_s": time.perf_counter() - start}
        results.append(rec)
        if status == "error":
            code = EXIT_ERROR
        elif status == "fail" and code == EXIT_OK:
            code = EXIT_FAIL
    cross = []
    for (solver, name), sol in runner.solutions.items():
        other = runner.solutions.get(("oracle", name))
        if solver == "picard" and other is not None:
            p = scn.problems[name]
            cross.append({
                "problem": name,
                "max_abs_y": float(np.max(np.abs(sol.Y - other.Y))),
                "h2_z": h2_norm(sol.Z - other.Z, p.norm_clock, p.basis),
            })
    report = {"schema_version": SCHEMA_VERSION, "seed": seed, "tol": tol, "max_iter": max_iter,
              "results": results, "cross_checks": cross, "exit_code": code}
    return _clean(report), code


def strip_timing(report):
    """Copy of a report without wall-clock fields."""
    if isinstance(report, dict):
        return {k: strip_timing(v) for k, v in report.items() if k != "timing_s"}
    if isinstance(report, list):
        return [strip_timing(v) for v in report]
    return report


def render(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2) + "\n"


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bsdekit", description=__doc__.splitlines()[0])
    ap.add_argument("--scenario", required=True, help="path to a scenario JSON file")
    ap.add_argument("--seed", type=int, default=None, help="seed for randomized audits")
    ap.add_argument("--out", default=None, help="report path (default: stdout)")
    ap.add_argument("--tol", type=float, default=1e-10, help="solver tolerance")
    ap.add_argument("--max-iter", type=int, default=10000, help="iteration cap per solver loop")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.seed is not None and not (0 <= args.seed < 2 ** 64):
        print("seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_ERROR
    try:
        with open(args.scenario, encoding="utf-8") as fh:
            scn = parse_scenario(fh.read())
    except OSError as exc:
        print(f"cannot read scenario: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except SchemaError as exc:
        report = {"schema_version": SCHEMA_VERSION, "exit_code": EXIT_ERROR,
                  "errors": [{"path": p, "message": m} for p, m in exc.errors]}
        _emit(render(report), args.out)
        return EXIT_ERROR
    report, code = execute(scn, args.seed, args.tol, args.max_iter)
    _emit(render(report), args.out)
    return code


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)


if __name__ == "__main__":
    sys.exit(main())
