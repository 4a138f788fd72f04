"""Acceptance gate: one test per criterion, each reporting a PASS/FAIL line."""

import json
import subprocess
import sys
from pathlib import Path

import numpy as np

import conftest
from bsdekit.bsde import (
    BsdeProblem,
    absolutize_clock,
    rescale_clock,
    solve_backward_oracle,
    solve_picard,
    verify_a_priori_bound,
)
from bsdekit.cli import render, strip_timing
from bsdekit.compare import (
    ComparisonInstance,
    check_comparison_assumptions,
    check_strict_consequences,
    equality_event,
)
from bsdekit.drivers import AbsZDriver, LinearDriver, ZeroDriver
from bsdekit.expectation import ExpectationEngine, axiom_suite
from bsdekit.space import h2_norm, reference_clock, represent, stochastic_integral
from bsdekit.stieltjes import (
    StieltjesFunction,
    backward_gronwall_bound,
    exponential,
    exponential_path,
    forward_gronwall_bound,
    integrate,
    left_jump_inversion,
    right_jump_inversion,
    solve_linear_sde,
)

from strategies import (
    random_clock,
    random_comparison_pair,
    random_grid,
    random_model,
    random_standard_problem,
)
from test_stieltjes import backward_witness, forward_witness, gronwall_clock

ROOT = Path(__file__).resolve().parents[1]


def report(number, title, ok, detail):
    line = f"criterion {number} {'PASS' if ok else 'FAIL'} {title}: {detail}"
    conftest.ACCEPTANCE_LINES[number] = line
    print(line)
    assert ok, line


def rel_err(a, b):
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-300)))


def test_criterion_1_stieltjes_identities():
    rng = np.random.default_rng(101)
    worst_inv, worst_round, worst_exp, worst_sde = 0.0, 0.0, 0.0, 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 65))
        nu = StieltjesFunction(random_grid(rng, n), rng.uniform(-1, 1, n), rng.uniform(-0.9, 0.9, n))
        e = exponential_path(nu)
        worst_inv = max(worst_inv, rel_err(e * exponential_path(-left_jump_inversion(nu)), np.ones(n + 1)),
                        rel_err(exponential_path(-nu) * exponential_path(right_jump_inversion(nu)),
                                np.ones(n + 1)))
        back = right_jump_inversion(left_jump_inversion(nu))
        worst_round = max(worst_round, float(np.max(np.abs(back.atoms - nu.atoms))))
        worst_exp = max(worst_exp, float(np.max(e / np.exp(nu.values()) - 1.0)))
        s = int(rng.integers(0, n))
        path = solve_linear_sde(1.0, nu, s, n)
        for k in range(s + 1, n + 1):
            inc = path[k] - path[k - 1]
            worst_sde = max(worst_sde, abs(inc - integrate(path, nu, k - 1, k)) / max(1.0, abs(path[k - 1])))
    ok = worst_inv <= 1e-12 and worst_round <= 1e-12 and worst_exp <= 1e-12 and worst_sde <= 1e-12
    report(1, "Stieltjes identities (1000 functions)", ok,
           f"inverse identity {worst_inv:.1e}, tilde-bar {worst_round:.1e}, "
           f"E(nu)/exp(nu)-1 max {worst_exp:.1e}, SDE step {worst_sde:.1e} (tol 1e-12)")


def test_criterion_2_gronwall():
    rng = np.random.default_rng(202)
    viol_b = viol_f = 0
    closed = 0.0
    for _ in range(500):
        nu = gronwall_clock(rng, int(rng.integers(1, 40)))
        alpha = rng.uniform(1, 3, nu.n + 1)
        u = backward_witness(rng, alpha, nu)
        viol_b += int(np.any(u > backward_gronwall_bound(alpha, nu) * (1 + 1e-12)))
        u = forward_witness(rng, alpha, nu)
        viol_f += int(np.any(u > forward_gronwall_bound(alpha, nu) * (1 + 1e-12)))
        a = float(alpha[0])
        const = np.full(nu.n + 1, a)
        et = exponential_path(right_jump_inversion(nu))
        closed = max(closed, rel_err(backward_gronwall_bound(const, nu), a * et[-1] / et),
                     rel_err(forward_gronwall_bound(const, nu), a * exponential_path(nu)))
    ok = viol_b == 0 and viol_f == 0 and closed <= 1e-12
    report(2, "Gronwall bounds (500 backward + 500 forward)", ok,
           f"violations {viol_b}/{viol_f}, constant-alpha closed forms {closed:.1e} (tol 1e-12)")


def test_criterion_3_martingale_basis():
    rng = np.random.default_rng(303)
    orth = recon = iso = clk = 0.0
    nesting = True
    for _ in range(200):
        sp, b = random_model(rng, max_outcomes=64, max_steps=8, max_branch=4)
        for k in range(1, sp.n + 1):
            dM = b.increments[k - 1]
            cross = sp.conditional_expectation(dM[:, :, None] * dM[:, None, :], k - 1)
            target = np.einsum("wi,ij->wij", b.qv[k - 1], np.eye(b.d))
            orth = max(orth, float(np.max(np.abs(cross - target), initial=0.0)))
            live = b.qv[k - 1] > 0
            nesting &= bool(np.all(live[:, 1:] <= live[:, :-1]))
        N = sp.martingale(rng.standard_normal(sp.size))
        Z = represent(N, b)
        recon = max(recon, float(np.max(np.abs(N[0] + stochastic_integral(Z, b) - N))))
        Zr = rng.standard_normal((sp.n, sp.size, b.d))
        Zr = np.stack([sp.conditional_expectation(Zr[k], k) for k in range(sp.n)])
        h_ref = h2_norm(Zr, reference_clock(sp, b), b)
        I = stochastic_integral(Zr, b)[-1]
        iso = max(iso, abs(h_ref - float(sp.prob @ I ** 2)) / max(1.0, h_ref))
        clk = max(clk, abs(h2_norm(Zr, random_clock(rng, sp, b), b) - h_ref) / max(1.0, h_ref))
    ok = orth <= 1e-12 and recon <= 1e-12 and nesting and iso <= 1e-10 and clk <= 1e-10
    report(3, "martingale basis (200 spaces)", ok,
           f"orthogonality {orth:.1e}, reconstruction {recon:.1e}, nesting {nesting}, "
           f"isometry {iso:.1e}, clock independence {clk:.1e}")


def test_criterion_4_solver_equivalence():
    rng = np.random.default_rng(404)
    dy = dz = defect = ratio = 0.0
    for _ in range(200):
        p = random_standard_problem(rng, max_outcomes=256, max_steps=16, max_K=3, margin_lo=0.05)
        o = solve_backward_oracle(p)
        s = solve_picard(p, tol=1e-11)
        dy = max(dy, float(np.max(np.abs(o.Y - s.Y))))
        dz = max(dz, h2_norm(o.Z - s.Z, p.norm_clock, p.basis))
        defect = max(defect, s.diagnostics.defect)
        ratio = max(ratio, max(s.diagnostics.z_ratios, default=0.0))
    ok = dy <= 1e-8 and dz <= 1e-8 and defect <= 1e-8 and ratio <= 0.5 + 1e-6
    report(4, "Picard vs oracle (200 problems)", ok,
           f"max |dY| {dy:.1e}, h2(dZ) {dz:.1e}, defect {defect:.1e}, max Z-stage ratio {ratio:.1e} (limit 0.5)")


def test_criterion_5_linear_closed_form():
    rng = np.random.default_rng(505)
    worst = 0.0
    for _ in range(100):
        sp, b = random_model(rng, max_outcomes=64, max_steps=8)
        atoms = rng.uniform(0.05, 0.95, sp.n)
        beta = rng.uniform(-1, 1)
        Q = rng.standard_normal(sp.size)
        clock = StieltjesFunction.atomic(sp.grid, atoms)
        y0 = solve_backward_oracle(BsdeProblem(sp, b, clock, LinearDriver([[beta]]), Q)).Y[0, 0, 0]
        lhs = y0 * exponential(clock.scaled(-beta), sp.n)
        worst = max(worst, abs(lhs - float(sp.prob @ Q)))
    report(5, "linear closed form (100 instances)", worst <= 1e-10,
           f"max |Y0 E(-beta mu_T) - E[Q]| {worst:.1e} (tol 1e-10)")


def test_criterion_6_clock_transforms():
    rng = np.random.default_rng(606)
    w_resc = w_abs = 0.0
    for i in range(100):
        p = random_standard_problem(rng, max_outcomes=64, max_steps=8, signed=bool(i % 2))
        base = solve_backward_oracle(p)
        q = p if p.clock.is_nonnegative() else absolutize_clock(p)[0]
        r = rescale_clock(q, 0.05).problem
        sol = solve_backward_oracle(r)
        w_resc = max(w_resc, float(np.max(np.abs(sol.Y - base.Y))), float(np.max(np.abs(sol.Z - base.Z), initial=0.0)))
    for _ in range(100):
        p = random_standard_problem(rng, max_outcomes=64, max_steps=8, signed=True)
        base = solve_backward_oracle(p)
        sol = solve_backward_oracle(absolutize_clock(p)[0])
        w_abs = max(w_abs, float(np.max(np.abs(sol.Y - base.Y))), float(np.max(np.abs(sol.Z - base.Z), initial=0.0)))
    ok = w_resc <= 1e-9 and w_abs <= 1e-9
    report(6, "clock transforms (100 rescaled, 100 absolutized)", ok,
           f"rescale {w_resc:.1e}, absolutize {w_abs:.1e} (tol 1e-9)")


def test_criterion_7_comparison():
    rng = np.random.default_rng(707)
    found = tries = 0
    order = 0.0
    bound_fail = strict_fail = 0
    while found < 200 and tries < 2000:
        tries += 1
        p, pb = random_comparison_pair(rng, max_outcomes=64, max_steps=6)
        s = int(rng.integers(0, p.n))
        inst = ComparisonInstance(p, solve_backward_oracle(p), pb, solve_backward_oracle(pb), start=s)
        rep = check_comparison_assumptions(inst)
        if not rep.all_pass:
            continue
        found += 1
        order = max(order, float(max(0.0, -np.min(inst.solution.Y[s:] - inst.solution_bar.Y[s:]))))
        bound_fail += int(not verify_a_priori_bound(p, inst.solution, pb, inst.solution_bar).passed)
        try:
            check_strict_consequences(inst, equality_event(inst))
        except Exception:
            strict_fail += 1
    ok = found == 200 and order <= 1e-12 and bound_fail == 0 and strict_fail == 0
    report(7, "comparison (200 instances with a measure)", ok,
           f"{found} instances from {tries} draws, worst Y - Ybar shortfall {order:.1e}, "
           f"a-priori failures {bound_fail}, strict failures {strict_fail}")


def test_criterion_8_expectation_axioms():
    rng = np.random.default_rng(808)
    sp, b = random_model(rng, max_outcomes=64, max_steps=6)
    clock = reference_clock(sp, b)
    parts = []
    ok = True
    for name, drv in (("F=0", ZeroDriver()), ("F=0.1|z|", AbsZDriver(0.1))):
        rep = axiom_suite(ExpectationEngine(sp, b, clock, drv), trials=100, seed=8)
        ok &= rep["passed"]
        worst = max(rep["axioms"][a]["worst"] for a in ("monotonicity", "triviality", "tower", "zero_one"))
        parts.append(f"{name} worst {worst:.1e}")
    eng = ExpectationEngine(sp, b, clock, ZeroDriver())
    classical = 0.0
    for _ in range(100):
        Q = rng.standard_normal(sp.size)
        Y = eng.solve(Q)
        for t in range(sp.n + 1):
            classical = max(classical, float(np.max(np.abs(Y[t] - sp.conditional_expectation(Q, t)))))
    # agreement with the classical value is to machine precision
    ok &= classical <= 1e-14
    report(8, "nonlinear expectation axioms (100 trials per engine)", ok,
           ", ".join(parts) + f", F=0 vs classical {classical:.1e}")


def run_cli(seed, out):
    cmd = [sys.executable, "-m", "bsdekit", "--scenario", str(ROOT / "scenarios" / "reference.json"),
           "--seed", str(seed), "--out", str(out)]
    return subprocess.run(cmd, capture_output=True, text=True).returncode


def test_criterion_9_cli_determinism(tmp_path):
    codes = [run_cli(42, tmp_path / f"r{i}.json") for i in (1, 2)]
    texts = [render(strip_timing(json.loads((tmp_path / f"r{i}.json").read_text()))) for i in (1, 2)]
    ok = codes == [0, 0] and texts[0] == texts[1]
    report(9, "CLI determinism (reference scenario, seed 42)", ok,
           f"exit codes {codes}, identical reports {texts[0] == texts[1]}, {len(texts[0])} bytes")
