"""Comparison of two BSDE solutions on a finite space.

Given solved problems ``(F, Q) -> (Y, Z)`` and ``(Fbar, Qbar) -> (Ybar, Zbar)`` on the
same space and clock, and a start step ``s``:

* ``d2f_m = F(Ybar_{m-1}, Zbar_m) - Fbar(Ybar_{m-1}, Zbar_m)``;
* ``X_r = -sum_{s<m<=r} [F(Ybar_{m-1}, Z_m) - F(Ybar_{m-1}, Zbar_m)] dmu_m
          + sum_{s<m<=r} (Z_m - Zbar_m) dM_m``;
* ``S_r = E~[Q - Qbar | F_r] + E~[sum_{m>r} d2f_m dmu_m | F_r] + X_r - E~[X_T | F_r]``

where ``E~`` is the expectation under a candidate measure for the component.
The comparison conclusion ``Y >= Ybar`` is asserted only after assumptions
(i) terminal order, (ii) driver order, (iii) supermartingale measure and
(iv) local order are all verified.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bsde import BsdeProblem, BsdeSolution, solve_backward_oracle
from .errors import AssumptionUnverifiable, SpaceMismatch, StrictnessViolated
from .space import seminorm_sq

FEAS_TOL = 1e-12
ORDER_TOL = 1e-10


@dataclass
class ComparisonInstance:
    problem: BsdeProblem
    solution: BsdeSolution
    problem_bar: BsdeProblem
    solution_bar: BsdeSolution
    start: int = 0
    densities: dict | None = None  # component -> MeasureResult or outcome weights

    def __post_init__(self):
        p, q = self.problem, self.problem_bar
        if p.space is not q.space or p.basis is not q.basis:
            raise SpaceMismatch("problems live on different spaces")
        if not p.clock == q.clock:
            raise SpaceMismatch("problems use different clocks")
        if p.K != q.K:
            raise SpaceMismatch("problems have different dimensions")
        if not (0 <= self.start <= p.n):
            raise SpaceMismatch(f"start step {self.start} outside 0..{p.n}")


@dataclass
class ComparisonProcesses:
    d2f: np.ndarray  # (n, outcomes, K); rows m <= s are zero
    X: np.ndarray    # (n+1, outcomes, K)
    drift: np.ndarray  # F(Ybar_-, Z) - F(Ybar_-, Zbar), (n, outcomes, K)


def build_comparison_processes(inst: ComparisonInstance) -> ComparisonProcesses:
    p, pb = inst.problem, inst.problem_bar
    Y, Z = inst.solution.Y, inst.solution.Z
    Yb, Zb = inst.solution_bar.Y, inst.solution_bar.Z
    n, size, K = p.n, p.space.size, p.K
    d2f = np.zeros((n, size, K))
    drift = np.zeros((n, size, K))
    X = np.zeros((n + 1, size, K))
    dM = p.basis.increments
    for m in range(1, n + 1):
        fz = p.F(m, Yb[m - 1], Z[m - 1])
        fzb = p.F(m, Yb[m - 1], Zb[m - 1])
        drift[m - 1] = fz - fzb
        if m > inst.start:
            d2f[m - 1] = fzb - pb.F(m, Yb[m - 1], Zb[m - 1])
            mart = np.einsum("wkd,wd->wk", Z[m - 1] - Zb[m - 1], dM[m - 1])
            X[m] = X[m - 1] - drift[m - 1] * p.dmu[m - 1] + mart
        else:
            X[m] = X[m - 1]
    return ComparisonProcesses(d2f, X, drift)


# -- equivalent measures ----------------------------------------------------------------

@dataclass
class MeasureResult:
    """Candidate equivalent measure for one component.

    ``weights`` maps ``(step, first outcome of parent cell)`` to conditional
    child weights; ``prob`` is the induced outcome distribution.  When no
    measure exists, ``found`` is False and ``witness`` names the offending node.
    """

    found: bool
    component: int
    prob: np.ndarray | None = None
    weights: dict = field(default_factory=dict)
    margin: float = 0.0
    witness: tuple | None = None

    def to_record(self) -> dict:
        rec = {"found": self.found, "component": self.component, "margin": self.margin}
        if self.witness is not None:
            rec["witness"] = {"step": self.witness[0], "cell": self.witness[1]}
        if self.prob is not None:
            rec["prob"] = self.prob.tolist()
        return rec


def node_weights(dx: np.ndarray, tol: float = FEAS_TOL):
    """Strictly positive weights ``q`` with ``sum q dx <= 0``, or None if impossible."""
    m = dx.size
    if np.max(dx) <= tol:
        return np.full(m, 1.0 / m)
    vmin = float(np.min(dx))
    if vmin >= 0:
        return None
    delta = min(1.0 / (2 * m), abs(vmin) / (2 * m * float(np.max(np.abs(dx)))))
    q = np.full(m, delta)
    q[int(np.argmin(dx))] = 1.0 - (m - 1) * delta
    return q


def find_supermartingale_measure(inst: ComparisonInstance, j: int, X=None,
                                 tol: float = FEAS_TOL) -> MeasureResult:
    """Exact per-node search for an equivalent measure making ``X^j`` a supermartingale."""
    space = inst.problem.space
    if X is None:
        X = build_comparison_processes(inst).X
    x = X[..., j]
    cond_child = np.ones(space.size)  # product of conditional weights along each path
    weights = {}
    margin = np.inf
    for k in range(1, space.n + 1):
        for parent in space.cells(k - 1):
            kids = space.children(k, parent)
            pc = np.array([space.prob[c].sum() for c in kids])
            if k <= inst.start:
                q = pc / pc.sum()
            else:
                dx = np.array([x[k, c[0]] - x[k - 1, c[0]] for c in kids])
                scale = max(1.0, float(np.max(np.abs(x[k - 1]), initial=0.0)))
                q = node_weights(dx, tol * scale)
                if q is None:
                    return MeasureResult(False, j, witness=(k, int(parent[0])))
                margin = min(margin, -float(q @ dx))
            weights[(k, int(parent[0]))] = q
            for c, qc in zip(kids, q):
                cond_child[c] *= qc
    # final cells are singletons, so the path products are the outcome weights
    prob = cond_child / cond_child.sum()
    return MeasureResult(True, j, prob, weights, float(0.0 if margin == np.inf else margin))


def _cond_exp(space, weights: np.ndarray, X: np.ndarray, k: int) -> np.ndarray:
    lab = space.labels[k]
    same = lab[:, None] == lab[None, :]
    w = np.where(same, weights[None, :], 0.0)
    A = w / w.sum(axis=1, keepdims=True)
    return np.tensordot(A, X, axes=(1, 0))


def build_S(inst: ComparisonInstance, j: int, prob: np.ndarray, procs=None) -> np.ndarray:
    """Component ``j`` of ``S`` under the outcome distribution ``prob`` (shape (n+1, outcomes))."""
    procs = build_comparison_processes(inst) if procs is None else procs
    p = inst.problem
    space, n = p.space, p.n
    dQ = p.terminal[:, j] - inst.problem_bar.terminal[:, j]
    f = procs.d2f[..., j] * p.dmu[:, None]  # (n, outcomes)
    tail = np.concatenate([np.cumsum(f[::-1], axis=0)[::-1], np.zeros((1, space.size))])
    xj = procs.X[..., j]
    S = np.empty((n + 1, space.size))
    for r in range(n + 1):
        S[r] = (_cond_exp(space, prob, dQ, r) + _cond_exp(space, prob, tail[r], r)
                + xj[r] - _cond_exp(space, prob, xj[-1], r))
    return S


def local_difference(inst: ComparisonInstance, j: int, prob: np.ndarray) -> np.ndarray:
    """``E~[sum_{m>r} (F(Y_{m-1}, Z_m) - F(Ybar_{m-1}, Z_m)) dmu_m | F_r]`` for component j."""
    p = inst.problem
    Y, Z, Yb = inst.solution.Y, inst.solution.Z, inst.solution_bar.Y
    f = np.stack([(p.F(m, Y[m - 1], Z[m - 1]) - p.F(m, Yb[m - 1], Z[m - 1]))[:, j] * p.dmu[m - 1]
                  for m in range(1, p.n + 1)])
    tail = np.concatenate([np.cumsum(f[::-1], axis=0)[::-1], np.zeros((1, p.space.size))])
    return np.stack([_cond_exp(p.space, prob, tail[r], r) for r in range(p.n + 1)])


# -- assumption checks ------------------------------------------------------------------

@dataclass
class ComparisonReport:
    statuses: dict           # "i".."iv" -> "pass" | "fail" | "unverified"
    measures: list
    conclusion_checked: bool
    conclusion_holds: bool | None
    max_violation: float
    processes: ComparisonProcesses
    details: dict = field(default_factory=dict)

    @property
    def all_pass(self) -> bool:
        return all(v == "pass" for v in self.statuses.values())

    def to_record(self) -> dict:
        return {
            "assumptions": dict(self.statuses),
            "measures": [m.to_record() for m in self.measures],
            "conclusion_checked": self.conclusion_checked,
            "conclusion_holds": self.conclusion_holds,
            "max_violation": self.max_violation,
            "details": self.details,
        }


def local_order_status(driver, K: int) -> str:
    """Sufficient conditions for assumption (iv) that hold for every solution pair."""
    if K == 1 or getattr(driver, "componentwise", False) or not driver.depends_on_y:
        return "pass"
    return "unverified"


def check_comparison_assumptions(inst: ComparisonInstance, tol: float = ORDER_TOL,
                                 raise_unverifiable: bool = False) -> ComparisonReport:
    p, pb = inst.problem, inst.problem_bar
    s, K = inst.start, p.K
    procs = build_comparison_processes(inst)
    statuses = {}
    details = {}
    gap_q = float(np.min(p.terminal - pb.terminal))
    statuses["i"] = "pass" if gap_q >= -tol else "fail"
    details["min_terminal_gap"] = gap_q
    weighted = procs.d2f * p.dmu[:, None, None]
    gap_f = float(np.min(weighted[s:], initial=0.0))
    statuses["ii"] = "pass" if gap_f >= -tol else "fail"
    details["min_driver_gap"] = gap_f
    measures = []
    ok3 = True
    for j in range(K):
        given = (inst.densities or {}).get(j)
        if given is not None:
            res = _verify_given_measure(inst, j, given, procs.X, tol)
        else:
            res = find_supermartingale_measure(inst, j, procs.X)
        measures.append(res)
        ok3 &= res.found
    statuses["iii"] = "pass" if ok3 else "fail"
    statuses["iv"] = local_order_status(p.driver, K)
    if statuses["iv"] == "unverified" and raise_unverifiable:
        raise AssumptionUnverifiable("local order (iv) has no finite check for this vector driver")
    checked = all(v == "pass" for v in statuses.values())
    holds = None
    worst = 0.0
    if checked:
        diff = inst.solution.Y[s:] - inst.solution_bar.Y[s:]
        worst = float(max(0.0, -np.min(diff)))
        holds = worst <= tol
    return ComparisonReport(statuses, measures, checked, holds, worst, procs, details)


def _verify_given_measure(inst, j, given, X, tol) -> MeasureResult:
    """Check user-supplied outcome weights make ``X^j`` a supermartingale from ``s`` on."""
    prob = np.asarray(given.prob if isinstance(given, MeasureResult) else given, dtype=float)
    space = inst.problem.space
    if np.any(prob <= 0) or abs(prob.sum() - 1.0) > 1e-12:
        return MeasureResult(False, j, witness=(0, 0))
    x = X[..., j]
    margin = np.inf
    for k in range(inst.start + 1, space.n + 1):
        drift = _cond_exp(space, prob, x[k], k - 1) - x[k - 1]
        if np.max(drift) > tol:
            w = int(np.argmax(drift))
            return MeasureResult(False, j, witness=(k, w))
        margin = min(margin, -float(np.max(drift)))
    return MeasureResult(True, j, prob, {}, float(0.0 if margin == np.inf else margin))


def check_supermartingale(inst: ComparisonInstance, result: MeasureResult, X=None,
                          tol: float = FEAS_TOL) -> float:
    """Largest conditional drift of ``X^j`` under the found measure (<= tol when valid)."""
    X = build_comparison_processes(inst).X if X is None else X
    space = inst.problem.space
    x = X[..., result.component]
    worst = -np.inf
    for k in range(inst.start + 1, space.n + 1):
        drift = _cond_exp(space, result.prob, x[k], k - 1) - x[k - 1]
        worst = max(worst, float(np.max(drift)))
    return worst


# -- strict comparison ---------------------------------------------------------------------

@dataclass
class StrictReport:
    event_size: int
    terminal_gap: float
    driver_gap: float
    z_gap: float
    y_gap: float | None

    def to_record(self) -> dict:
        return dict(self.__dict__)


def equality_event(inst: ComparisonInstance, tol: float = 1e-9) -> np.ndarray:
    """Outcomes where ``Y_s = Ybar_s`` in every component."""
    s = inst.start
    return np.all(np.abs(inst.solution.Y[s] - inst.solution_bar.Y[s]) <= tol, axis=1)


def check_strict_consequences(inst: ComparisonInstance, event, tol: float = 1e-9) -> StrictReport:
    """On an ``F_s``-event where ``Y_s = Ybar_s``, check the forced equalities.

    Raises :class:`StrictnessViolated` with the first witness found.
    """
    p, pb = inst.problem, inst.problem_bar
    s, n = inst.start, p.n
    A = np.asarray(event, dtype=bool)
    if not p.space.is_measurable(A.astype(float), s, tol=1e-12):
        raise ValueError(f"event is not F_{s}-measurable")
    Y, Yb = inst.solution.Y, inst.solution_bar.Y
    if np.any(np.abs(Y[s][A] - Yb[s][A]) > tol):
        raise ValueError("Y_s and Ybar_s differ on the event")
    idx = np.flatnonzero(A)
    if idx.size == 0:
        return StrictReport(0, 0.0, 0.0, 0.0, 0.0 if p.K == 1 else None)
    dq = np.abs(p.terminal - pb.terminal)[idx]
    tq = float(np.max(dq))
    if tq > tol:
        w = idx[int(np.argmax(np.max(dq, axis=1)))]
        raise StrictnessViolated("terminal", n, int(w), tq)
    procs = build_comparison_processes(inst)
    tf, tz, ty = 0.0, 0.0, 0.0
    for m in range(s + 1, n + 1):
        if p.dmu[m - 1] != 0:
            df = np.max(np.abs(procs.d2f[m - 1][idx]), axis=1)
            if np.max(df) > tol:
                raise StrictnessViolated("driver", m, int(idx[np.argmax(df)]), float(np.max(df)))
            tf = max(tf, float(np.max(df)))
        dz = seminorm_sq((inst.solution.Z - inst.solution_bar.Z)[m - 1], p.psi[m - 1])[idx]
        dz = np.sqrt(np.maximum(dz, 0.0))
        if np.max(dz) > tol:
            raise StrictnessViolated("z", m, int(idx[np.argmax(dz)]), float(np.max(dz)))
        tz = max(tz, float(np.max(dz)))
    y_gap = None
    if p.K == 1:
        dy = np.abs(Y[s:, idx, 0] - Yb[s:, idx, 0])
        ty = float(np.max(dy))
        if ty > tol:
            r, w = np.unravel_index(int(np.argmax(dy)), dy.shape)
            raise StrictnessViolated("y", s + int(r), int(idx[w]), ty)
        y_gap = ty
    return StrictReport(int(idx.size), tq, tf, tz, y_gap)


def balanced_falsifier(problem: BsdeProblem, trials: int = 20,
                       rng: np.random.Generator | None = None) -> dict:
    """Search random solution pairs for a failure of the measure assumption.

    A driver is balanced when assumptions (iii) and (iv) hold for all solution
    pairs, which no finite check decides; this reports a witness or
    "no counterexample in N trials".
    """
    rng = np.random.default_rng(0) if rng is None else rng
    size, K = problem.space.size, problem.K
    status = local_order_status(problem.driver, K)
    for t in range(trials):
        Q1 = rng.uniform(-1, 1, (size, K))
        Q2 = rng.uniform(-1, 1, (size, K))
        p1, p2 = problem.with_terminal(Q1), problem.with_terminal(Q2)
        inst = ComparisonInstance(p1, solve_backward_oracle(p1), p2, solve_backward_oracle(p2))
        X = build_comparison_processes(inst).X
        for j in range(K):
            res = find_supermartingale_measure(inst, j, X)
            if not res.found:
                return {"balanced": False, "trial": t, "component": j,
                        "witness": {"step": res.witness[0], "cell": res.witness[1]},
                        "local_order": status}
    return {"balanced": None, "trials": trials,
            "note": f"no counterexample in {trials} trials", "local_order": status}
