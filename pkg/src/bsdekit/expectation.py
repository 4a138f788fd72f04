"""Nonlinear expectations generated by y-independent drivers with ``F(y, 0) = 0``.

``E(Q | F_t)`` is the value at ``t`` of the BSDE solution with terminal value
``Q``; ``rho_t(Q) = -E(Q | F_t)`` is the associated dynamic risk measure.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bsde import BsdeProblem, solve_backward_oracle
from .drivers import Driver
from .errors import InvalidDriver
from .space import FiniteFilteredSpace, MartingaleBasis
from .stieltjes import StieltjesFunction

AXIOM_TOL = 1e-10


class ExpectationEngine:
    """Evaluate the nonlinear expectation induced by ``driver``.

    The constructor enforces ``c_t = 0`` and audits, on random inputs, that the
    driver ignores ``y``, vanishes at ``z = 0`` and commutes with indicators of
    previsible events (``1_A F(z) = F(1_A z)``).
    """

    def __init__(self, space: FiniteFilteredSpace, basis: MartingaleBasis,
                 clock: StieltjesFunction, driver: Driver, tol: float = 1e-13,
                 audit_samples: int = 16, seed: int = 0):
        self.space, self.basis, self.clock, self.driver = space, basis, clock, driver
        self.tol = tol
        if np.any(driver.lip_y_steps(space.n) != 0):
            raise InvalidDriver("nonlinear expectations need a driver with c_t = 0")
        probe = BsdeProblem(space, basis, clock, driver, np.zeros((space.size, driver.K)))
        self._psi = probe.psi
        self._audit(audit_samples, np.random.default_rng(seed))

    def _audit(self, samples: int, rng: np.random.Generator) -> None:
        size, K, d, n = self.space.size, self.driver.K, self.basis.d, self.space.n
        for _ in range(samples):
            k = int(rng.integers(1, n + 1))
            p = self._psi[k - 1]
            y1, y2 = rng.standard_normal((2, size, K))
            z = rng.standard_normal((size, K, d))
            f1 = self.driver(k, y1, z, p)
            if np.max(np.abs(f1 - self.driver(k, y2, z, p)), initial=0.0) > 1e-14:
                raise InvalidDriver("driver depends on y")
            if np.max(np.abs(self.driver(k, y1, np.zeros_like(z), p)), initial=0.0) > 1e-14:
                raise InvalidDriver("driver does not vanish at z = 0")
            A = rng.random(size) < 0.5
            lhs = A[:, None] * f1
            rhs = self.driver(k, y1, A[:, None, None] * z, p)
            if np.max(np.abs(lhs - rhs), initial=0.0) > 1e-14:
                raise InvalidDriver("driver does not commute with event indicators")

    def _terminal(self, Q) -> tuple[np.ndarray, bool]:
        Q = np.asarray(Q, dtype=float)
        return (Q[:, None], True) if Q.ndim == 1 else (Q, False)

    def solve(self, Q) -> np.ndarray:
        """``E(Q | F_t)`` for every ``t``, shape ``(n+1, outcomes[, K])``."""
        Qv, scalar = self._terminal(Q)
        prob = BsdeProblem(self.space, self.basis, self.clock, self.driver, Qv)
        Y = solve_backward_oracle(prob, tol=self.tol).Y
        return Y[..., 0] if scalar else Y

    def evaluate(self, Q, t: int) -> np.ndarray:
        out = self.solve(Q)[t]
        if not self.space.is_measurable(out, t, tol=1e-12):
            raise AssertionError(f"evaluation at step {t} is not F_{t}-measurable")
        return out

    def risk_measure(self, Q, t: int) -> np.ndarray:
        return -self.evaluate(Q, t)


@dataclass
class AxiomResult:
    trials: int = 0
    passed: int = 0
    worst: float = 0.0
    notes: list = field(default_factory=list)

    def record(self, violation: float, tol: float) -> None:
        self.trials += 1
        self.worst = max(self.worst, violation)
        if violation <= tol:
            self.passed += 1

    @property
    def ok(self) -> bool:
        return self.passed == self.trials

    def to_record(self) -> dict:
        return {"trials": self.trials, "passed": self.passed, "worst": self.worst,
                "ok": self.ok, "notes": list(self.notes)}


def random_terminal(space: FiniteFilteredSpace, K: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform on [-1, 1] per component, scaled by an outcome-dependent factor."""
    scale = 1.0 + np.arange(space.size) / space.size
    return rng.uniform(-1.0, 1.0, (space.size, K)) * scale[:, None]


def _random_event(space, t, rng):
    cells = space.cells(t)
    pick = rng.random(len(cells)) < 0.5
    A = np.zeros(space.size, dtype=bool)
    for c, take in zip(cells, pick):
        A[c] = take
    return A


def axiom_suite(engine: ExpectationEngine, trials: int = 100, seed: int = 0,
                tol: float = AXIOM_TOL) -> dict:
    """Randomized audit of monotonicity (with strictness), triviality, tower and zero-one law."""
    rng = np.random.default_rng(seed)
    space, K, n = engine.space, engine.driver.K, engine.space.n
    mono, triv, tower, zero_one = AxiomResult(), AxiomResult(), AxiomResult(), AxiomResult()
    strict = AxiomResult()
    strict_scope = K == 1 or engine.driver.componentwise
    if not strict_scope:
        strict.notes.append("strictness not checked: driver is neither scalar nor componentwise")
    for _ in range(trials):
        Q = random_terminal(space, K, rng)
        # monotonicity: Qbar <= Q with a sparse nonnegative gap
        gap = rng.uniform(0.01, 1.0, Q.shape) * (rng.random(Q.shape) < 0.3)
        EQ = engine.solve(Q)
        EQb = engine.solve(Q - gap)
        diff = EQ - EQb
        mono.record(float(max(0.0, -np.min(diff))), tol)
        if strict_scope:
            # equality on an F_t cell is allowed only where the terminal values agree
            hits = 0
            for t in range(n + 1):
                for cell in space.cells(t):
                    pos = np.any(gap[cell] > 0, axis=0)
                    hits += int(np.sum(pos & (diff[t][cell[0]] <= 0)))
            strict.record(float(hits), 0.0)
        # triviality: F_t-measurable terminal value
        t = int(rng.integers(0, n + 1))
        Qt = space.conditional_expectation(Q, t)
        triv.record(float(np.max(np.abs(engine.solve(Qt)[t] - Qt))), tol)
        # tower: E(E(Q|F_t)|F_s) = E(Q|F_s)
        s = int(rng.integers(0, t + 1))
        inner = EQ[t]
        tower.record(float(np.max(np.abs(engine.solve(inner)[s] - EQ[s]))), tol)
        # zero-one law on a random F_t event
        A = _random_event(space, t, rng)
        lhs = A[:, None] * EQ[t]
        rhs = engine.solve(A[:, None] * Q)[t]
        zero_one.record(float(np.max(np.abs(lhs - rhs))), tol)
    results = {"monotonicity": mono, "strictness": strict, "triviality": triv, "tower": tower,
               "zero_one": zero_one}
    return {
        "trials": trials,
        "seed": seed,
        "tol": tol,
        "axioms": {k: v.to_record() for k, v in results.items()},
        "passed": all(v.ok for v in results.values()),
    }
