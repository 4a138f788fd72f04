"""BSDEs driven by grid Stieltjes clocks on finite filtered spaces.

The equation solved is ``Q = Y_t - int_{]t,T]} F(u, Y_{u-}, Z_u) d mu_u + sum_i int_{]t,T]} Z^i dM^i``.
On a purely atomic grid clock this is the one-step recursion

    Y_{k-1} = E[Y_k | F_{k-1}] + F(k, Y_{k-1}, Z_k) Delta mu_k,
    Z_k     = representation of Y_k - E[Y_k | F_{k-1}].

Two solvers are provided: :func:`solve_backward_oracle` iterates the implicit
one-step equation node by node, and :func:`solve_picard` runs the two-stage
(Z then Y) contraction scheme with explicit weighted norms, after the clock
transforms needed to bring a quadratic firm bound into the linear setting.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .drivers import Driver, ScaledDriver, audit_lipschitz
from .errors import MarginViolated, NoConvergence, NotStandard, SpaceMismatch
from .space import (
    FiniteFilteredSpace,
    MartingaleBasis,
    psi as psi_density,
    reference_clock,
    represent_increment,
    seminorm_sq,
)
from .stieltjes import StieltjesFunction, TimeGrid, exponential_path, right_jump_inversion

RATIO_FLOOR = 1e-24


def _charges_variation(clock: StieltjesFunction, basis: MartingaleBasis) -> bool:
    active = np.any(basis.qv > 0, axis=(1, 2))
    return bool(np.all(clock.atoms[active] > 0))


@dataclass
class BsdeProblem:
    """Driver, terminal value and clock on a finite space.

    ``clock`` is atomized on construction.  ``norm_clock`` fixes the seminorm
    ``||.||_M`` seen by the driver; it defaults to the clock itself when that
    is nonnegative and charges every jump of ``<M>``, else to the reference
    clock of the space.
    """

    space: FiniteFilteredSpace
    basis: MartingaleBasis
    clock: StieltjesFunction
    driver: Driver
    terminal: np.ndarray
    norm_clock: StieltjesFunction | None = None

    def __post_init__(self):
        if self.clock.grid != self.space.grid:
            raise SpaceMismatch("clock and space live on different grids")
        if self.basis.space is not self.space:
            raise SpaceMismatch("basis was built for a different space")
        self.clock = self.clock.atomized()
        Q = np.asarray(self.terminal, dtype=float)
        if Q.ndim == 1:
            Q = Q[:, None]
        if Q.shape != (self.space.size, self.driver.K):
            raise SpaceMismatch(f"terminal shape {Q.shape} != ({self.space.size}, {self.driver.K})")
        self.terminal = Q
        if self.norm_clock is None:
            if self.clock.is_nonnegative() and _charges_variation(self.clock, self.basis):
                self.norm_clock = self.clock
            else:
                self.norm_clock = reference_clock(self.space, self.basis)
        self.norm_clock = self.norm_clock.atomized()
        self.psi = psi_density(self.norm_clock, self.basis)

    @property
    def K(self) -> int:
        return self.driver.K

    @property
    def n(self) -> int:
        return self.space.n

    @property
    def dmu(self) -> np.ndarray:
        return self.clock.atoms

    def F(self, k: int, y, z) -> np.ndarray:
        return self.driver(k, y, z, self.psi[k - 1])

    def z_constant(self) -> np.ndarray:
        """Per-step z-constant of ``F`` measured in the seminorm of ``clock``.

        ``||z||_M^2`` scales like ``1/Delta mu``, so a constant declared against
        the norm clock becomes ``c * Delta mu / Delta mu_norm``.
        """
        lip = self.driver.lip_z_steps(self.n)
        norm = self.norm_clock.atoms
        ratio = np.where(norm > 0, np.abs(self.dmu) / np.where(norm > 0, norm, 1.0), 0.0)
        return lip * ratio

    def with_terminal(self, Q) -> "BsdeProblem":
        return BsdeProblem(self.space, self.basis, self.clock, self.driver, Q, self.norm_clock)


@dataclass
class Diagnostics:
    solver: str
    outer_iterations: int = 0
    inner_iterations: list = field(default_factory=list)
    z_ratios: list = field(default_factory=list)
    y_ratios: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    blocks: list = field(default_factory=list)
    y_contraction_bound: float | None = None
    transforms: list = field(default_factory=list)
    defect: float = float("nan")

    def to_record(self) -> dict:
        return {
            "solver": self.solver,
            "outer_iterations": self.outer_iterations,
            "inner_iterations": list(self.inner_iterations),
            "max_z_ratio": max(self.z_ratios, default=None),
            "max_y_ratio": max(self.y_ratios, default=None),
            "residuals": [float(r) for r in self.residuals],
            "blocks": [list(b) for b in self.blocks],
            "y_contraction_bound": self.y_contraction_bound,
            "transforms": list(self.transforms),
            "defect": float(self.defect),
        }


@dataclass
class BsdeSolution:
    Y: np.ndarray  # (n+1, outcomes, K)
    Z: np.ndarray  # (n, outcomes, K, d)
    diagnostics: Diagnostics

    def to_record(self) -> dict:
        return {
            "Y": self.Y.tolist(),
            "Z": self.Z.tolist(),
            "diagnostics": self.diagnostics.to_record(),
        }


# -- standardness ---------------------------------------------------------------

@dataclass
class StandardReport:
    mode: str
    passed: bool
    f0_integral: float
    firm_max: float
    margin: float
    mu_T: float
    nonnegative: bool
    support_ok: bool
    audit_ratio: float
    reasons: list

    def to_record(self) -> dict:
        return {
            "mode": self.mode,
            "passed": self.passed,
            "f0_integral": self.f0_integral,
            "firm_max": self.firm_max,
            "margin": self.margin,
            "mu_T": self.mu_T,
            "nonnegative": self.nonnegative,
            "support_ok": self.support_ok,
            "audit_ratio": self.audit_ratio,
            "reasons": list(self.reasons),
        }


def check_standard(problem: BsdeProblem, mode: str = "quadratic", samples: int = 32,
                   rng: np.random.Generator | None = None) -> StandardReport:
    """Verify the firm Lipschitz conditions for ``mode`` in {"linear", "quadratic"}.

    The Lipschitz audit is advisory and never changes the verdict; the declared
    constants are authoritative.
    """
    if mode not in ("linear", "quadratic"):
        raise ValueError(f"unknown mode {mode!r}")
    n, space = problem.n, problem.space
    dmu = problem.dmu
    ct = problem.driver.lip_y_steps(n)
    zeros_y = np.zeros((space.size, problem.K))
    zeros_z = np.zeros((space.size, problem.K, problem.basis.d))
    f0 = sum(
        float(space.prob @ np.sum(problem.F(k, zeros_y, zeros_z) ** 2, axis=1)) * abs(dmu[k - 1])
        for k in range(1, n + 1)
    )
    firm = ct * np.abs(dmu) if mode == "linear" else ct * dmu ** 2
    firm_max = float(np.max(firm, initial=0.0))
    mu_T = float(problem.clock.values()[-1])
    nonneg = problem.clock.is_nonnegative()
    support = _charges_variation(problem.clock, problem.basis)
    audit = audit_lipschitz(problem.driver, problem.psi, samples, rng) if problem.basis.d or n else 0.0
    reasons = []
    if not np.isfinite(f0):
        reasons.append("driver at (0, 0) is not square integrable")
    if not firm_max < 1.0:
        k = int(np.argmax(firm)) + 1
        what = "c_t * dmu" if mode == "linear" else "c_t * dmu^2"
        reasons.append(f"firm bound fails at step {k}: {what} = {firm_max:.6g} >= 1")
    if mode == "linear":
        if not nonneg:
            reasons.append("clock is signed")
        if mu_T > 1.0 + 1e-12:
            reasons.append(f"mu_T = {mu_T:.6g} > 1")
        if not support:
            reasons.append("clock does not charge every jump of <M^1>")
        if not np.all(dmu > 0):
            reasons.append("some grid step carries no clock mass")
    return StandardReport(mode, not reasons, f0, firm_max, 1.0 - firm_max, mu_T, nonneg,
                          support, audit, reasons)


# -- oracle -------------------------------------------------------------------

def _step_increment(problem: BsdeProblem, Yk: np.ndarray, k: int):
    cond = problem.space.conditional_expectation(Yk, k - 1)
    Z = represent_increment(Yk - cond, k, problem.basis)
    return cond, Z


def solve_backward_oracle(problem: BsdeProblem, tol: float = 1e-12, max_inner: int = 10000,
                          init: str = "conditional") -> BsdeSolution:
    """Exact backward recursion, solving the implicit step by fixed-point iteration.

    ``init`` chooses the starting point of each one-step iteration:
    ``"conditional"`` (``E[Y_k | F_{k-1}]``) or ``"zero"``.
    """
    rep = check_standard(problem, "quadratic", samples=0)
    if not rep.passed:
        raise NotStandard(rep, "; ".join(rep.reasons))
    n, size, K, d = problem.n, problem.space.size, problem.K, problem.basis.d
    Y = np.zeros((n + 1, size, K))
    Z = np.zeros((n, size, K, d))
    Y[n] = problem.terminal
    ct = problem.driver.lip_y_steps(n)
    diag = Diagnostics("oracle")
    for k in range(n, 0, -1):
        cond, Zk = _step_increment(problem, Y[k], k)
        Z[k - 1] = Zk
        dmu = problem.dmu[k - 1]
        L = np.sqrt(ct[k - 1]) * abs(dmu)
        y = cond.copy() if init == "conditional" else np.zeros_like(cond)
        exact = L == 0.0 or not problem.driver.depends_on_y
        count = 0
        while True:
            count += 1
            y_new = cond + problem.F(k, y, Zk) * dmu
            gap = np.max(np.abs(y_new - y), axis=1)
            y = y_new
            if exact or np.max(gap, initial=0.0) <= tol * (1.0 - L):
                break
            if count >= max_inner:
                cell = int(np.argmax(gap))
                raise NoConvergence("oracle", step=k, cell=cell, iterations=count,
                                    residual=float(gap[cell]))
        diag.inner_iterations.append(count)
        Y[k - 1] = y
    diag.inner_iterations.reverse()
    diag.defect = bsde_defect(problem, Y, Z)
    return BsdeSolution(Y, Z, diag)


def bsde_defect(problem: BsdeProblem, Y, Z) -> float:
    """Max pathwise violation of ``Y_{k-1} = Y_k + F Delta mu_k - Z_k Delta M_k``."""
    worst = 0.0
    dM = problem.basis.increments
    for k in range(1, problem.n + 1):
        mart = np.einsum("wkd,wd->wk", Z[k - 1], dM[k - 1])
        rhs = Y[k] + problem.F(k, Y[k - 1], Z[k - 1]) * problem.dmu[k - 1] - mart
        worst = max(worst, float(np.max(np.abs(Y[k - 1] - rhs), initial=0.0)))
    return worst


# -- contraction weights ---------------------------------------------------------

@dataclass(frozen=True)
class ContractionWeights:
    upsilon: StieltjesFunction
    rho: StieltjesFunction
    pi: StieltjesFunction
    x_inv_cont: np.ndarray   # x^{-1} on open intervals (no atom)
    x_inv_atom: np.ndarray   # x^{-1} at grid points
    w: float


def _weights_from(clock, c, c_t, h_cont, h_atom, w) -> ContractionWeights:
    """Build (upsilon, rho, pi) from ``h = x^{-1} - Delta mu`` on both parts of the clock."""
    n = clock.n
    ct = np.broadcast_to(np.asarray(c_t, dtype=float), (n,))
    mc, ma = clock.cont, clock.atoms
    x_cont = 1.0 / h_cont
    x_atom = 1.0 / (h_atom + ma)
    ups_cont = (h_cont * (1 + w) * ct + x_cont) * mc
    ups_atom = (h_atom * (1 + w) * ct + x_atom) * ma
    if np.any(ups_atom >= 1.0):
        k = int(np.argmax(ups_atom >= 1.0)) + 1
        raise MarginViolated(f"Delta upsilon = {ups_atom[k - 1]:.6g} >= 1 at step {k}")
    inv = 1.0 / (1.0 - ups_atom)
    rho_c, rho_a = 1.0 - h_cont * (1 + w) * c, 1.0 - h_atom * (1 + w) * c
    if np.any(rho_c * mc < 0) or np.any(rho_a * ma < 0):
        raise MarginViolated("rho would be a signed measure")
    pi_c, pi_a = h_cont * (1 + 1 / w), h_atom * (1 + 1 / w)
    grid = clock.grid
    return ContractionWeights(
        StieltjesFunction(grid, ups_cont, ups_atom),
        StieltjesFunction(grid, rho_c * mc, rho_a * ma * inv),
        StieltjesFunction(grid, pi_c * mc, pi_a * ma * inv),
        np.broadcast_to(h_cont, (n,)).copy(),
        h_atom + ma,
        w,
    )


def contraction_weights(clock: StieltjesFunction, c: float, c_t=0.0, stage: str = "z",
                        eps: float | None = None, firm=None) -> ContractionWeights:
    """Weight functions for the Z- or Y-stage contraction estimates.

    Z-stage: ``w = 1``, ``x^{-1} = 1/(4c) + Delta mu``.
    Y-stage: ``w = 3/eps``, ``x^{-1} = Delta mu + 1/(2c(1+w))``.  The spacing
    ``1/(2c(1+w))`` keeps ``rho`` nonnegative; with it the Y-stage map contracts
    by at most ``1 - eps/2 - eps^2/3 <= 1 - eps^2/4`` on clocks with ``mu_T <= 1``.
    ``firm`` (per-step ``c_s``) is checked against ``c_s Delta mu_s <= 1 - eps``.
    """
    if not clock.is_nonnegative():
        raise MarginViolated("contraction weights need a nonnegative clock")
    if c <= 0:
        raise ValueError("z-constant must be positive")
    n = clock.n
    if stage == "z":
        w = 1.0
        h = np.full(n, 1.0 / (4.0 * c))
    elif stage == "y":
        if eps is None or not (0 < eps < 1):
            raise ValueError("Y-stage weights need a margin 0 < eps < 1")
        w = 3.0 / eps
        h = np.full(n, 1.0 / (2.0 * c * (1.0 + w)))
        if firm is not None:
            fm = np.asarray(firm, dtype=float) * clock.atoms
            if np.any(fm > 1.0 - eps + 1e-15):
                k = int(np.argmax(fm)) + 1
                raise MarginViolated(f"c_s * dmu_s = {fm[k - 1]:.6g} exceeds 1 - eps at step {k}")
    else:
        raise ValueError(f"unknown stage {stage!r}")
    return _weights_from(clock, c, c_t, h, h, w)


def y_contraction_bound(clock: StieltjesFunction, c: float, firm, eps: float) -> float:
    """``max_s mu_s c_s x_s^{-1} (1 + 1/w)`` for the Y-stage weights."""
    wts = contraction_weights(clock, c, 0.0, "y", eps, firm)
    mu = clock.values()[1:]
    return float(np.max(mu * np.asarray(firm) * wts.x_inv_atom * (1 + 1 / wts.w), initial=0.0))


# -- clock transforms ---------------------------------------------------------------

def absolutize_clock(problem: BsdeProblem) -> tuple[BsdeProblem, np.ndarray]:
    """Replace a signed clock by ``mu_bar = E<M^1> + t + |mu|`` and the driver by ``lam F``.

    ``lam = Delta mu / Delta mu_bar`` so that ``lam F d mu_bar = F d mu``.
    """
    space, basis = problem.space, problem.basis
    eqv = space.expectation(np.moveaxis(basis.qv[:, :, 0], 1, 0)) if basis.d else np.zeros(problem.n)
    bar = eqv + space.grid.dt + np.abs(problem.dmu)
    lam = problem.dmu / bar
    if np.any(np.abs(lam) > 1.0):
        raise MarginViolated("|lam| > 1 after absolutizing")
    ct = problem.driver.lip_y_steps(problem.n)
    before, after = ct * problem.dmu ** 2, ct * lam ** 2 * bar ** 2
    if not np.allclose(before, after, rtol=1e-12, atol=1e-15):
        raise MarginViolated("quadratic firm bound not preserved")
    mu_bar = StieltjesFunction(space.grid, np.zeros(problem.n), bar, nonnegative=True)
    new = BsdeProblem(space, basis, mu_bar, ScaledDriver(problem.driver, lam), problem.terminal,
                      problem.norm_clock)
    return new, lam


@dataclass
class ClockRescaling:
    problem: BsdeProblem
    lam: np.ndarray
    splits: list
    eta: float
    eps: float
    c_eff: float


def rescale_clock(problem: BsdeProblem, eps: float) -> ClockRescaling:
    """Rescale the clock so that the quadratic firm bound becomes a linear one.

    Uses ``lam_t = (eps + 2(1+1/eps) c Delta mu_t) / (2(1+1/eps) c)`` and
    ``nu = int lam^{-1} d mu``; the driver becomes ``lam F``.  Also returns a
    splitting ``0 = t_0 < ... < t_B = T`` (as step indices) with
    ``nu(]t_i, t_{i+1}]) <= 1 - eta``.
    """
    if not problem.clock.is_nonnegative():
        raise MarginViolated("rescaling needs a nonnegative clock; absolutize first")
    if not (0 < eps < 1):
        raise MarginViolated("margin eps must lie in ]0, 1[")
    n = problem.n
    dmu = problem.dmu
    ct = problem.driver.lip_y_steps(n)
    quad = ct * dmu ** 2
    if np.any(quad > 1.0 - eps + 1e-15):
        k = int(np.argmax(quad)) + 1
        raise MarginViolated(f"c_t * dmu^2 = {quad[k - 1]:.6g} exceeds 1 - eps at step {k}")
    c_eff = max(float(np.max(ct, initial=0.0)), float(np.max(problem.z_constant(), initial=0.0)), 1.0)
    a = 2.0 * (1.0 + 1.0 / eps) * c_eff
    lam = (eps + a * dmu) / a
    dnu = dmu / lam
    if np.any(dnu >= 1.0):
        raise MarginViolated("rescaled clock has a jump >= 1")
    cbar = lam ** 2 * ct
    if np.any(cbar * dnu > 1.0 - 0.75 * eps ** 2 + 1e-12) or np.any(cbar > 1.0 - 0.75 * eps ** 2 + 1e-12):
        raise MarginViolated("rescaled firm bound exceeds 1 - 3 eps^2 / 4")
    nu = StieltjesFunction(problem.space.grid, np.zeros(n), dnu, nonnegative=True)
    new = BsdeProblem(problem.space, problem.basis, nu, ScaledDriver(problem.driver, lam),
                      problem.terminal, problem.norm_clock)
    eta = min(0.5, 1.0 - float(np.max(dnu, initial=0.0)))
    splits = [n]
    acc = 0.0
    for k in range(n, 0, -1):
        if acc + dnu[k - 1] > 1.0 - eta:
            splits.append(k)
            acc = 0.0
        acc += dnu[k - 1]
    splits.append(0)
    splits = sorted(set(splits))
    return ClockRescaling(new, lam, splits, eta, eps, c_eff)


# -- Picard solver ------------------------------------------------------------------

def _sweep(problem, Yb, a, b, frozen, Z):
    """Block solve with a known driver: returns (V, Znew) on steps a..b."""
    V = np.empty((b - a + 1,) + Yb.shape)
    Znew = np.empty((b - a,) + Z.shape[1:])
    V[-1] = Yb
    for k in range(b, a, -1):
        cond, Zk = _step_increment(problem, V[k - a], k)
        Znew[k - a - 1] = Zk
        f = problem.F(k, frozen[k - a - 1], Z[k - a - 1]) * problem.dmu[k - 1]
        V[k - a - 1] = cond + f
    return V, Znew


def _z_norm(problem, dZ, a, b, factor):
    """``sum_m E[sum_i |dZ^i|^2 Delta<M^i>] * factor_m`` over block steps."""
    qv = problem.basis.qv[a:b]  # (steps, outcomes, d)
    dens = np.sum(np.sum(dZ ** 2, axis=2) * qv, axis=2)  # (steps, outcomes)
    return float(np.sum((dens @ problem.space.prob) * factor))


def _y_norm(problem, dY, a, b, factor):
    dens = np.sum(dY[:-1] ** 2, axis=2) @ problem.space.prob  # Y_{m-1}, m = a+1..b
    return float(np.sum(dens * factor * problem.dmu[a:b]))


def _block_clock(problem, a, b):
    atoms = problem.dmu[a:b].copy()
    grid = TimeGrid(problem.space.grid.times[a:b + 1] - problem.space.grid.times[a])
    return StieltjesFunction(grid, np.zeros(b - a), atoms, nonnegative=True)


def _solve_block(problem, Yb, a, b, tol, max_outer, max_inner, diag):
    space, n_steps = problem.space, b - a
    K, d = problem.K, problem.basis.d
    ct = problem.driver.lip_y_steps(problem.n)[a:b]
    cz = float(np.max(problem.z_constant()[a:b], initial=0.0))
    y_free = not problem.driver.depends_on_y or not np.any(ct * problem.dmu[a:b] ** 2)
    bclock = _block_clock(problem, a, b)
    z_factor = None
    if cz > 0:
        zw = contraction_weights(bclock, cz, 0.0, "z")
        ez = exponential_path(right_jump_inversion(zw.upsilon))[:-1]
        z_factor = ez / (1.0 - zw.upsilon.atoms)
    eps_y = 1.0 - float(np.max(ct * problem.dmu[a:b], initial=0.0))
    y_factor = None
    if not y_free and 0 < eps_y < 1:
        cy = max(cz, float(np.max(ct, initial=0.0)), 1e-300)
        yw = contraction_weights(bclock, cy, 0.0, "y", eps_y, ct)
        y_factor = exponential_path(right_jump_inversion(yw.upsilon))[:-1]
        bound = y_contraction_bound(bclock, cy, ct, eps_y)
        diag.y_contraction_bound = max(diag.y_contraction_bound or 0.0, bound)
    # Y^0: conditional expectations of the block terminal value
    Y = np.stack([space.conditional_expectation(Yb, k) for k in range(a, b + 1)])
    Z = np.zeros((n_steps, space.size, K, d))
    prev_dY = None
    rate_y = 0.0
    for outer in range(1, max_outer + 1):
        frozen = Y[:-1]
        prev_dZ = None
        rate_z = 0.0
        inner_tol = 0.1 * tol
        for inner in range(1, max_inner + 1):
            V, Znew = _sweep(problem, Yb, a, b, frozen, Z)
            dZ = Znew - Z
            Z = Znew
            if cz == 0:
                break
            gap = float(np.max(np.abs(dZ), initial=0.0))
            if z_factor is not None:
                cur = _z_norm(problem, dZ, a, b, z_factor)
                if prev_dZ is not None:
                    ref = _z_norm(problem, Z, a, b, z_factor)
                    if prev_dZ > RATIO_FLOOR * (1.0 + ref):
                        ratio = cur / prev_dZ
                        diag.z_ratios.append(ratio)
                        rate_z = max(rate_z, min(np.sqrt(ratio), 0.99))
                prev_dZ = cur
            if gap <= inner_tol * (1.0 - rate_z) or gap == 0.0:
                break
        else:
            raise NoConvergence("inner", step=a, iterations=max_inner, residual=gap)
        diag.inner_iterations.append(inner)
        dY = V - Y
        Y = V
        diag.outer_iterations += 1
        gap_y = float(np.max(np.abs(dY), initial=0.0))
        diag.residuals.append(gap_y)
        if y_free:
            # the driver ignores y, so one outer pass is exact; a second pass
            # only reproduces the same values
            break
        if y_factor is not None:
            cur = _y_norm(problem, dY, a, b, y_factor)
            if prev_dY is not None and prev_dY > RATIO_FLOOR * (1.0 + _y_norm(problem, Y, a, b, y_factor)):
                diag.y_ratios.append(cur / prev_dY)
            prev_dY = cur
        if len(diag.residuals) >= 2 and diag.residuals[-2] > 0:
            obs = diag.residuals[-1] / diag.residuals[-2]
            rate_y = min(max(rate_y * 0.5, obs), 0.999)
        if gap_y <= tol * (1.0 - rate_y) or gap_y == 0.0:
            break
    else:
        raise NoConvergence("outer", step=a, iterations=max_outer, residual=gap_y)
    return Y, Z


def solve_picard(problem: BsdeProblem, tol: float = 1e-12, max_outer: int = 10000,
                 max_inner: int = 10000, eps: float | None = None) -> BsdeSolution:
    """Two-stage Picard iteration.

    Signed clocks, or clocks that miss a jump of ``<M^1>``, are absolutized
    first.  If the result is linearly standard with ``mu_T <= 1`` it is solved
    in one block; otherwise the clock is rescaled and split into blocks of
    mass at most ``1 - eta``, solved backward.  Within a block the outer loop
    freezes ``Y`` and the inner loop iterates ``Z`` to its fixed point.
    """
    rep = check_standard(problem, "quadratic", samples=0)
    if not rep.passed:
        raise NotStandard(rep, "; ".join(rep.reasons))
    diag = Diagnostics("picard")
    work = problem
    if not (work.clock.is_nonnegative() and np.all(work.dmu > 0)
            and _charges_variation(work.clock, work.basis)):
        work, _ = absolutize_clock(work)
        diag.transforms.append("absolutize")
    lin = check_standard(work, "linear", samples=0)
    if lin.passed:
        splits = [0, work.n]
    else:
        margin = check_standard(work, "quadratic", samples=0).margin
        e = min(margin, 0.5) if eps is None else min(eps, margin)
        resc = rescale_clock(work, e)
        work = resc.problem
        splits = resc.splits
        diag.transforms.append("rescale")
    n, size, K, d = work.n, work.space.size, work.K, work.basis.d
    Y = np.zeros((n + 1, size, K))
    Z = np.zeros((n, size, K, d))
    Y[n] = work.terminal
    for a, b in reversed(list(zip(splits[:-1], splits[1:]))):
        diag.blocks.append((a, b))
        Yblk, Zblk = _solve_block(work, Y[b], a, b, tol, max_outer, max_inner, diag)
        Y[a:b + 1] = Yblk
        Z[a:b] = Zblk
    diag.blocks.reverse()
    diag.defect = bsde_defect(problem, Y, Z)
    return BsdeSolution(Y, Z, diag)


# -- a priori bound -------------------------------------------------------------------

@dataclass
class BoundVerdict:
    passed: bool
    first_violation: int | None
    lhs: np.ndarray
    rhs: np.ndarray

    @property
    def max_violation(self) -> float:
        return float(np.max(self.lhs - self.rhs, initial=0.0))


def default_bound_weights(problem: BsdeProblem) -> tuple[np.ndarray, np.ndarray]:
    """Per-step ``(h, w)`` with ``x^{-1} = Delta mu + h`` keeping ``Delta upsilon < 1``.

    With ``c_t > 0`` the choice ``Delta mu + h = 1/sqrt((1+w) c_t)`` minimises
    ``Delta upsilon = 1 - (1 - sqrt((1+w) c_t) Delta mu)^2``; ``w`` is shrunk until
    ``(1+w) c_t Delta mu^2 < 1``.
    """
    dmu = problem.dmu
    ct = problem.driver.lip_y_steps(problem.n)
    q = ct * dmu ** 2
    with np.errstate(divide="ignore"):
        w = np.where(q > 0, np.minimum(1.0, (1.0 / np.where(q > 0, q, 1.0) - 1.0) / 2.0), 1.0)
    with np.errstate(divide="ignore"):
        h = np.where(ct > 0, 1.0 / np.sqrt((1 + w) * np.where(ct > 0, ct, 1.0)) - dmu, 1.0)
    return np.maximum(h, 0.0), w


def verify_a_priori_bound(problem: BsdeProblem, sol: BsdeSolution, problem_bar: BsdeProblem,
                          sol_bar: BsdeSolution, weights=None, rtol: float = 1e-9) -> BoundVerdict:
    """Check the weighted a priori estimate between two solutions at every grid time.

    ``E|dY_t|^2 E(ups~_t) + int_{]t,T]} E||dZ||_M^2 E(ups~_-) d rho
      <= E|dQ|^2 E(ups~_T) + int_{]t,T]} E|d2f|^2 E(ups~_-) d pi``
    with ``d2f = F(Ybar_-, Zbar) - Fbar(Ybar_-, Zbar)`` and weights built from
    the constants of ``F``.
    """
    if not (problem.clock.is_nonnegative() and _charges_variation(problem.clock, problem.basis)):
        raise ValueError("the estimate needs a nonnegative clock charging <M>")
    if problem.space is not problem_bar.space or not problem.clock == problem_bar.clock:
        raise SpaceMismatch("problems must share space and clock")
    n, space = problem.n, problem.space
    dmu = problem.dmu
    ct = problem.driver.lip_y_steps(n)
    c = float(np.max(problem.z_constant(), initial=0.0))
    h, w = default_bound_weights(problem) if weights is None else weights
    h = np.broadcast_to(np.asarray(h, dtype=float), (n,))
    w = np.broadcast_to(np.asarray(w, dtype=float), (n,))
    x = 1.0 / (h + dmu)
    dups = (h * (1 + w) * ct + x) * dmu
    if np.any(dups >= 1.0):
        raise MarginViolated("weights give Delta upsilon >= 1")
    inv = 1.0 / (1.0 - dups)
    drho = (1.0 - h * (1 + w) * c) * inv * dmu
    dpi = h * (1 + 1 / w) * inv * dmu
    ups = StieltjesFunction(space.grid, np.zeros(n), dups)
    et = exponential_path(right_jump_inversion(ups))
    dY = sol.Y - sol_bar.Y
    dZ = sol.Z - sol_bar.Z
    eY = np.sum(dY ** 2, axis=2) @ space.prob
    # E||dZ||_M^2 per unit clock mass: sum_i |dZ^i|^2 <M^i> / Delta mu
    qv = problem.basis.qv
    with np.errstate(invalid="ignore", divide="ignore"):
        eZ = np.where(dmu > 0, (np.sum(np.sum(dZ ** 2, axis=2) * qv, axis=2) @ space.prob)
                      / np.where(dmu > 0, dmu, 1.0), 0.0)
    ef = np.empty(n)
    for k in range(1, n + 1):
        zb = sol_bar.Z[k - 1]
        yb = sol_bar.Y[k - 1]
        d2f = problem.F(k, yb, zb) - problem_bar.F(k, yb, zb)
        ef[k - 1] = np.sum(d2f ** 2, axis=1) @ space.prob
    z_terms = eZ * et[:-1] * drho
    f_terms = ef * et[:-1] * dpi
    z_tail = np.concatenate([np.cumsum(z_terms[::-1])[::-1], [0.0]])
    f_tail = np.concatenate([np.cumsum(f_terms[::-1])[::-1], [0.0]])
    lhs = eY * et + z_tail
    rhs = eY[-1] * et[-1] + f_tail
    slack = rtol * np.maximum(np.abs(lhs), np.abs(rhs)) + 1e-14
    bad = lhs > rhs + slack
    first = int(np.argmax(bad)) if np.any(bad) else None
    return BoundVerdict(first is None, first, lhs, rhs)
