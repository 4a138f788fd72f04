"""Exact calculus for deterministic cadlag finite-variation functions on a time grid.

A :class:`StieltjesFunction` lives on a :class:`TimeGrid` ``0 = t_0 < ... < t_n = T``.
On each step ``k = 1..n`` it carries a continuous (atomless) mass ``c_k`` spread
over the open interval ``]t_{k-1}, t_k[`` and an atom ``a_k`` at ``t_k``; there is
no atom at ``t_0`` and ``nu_0 = 0``.  Arrays ``cont`` and ``atoms`` are indexed
``0..n-1`` for steps ``1..n``.

Because every atom sits on a grid point, the Stieltjes exponential, both jump
inversions and the Gronwall bounds all reduce to closed-form finite products
and sums.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    HypothesisViolated,
    IndexOutOfRange,
    JumpAtOrAboveOne,
    JumpAtOrBelowMinusOne,
)

EPS_JUMP = 1e-9
REL_TOL = 1e-12
ABS_FLOOR = 1e-14


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


class TimeGrid:
    """Strictly increasing times ``t_0 = 0 < t_1 < ... < t_n = T``."""

    def __init__(self, times):
        t = np.asarray(times, dtype=float)
        if t.ndim != 1 or t.size < 2:
            raise ValueError("a time grid needs at least two points")
        if not np.all(np.isfinite(t)):
            raise ValueError("grid times must be finite")
        if t[0] != 0.0:
            raise ValueError("grid must start at t_0 = 0")
        if np.any(np.diff(t) <= 0):
            raise ValueError("grid times must be strictly increasing")
        self.times = _readonly(t)

    @classmethod
    def uniform(cls, n: int, T: float = 1.0) -> "TimeGrid":
        return cls(np.linspace(0.0, T, n + 1))

    @property
    def n(self) -> int:
        return self.times.size - 1

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.times)

    def __eq__(self, other) -> bool:
        return isinstance(other, TimeGrid) and np.array_equal(self.times, other.times)

    def __hash__(self):
        return hash(self.times.tobytes())

    def __repr__(self) -> str:
        return f"TimeGrid(n={self.n}, T={self.T:g})"


class StieltjesFunction:
    """Grid-aligned cadlag function of finite variation.

    Parameters
    ----------
    grid : TimeGrid
    cont : array (n,)
        Continuous mass accrued over ``]t_{k-1}, t_k[``.
    atoms : array (n,)
        Jump ``Delta nu_{t_k}``.
    nonnegative : bool
        Require every mass to be >= 0.
    jumps_above, jumps_below : float, optional
        Require ``a_k > jumps_above + eps_jump`` (resp. ``a_k < jumps_below - eps_jump``).
    """

    def __init__(self, grid: TimeGrid, cont=None, atoms=None, *, nonnegative: bool = False,
                 jumps_above: float | None = None, jumps_below: float | None = None,
                 eps_jump: float = EPS_JUMP):
        n = grid.n
        c = np.zeros(n) if cont is None else np.asarray(cont, dtype=float)
        a = np.zeros(n) if atoms is None else np.asarray(atoms, dtype=float)
        if c.shape != (n,) or a.shape != (n,):
            raise ValueError(f"cont and atoms must have shape ({n},)")
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(a))):
            raise ValueError("masses must be finite")
        if nonnegative and (np.any(c < 0) or np.any(a < 0)):
            raise ValueError("nonnegative function has a negative mass")
        if jumps_above is not None and np.any(a <= jumps_above + eps_jump):
            k = int(np.argmax(a <= jumps_above + eps_jump)) + 1
            raise JumpAtOrBelowMinusOne(f"atom at step {k} is not above {jumps_above} + {eps_jump:g}")
        if jumps_below is not None and np.any(a >= jumps_below - eps_jump):
            k = int(np.argmax(a >= jumps_below - eps_jump)) + 1
            raise JumpAtOrAboveOne(f"atom at step {k} is not below {jumps_below} - {eps_jump:g}")
        self.grid = grid
        self.cont = _readonly(c)
        self.atoms = _readonly(a)

    # -- construction helpers -------------------------------------------------

    @classmethod
    def zero(cls, grid: TimeGrid) -> "StieltjesFunction":
        return cls(grid)

    @classmethod
    def atomic(cls, grid: TimeGrid, atoms, **kw) -> "StieltjesFunction":
        return cls(grid, np.zeros(grid.n), atoms, **kw)

    @classmethod
    def from_record(cls, rec: dict) -> "StieltjesFunction":
        return cls(TimeGrid(rec["times"]), rec["cont"], rec["atoms"])

    def to_record(self) -> dict:
        return {
            "times": self.grid.times.tolist(),
            "cont": self.cont.tolist(),
            "atoms": self.atoms.tolist(),
        }

    # -- evaluation -----------------------------------------------------------

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def increments(self) -> np.ndarray:
        """Total mass ``c_k + a_k`` of ``]t_{k-1}, t_k]``."""
        return self.cont + self.atoms

    def values(self) -> np.ndarray:
        """``nu_{t_k}`` for ``k = 0..n``."""
        return np.concatenate([[0.0], np.cumsum(self.increments)])

    def value(self, k: int) -> float:
        _check_index(k, self.n)
        return float(np.sum(self.increments[:k]))

    def left_limit(self, k: int) -> float:
        _check_index(k, self.n)
        if k == 0:
            return 0.0
        return self.value(k) - float(self.atoms[k - 1])

    def total_variation(self) -> float:
        return float(np.sum(np.abs(self.cont)) + np.sum(np.abs(self.atoms)))

    def is_nonnegative(self) -> bool:
        return bool(np.all(self.cont >= 0) and np.all(self.atoms >= 0))

    def is_atomic(self) -> bool:
        return bool(np.all(self.cont == 0))

    # -- algebra --------------------------------------------------------------

    def jordan(self) -> tuple["StieltjesFunction", "StieltjesFunction"]:
        """Componentwise Jordan decomposition ``nu = pos - neg``."""
        pos = StieltjesFunction(self.grid, np.maximum(self.cont, 0), np.maximum(self.atoms, 0))
        neg = StieltjesFunction(self.grid, np.maximum(-self.cont, 0), np.maximum(-self.atoms, 0))
        return pos, neg

    def abs(self) -> "StieltjesFunction":
        """Total-variation function ``|nu|``."""
        return StieltjesFunction(self.grid, np.abs(self.cont), np.abs(self.atoms))

    def atomized(self) -> "StieltjesFunction":
        """Move each step's continuous mass onto the atom closing that step."""
        return StieltjesFunction(self.grid, np.zeros(self.n), self.increments)

    def scaled(self, factor) -> "StieltjesFunction":
        """``int factor d nu`` for a scalar or per-step factor."""
        f = np.broadcast_to(np.asarray(factor, dtype=float), (self.n,))
        return StieltjesFunction(self.grid, self.cont * f, self.atoms * f)

    def __neg__(self) -> "StieltjesFunction":
        return StieltjesFunction(self.grid, -self.cont, -self.atoms)

    def __add__(self, other: "StieltjesFunction") -> "StieltjesFunction":
        if self.grid != other.grid:
            raise ValueError("grids differ")
        return StieltjesFunction(self.grid, self.cont + other.cont, self.atoms + other.atoms)

    def __eq__(self, other) -> bool:
        return (isinstance(other, StieltjesFunction) and self.grid == other.grid
                and np.array_equal(self.cont, other.cont) and np.array_equal(self.atoms, other.atoms))

    __hash__ = None

    def __repr__(self) -> str:
        return f"StieltjesFunction(n={self.n}, nu_T={self.values()[-1]:.6g})"


def _check_index(k: int, n: int) -> None:
    if not (0 <= k <= n):
        raise IndexOutOfRange(f"step {k} outside 0..{n}")


# -- exponentials -------------------------------------------------------------

def exponential_path(nu: StieltjesFunction) -> np.ndarray:
    """``E(nu_{t_k})`` for ``k = 0..n``."""
    cont = np.concatenate([[0.0], np.cumsum(nu.cont)])
    jumps = np.concatenate([[1.0], np.cumprod(1.0 + nu.atoms)])
    return np.exp(cont) * jumps


def exponential_left(nu: StieltjesFunction) -> np.ndarray:
    """Left limits ``E(nu_{t_k-})`` for ``k = 1..n``."""
    return exponential_path(nu)[:-1] * np.exp(nu.cont)


def exponential(nu: StieltjesFunction, k: int) -> float:
    """Stieltjes exponential ``exp(sum_{j<=k} c_j) * prod_{j<=k} (1 + a_j)``.

    The ``exp(-Delta nu)`` factors of the defining product cancel the atoms
    inside ``exp(nu)``, which leaves only the continuous mass in the exponent.
    """
    _check_index(k, nu.n)
    return float(np.exp(np.sum(nu.cont[:k])) * np.prod(1.0 + nu.atoms[:k]))


def left_jump_inversion(nu: StieltjesFunction) -> StieltjesFunction:
    """Atoms ``a -> a/(1+a)``; satisfies ``E(nu)^{-1} = E(-nu_bar)``."""
    a = nu.atoms
    if np.any(a <= -1.0):
        k = int(np.argmax(a <= -1.0)) + 1
        raise JumpAtOrBelowMinusOne(f"atom {a[k - 1]!r} at step {k} is <= -1")
    return StieltjesFunction(nu.grid, nu.cont, a / (1.0 + a))


def right_jump_inversion(nu: StieltjesFunction) -> StieltjesFunction:
    """Atoms ``a -> a/(1-a)``; satisfies ``E(-nu) = E(nu_tilde)^{-1}``."""
    a = nu.atoms
    if np.any(a >= 1.0):
        k = int(np.argmax(a >= 1.0)) + 1
        raise JumpAtOrAboveOne(f"atom {a[k - 1]!r} at step {k} is >= 1")
    return StieltjesFunction(nu.grid, nu.cont, a / (1.0 - a))


# -- paths and integration ----------------------------------------------------

@dataclass(frozen=True)
class GridPath:
    """Values of a cadlag path on grid points ``start..start+len(values)-1``.

    Between grid points a path is constant unless it carries its own
    ``left_limits`` (value just before each grid point) and ``cont_integrals``
    (integral of the path over each open step against the continuous part of
    ``clock``).  Paths produced by :func:`solve_linear_sde` carry both, tied to
    the function they solve against.
    """

    values: np.ndarray
    start: int = 0
    left_limits: np.ndarray | None = None
    cont_integrals: np.ndarray | None = None
    clock: StieltjesFunction | None = field(default=None, repr=False, compare=False)

    @property
    def stop(self) -> int:
        return self.start + len(self.values) - 1

    def __getitem__(self, k: int) -> float:
        if not (self.start <= k <= self.stop):
            raise IndexOutOfRange(f"path is defined on steps {self.start}..{self.stop}, not {k}")
        return float(self.values[k - self.start])


def integrate(g, nu: StieltjesFunction, j: int, k: int) -> float:
    """``int_{]t_j, t_k]} g_{u-} d nu_u`` on the grid.

    For a plain array (``g[m]`` the value at ``t_m``) the path is constant
    between grid points, giving ``sum_{m=j+1..k} g[m-1] * (c_m + a_m)``.
    """
    n = nu.n
    _check_index(j, n)
    _check_index(k, n)
    if j > k:
        raise IndexOutOfRange(f"empty range ]t_{j}, t_{k}]")
    if isinstance(g, GridPath):
        if not (g.start <= j and k <= g.stop):
            raise IndexOutOfRange(f"path covers steps {g.start}..{g.stop}, need {j}..{k}")
        if g.left_limits is None:
            return integrate(np.concatenate([np.full(g.start, np.nan), g.values]), nu, j, k)
        if g.clock is not None and g.clock != nu:
            raise ValueError("path interior is tied to a different integrator")
        lo, hi = j - g.start, k - g.start
        left = np.asarray(g.left_limits)[lo:hi]
        cint = np.asarray(g.cont_integrals)[lo:hi]
        return float(np.sum(cint + left * nu.atoms[j:k]))
    vals = np.asarray(g, dtype=float)
    if vals.shape[0] < k + 1:
        raise IndexOutOfRange("path shorter than the integration range")
    return float(np.sum(vals[j:k] * nu.increments[j:k]))


def solve_linear_sde(u_start: float, nu: StieltjesFunction, s: int, t: int) -> GridPath:
    """Solution of ``u_r = u_s + int_{]s,r]} u_{v-} d nu_v`` on steps ``s..t``.

    ``u_{t_k} = u_start * E(nu_{t_k}) / E(nu_{t_s})``.  Inside a step the path
    grows like ``exp`` of the continuous mass, so the returned path records its
    left limits and interior integrals; :func:`integrate` then reproduces every
    increment exactly.
    """
    _check_index(s, nu.n)
    _check_index(t, nu.n)
    if s > t:
        raise IndexOutOfRange(f"s={s} > t={t}")
    c = nu.cont[s:t]
    a = nu.atoms[s:t]
    growth = np.exp(c)
    vals = np.empty(t - s + 1)
    vals[0] = u_start
    # sequential product keeps u_{k} - u_{k-1} consistent with the increment pieces
    for i in range(t - s):
        vals[i + 1] = vals[i] * growth[i] * (1.0 + a[i])
    prev = vals[:-1]
    left = prev * growth
    cint = prev * np.expm1(c)
    return GridPath(vals, start=s, left_limits=left, cont_integrals=cint, clock=nu)


# -- Gronwall bounds ----------------------------------------------------------

def _require_nonnegative(nu: StieltjesFunction) -> None:
    if not nu.is_nonnegative():
        raise ValueError("Gronwall bounds need a nonnegative measure")


def backward_gronwall_bound(alpha, nu: StieltjesFunction, t: int | None = None):
    """Upper bound on ``u_t`` given ``u_t <= alpha_t + int_{]t,T]} u_s d nu_s``.

    Returns ``alpha_t + E(-nu_t) int_{]t,T]} E(nu_tilde_{s-}) alpha_s d nu_tilde_s``,
    with ``alpha`` a right-continuous step path given by its grid values.  If
    ``t`` is None the bound is returned for every grid point.
    """
    _require_nonnegative(nu)
    alpha = np.asarray(alpha, dtype=float)
    n = nu.n
    if alpha.shape != (n + 1,):
        raise ValueError(f"alpha must have shape ({n + 1},)")
    nt = right_jump_inversion(nu)
    et = exponential_path(nt)
    growth = np.exp(nu.cont)
    # per step: open interval (alpha_{m-1}) then atom at t_m (alpha_m)
    pieces = et[:-1] * (alpha[:-1] * np.expm1(nu.cont) + alpha[1:] * growth * nt.atoms)
    tail = np.concatenate([np.cumsum(pieces[::-1])[::-1], [0.0]])
    e_minus = exponential_path(-nu)
    bound = alpha + e_minus * tail
    if t is None:
        return bound
    _check_index(t, n)
    return float(bound[t])


def forward_gronwall_bound(alpha, nu: StieltjesFunction, t: int | None = None):
    """Upper bound on ``u_t`` given ``u_t <= alpha_t + int_{]0,t]} u_{s-} d nu_s``.

    Returns ``alpha_t + E(nu_t) int_{]0,t]} E(-nu_bar_{s-}) alpha_{s-} d nu_bar_s``.
    """
    _require_nonnegative(nu)
    alpha = np.asarray(alpha, dtype=float)
    n = nu.n
    if alpha.shape != (n + 1,):
        raise ValueError(f"alpha must have shape ({n + 1},)")
    nb = left_jump_inversion(nu)
    ebm = exponential_path(-nb)
    decay = np.exp(-nu.cont)
    pieces = alpha[:-1] * ebm[:-1] * (-np.expm1(-nu.cont) + decay * nb.atoms)
    head = np.concatenate([[0.0], np.cumsum(pieces)])
    bound = alpha + exponential_path(nu) * head
    if t is None:
        return bound
    _check_index(t, n)
    return float(bound[t])


@dataclass(frozen=True)
class IntegratingFactorVerdict:
    passed: bool
    first_violation: int | None
    max_violation: float


def _tol(*vals) -> float:
    return max(REL_TOL * max(abs(v) for v in vals), ABS_FLOOR)


def verify_integrating_factor(u, upsilon, nu: StieltjesFunction) -> IntegratingFactorVerdict:
    """Check the integrating-factor inequality step by step.

    ``u`` and ``upsilon`` are step paths given by grid values.  If the
    hypothesis ``du >= -u_- d nu + d upsilon`` holds on every step, verify
    ``d(u E(nu_tilde)) >= (1 - Delta nu)^{-1} E(nu_tilde_-) d upsilon``.
    Raises :class:`HypothesisViolated` naming the first step where the
    hypothesis fails.
    """
    _require_nonnegative(nu)
    u = np.asarray(u, dtype=float)
    ups = np.asarray(upsilon, dtype=float)
    n = nu.n
    if u.shape != (n + 1,) or ups.shape != (n + 1,):
        raise ValueError(f"paths must have shape ({n + 1},)")
    nt = right_jump_inversion(nu)
    et = exponential_path(nt)
    et_left = exponential_left(nt)
    first = None
    worst = 0.0
    for k in range(1, n + 1):
        c, a = nu.cont[k - 1], nu.atoms[k - 1]
        du, dv = u[k] - u[k - 1], ups[k] - ups[k - 1]
        # open interval: du = d upsilon = 0, so the hypothesis reads u_{k-1} c_k >= 0
        interior = u[k - 1] * c
        jump_rhs = -u[k - 1] * a + dv
        if interior < -_tol(u[k - 1] * c) or du < jump_rhs - _tol(du, jump_rhs):
            raise HypothesisViolated(k)
        lhs = u[k] * et[k] - u[k - 1] * et_left[k - 1]
        rhs = et_left[k - 1] * dv / (1.0 - a)
        gap = rhs - lhs
        if gap > _tol(lhs, rhs):
            worst = max(worst, gap)
            if first is None:
                first = k
    return IntegratingFactorVerdict(first is None, first, worst)
