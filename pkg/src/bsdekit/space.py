"""Finite filtered probability spaces, martingale bases and representation.

Processes are plain arrays indexed by outcome along axis 1:

* adapted ``Y``: shape ``(n+1, n_outcomes, K)``, ``Y[k]`` constant on cells of step ``k``;
* predictable ``Z``: shape ``(n, n_outcomes, K, d)``, ``Z[k-1]`` constant on cells of
  step ``k-1``;
* basis increments ``dM`` and predictable variations ``qv``: shape ``(n, n_outcomes, d)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import (
    DegenerateCell,
    IndexOutOfRange,
    InvalidSpace,
    NotAMartingale,
    SpaceMismatch,
    UndefinedDensity,
)
from .stieltjes import StieltjesFunction, TimeGrid

MARTINGALE_TOL = 1e-10
PROB_TOL = 1e-12


def _cells_from_labels(labels: np.ndarray) -> list[np.ndarray]:
    """Cells as index arrays, ordered by smallest member."""
    _, first = np.unique(labels, return_index=True)
    order = np.argsort(first)
    keys = np.unique(labels)[order]
    return [np.flatnonzero(labels == key) for key in keys]


class FiniteFilteredSpace:
    """Finite outcome set with strictly positive weights and a refining filtration.

    ``partitions[k]`` lists the cells of ``F_k`` for ``k = 0..n``; a cell is a list
    of outcome ids (or integer positions).
    """

    def __init__(self, outcomes, prob, grid: TimeGrid, partitions):
        self.outcomes = [str(o) for o in outcomes]
        if len(set(self.outcomes)) != len(self.outcomes):
            raise InvalidSpace("outcome ids must be unique")
        p = np.asarray(prob, dtype=float)
        if p.shape != (len(self.outcomes),):
            raise InvalidSpace("one probability per outcome required")
        if not np.all(np.isfinite(p)) or np.any(p <= 0):
            raise DegenerateCell("every outcome must carry strictly positive probability")
        if abs(p.sum() - 1.0) > PROB_TOL:
            raise InvalidSpace(f"probabilities sum to {p.sum()!r}, not 1")
        if len(partitions) != grid.n + 1:
            raise InvalidSpace(f"need {grid.n + 1} partitions, got {len(partitions)}")
        self.prob = p
        self.prob.setflags(write=False)
        self.grid = grid
        index = {o: i for i, o in enumerate(self.outcomes)}
        size = len(self.outcomes)
        labels = np.empty((grid.n + 1, size), dtype=int)
        for k, cells in enumerate(partitions):
            seen = np.full(size, -1)
            for c, cell in enumerate(cells):
                if len(cell) == 0:
                    raise InvalidSpace(f"step {k}: empty cell")
                for o in cell:
                    i = index.get(str(o), o if isinstance(o, (int, np.integer)) else None)
                    if i is None or not (0 <= i < size):
                        raise InvalidSpace(f"step {k}: unknown outcome {o!r}")
                    if seen[i] >= 0:
                        raise InvalidSpace(f"step {k}: outcome {self.outcomes[i]!r} in two cells")
                    seen[i] = c
            if np.any(seen < 0):
                raise InvalidSpace(f"step {k}: partition does not cover every outcome")
            labels[k] = seen
        if np.any(labels[0] != labels[0][0]):
            raise InvalidSpace("step 0: F_0 must be trivial")
        for k in range(1, grid.n + 1):
            # refinement: each new cell sits inside a single old cell
            for cell in _cells_from_labels(labels[k]):
                if np.unique(labels[k - 1][cell]).size != 1:
                    raise InvalidSpace(f"step {k}: partition does not refine step {k - 1}")
        if np.unique(labels[-1]).size != size:
            raise InvalidSpace(f"step {grid.n}: final partition must separate outcomes")
        self.labels = labels
        self.labels.setflags(write=False)

    # -- structure ------------------------------------------------------------

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def size(self) -> int:
        return len(self.outcomes)

    def cells(self, k: int) -> list[np.ndarray]:
        self._check_step(k)
        return self._cells[k]

    @cached_property
    def _cells(self) -> list[list[np.ndarray]]:
        return [_cells_from_labels(lab) for lab in self.labels]

    def children(self, k: int, parent: np.ndarray) -> list[np.ndarray]:
        """Cells of step ``k`` inside ``parent`` (a cell of step ``k-1``)."""
        members = set(parent.tolist())
        return [c for c in self.cells(k) if c[0] in members]

    def _check_step(self, k: int) -> None:
        if not (0 <= k <= self.n):
            raise IndexOutOfRange(f"step {k} outside 0..{self.n}")

    # -- conditional expectation ----------------------------------------------

    @cached_property
    def _averaging(self) -> list[np.ndarray]:
        mats = []
        for lab in self.labels:
            same = lab[:, None] == lab[None, :]
            w = np.where(same, self.prob[None, :], 0.0)
            mats.append(w / w.sum(axis=1, keepdims=True))
        return mats

    def averaging_matrix(self, k: int) -> np.ndarray:
        self._check_step(k)
        return self._averaging[k]

    def conditional_expectation(self, X, k: int) -> np.ndarray:
        """``E[X | F_k]`` for ``X`` of shape ``(n_outcomes, ...)``."""
        self._check_step(k)
        X = np.asarray(X, dtype=float)
        if X.shape[0] != self.size:
            raise SpaceMismatch(f"leading axis {X.shape[0]} != {self.size} outcomes")
        return np.tensordot(self._averaging[k], X, axes=(1, 0))

    def expectation(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape[0] != self.size:
            raise SpaceMismatch(f"leading axis {X.shape[0]} != {self.size} outcomes")
        return np.tensordot(self.prob, X, axes=(0, 0))

    def is_measurable(self, X, k: int, tol: float = 0.0) -> bool:
        X = np.asarray(X, dtype=float)
        return bool(np.all(np.abs(self.conditional_expectation(X, k) - X) <= tol))

    def is_adapted(self, Y, tol: float = 0.0) -> bool:
        return all(self.is_measurable(Y[k], k, tol) for k in range(self.n + 1))

    def is_predictable(self, Z, tol: float = 0.0) -> bool:
        return all(self.is_measurable(Z[k - 1], k - 1, tol) for k in range(1, self.n + 1))

    def martingale(self, X) -> np.ndarray:
        """``N_k = E[X | F_k]`` stacked over ``k = 0..n``."""
        return np.stack([self.conditional_expectation(X, k) for k in range(self.n + 1)])

    # -- serialization --------------------------------------------------------

    def to_record(self) -> dict:
        return {
            "outcomes": list(self.outcomes),
            "prob": self.prob.tolist(),
            "times": self.grid.times.tolist(),
            "partitions": [
                [[self.outcomes[i] for i in cell] for cell in self.cells(k)]
                for k in range(self.n + 1)
            ],
        }

    @classmethod
    def from_record(cls, rec: dict) -> "FiniteFilteredSpace":
        return cls(rec["outcomes"], rec["prob"], TimeGrid(rec["times"]), rec["partitions"])

    @classmethod
    def from_labels(cls, prob, grid: TimeGrid, labels) -> "FiniteFilteredSpace":
        """Build from per-step integer labels of shape ``(n+1, n_outcomes)``."""
        labels = np.asarray(labels)
        parts = [[c.tolist() for c in _cells_from_labels(lab)] for lab in labels]
        return cls([f"w{i}" for i in range(labels.shape[1])], prob, grid, parts)

    def __repr__(self) -> str:
        return f"FiniteFilteredSpace(outcomes={self.size}, n={self.n})"


@dataclass(frozen=True)
class BasisNode:
    """Branching of one parent cell into its children at one step."""

    step: int
    parent: np.ndarray
    children: list
    q: np.ndarray          # conditional child probabilities
    vectors: np.ndarray    # (m-1, m): basis increment i on child j
    qv: np.ndarray         # (m-1,) conditional second moments


@dataclass(frozen=True)
class MartingaleBasis:
    space: FiniteFilteredSpace
    d: int
    increments: np.ndarray  # (n, n_outcomes, d)
    qv: np.ndarray          # (n, n_outcomes, d)
    nodes: tuple

    def node(self, k: int, outcome: int) -> BasisNode:
        for nd in self.nodes:
            if nd.step == k and outcome in nd.parent:
                return nd
        raise IndexOutOfRange(f"no node at step {k} containing outcome {outcome}")


def _helmert_vectors(q: np.ndarray) -> np.ndarray:
    """Conditionally orthogonal, mean-zero vectors spanning the increment space."""
    m = q.size
    tails = np.cumsum(q[::-1])[::-1]  # tails[i] = sum_{j>=i} q_j
    seeds = np.zeros((m - 1, m))
    for i in range(m - 1):
        seeds[i, i] = 1.0
        seeds[i, i + 1:] = -q[i] / tails[i + 1]
    # Gram-Schmidt in the q-weighted inner product; the seeds are orthogonal already,
    # so this only removes rounding-level overlap
    out = np.zeros_like(seeds)
    for i in range(m - 1):
        v = seeds[i].copy()
        for j in range(i):
            v -= (np.sum(q * v * out[j]) / np.sum(q * out[j] ** 2)) * out[j]
        out[i] = v
    return out


def build_martingale_basis(space: FiniteFilteredSpace) -> MartingaleBasis:
    nodes = []
    for k in range(1, space.n + 1):
        for parent in space.cells(k - 1):
            kids = space.children(k, parent)
            pc = np.array([space.prob[c].sum() for c in kids])
            q = pc / pc.sum()
            vecs = _helmert_vectors(q) if len(kids) > 1 else np.zeros((0, 1))
            qv = (vecs ** 2) @ q
            nodes.append(BasisNode(k, parent, kids, q, vecs, qv))
    d = max((nd.vectors.shape[0] for nd in nodes), default=0)
    inc = np.zeros((space.n, space.size, d))
    qv = np.zeros((space.n, space.size, d))
    for nd in nodes:
        r = nd.vectors.shape[0]
        for j, child in enumerate(nd.children):
            inc[nd.step - 1, child, :r] = nd.vectors[:, j]
        qv[nd.step - 1][np.ix_(nd.parent, np.arange(r))] = nd.qv
    return MartingaleBasis(space, d, inc, qv, tuple(nodes))


# -- representation -----------------------------------------------------------

def _as_vector_process(N) -> tuple[np.ndarray, bool]:
    N = np.asarray(N, dtype=float)
    if N.ndim == 2:
        return N[..., None], True
    return N, False


def represent_increment(D, k: int, basis: MartingaleBasis) -> np.ndarray:
    """Integrands ``z`` (n_outcomes, K, d) with ``D = sum_i z^i dM^i_k``.

    ``D`` (n_outcomes, K) must have zero conditional mean given ``F_{k-1}``;
    the formula projects whatever is passed.
    """
    space = basis.space
    D = np.asarray(D, dtype=float)
    dM = basis.increments[k - 1]
    qv = basis.qv[k - 1]
    cross = space.conditional_expectation(D[:, :, None] * dM[:, None, :], k - 1)
    safe = np.where(qv > 0, qv, 1.0)
    return np.where(qv[:, None, :] > 0, cross / safe[:, None, :], 0.0)


def represent(N, basis: MartingaleBasis, tol: float = MARTINGALE_TOL) -> np.ndarray:
    """Predictable ``Z`` with ``Delta N_k = sum_i Z^i_k Delta M^i_k``.

    ``N`` has shape ``(n+1, n_outcomes)`` or ``(n+1, n_outcomes, K)``; the result
    has shape ``(n, n_outcomes, d)`` or ``(n, n_outcomes, K, d)`` accordingly.
    """
    space = basis.space
    N, scalar = _as_vector_process(N)
    if N.shape[:2] != (space.n + 1, space.size):
        raise SpaceMismatch(f"martingale shape {N.shape} does not fit the space")
    Z = np.zeros((space.n, space.size, N.shape[2], basis.d))
    for k in range(1, space.n + 1):
        D = N[k] - N[k - 1]
        resid = np.max(np.abs(space.conditional_expectation(D, k - 1)), initial=0.0)
        if resid > tol:
            raise NotAMartingale(k, float(resid))
        Z[k - 1] = represent_increment(D, k, basis)
    return Z[:, :, 0, :] if scalar else Z


def stochastic_integral(Z, basis: MartingaleBasis) -> np.ndarray:
    """``sum_i int Z^i dM^i`` at every grid point, starting from 0."""
    Z = np.asarray(Z, dtype=float)
    scalar = Z.ndim == 3
    if scalar:
        Z = Z[:, :, None, :]
    inc = np.einsum("nwkd,nwd->nwk", Z, basis.increments)
    out = np.concatenate([np.zeros((1,) + inc.shape[1:]), np.cumsum(inc, axis=0)])
    return out[..., 0] if scalar else out


# -- clocks and norms ---------------------------------------------------------

def reference_clock(space: FiniteFilteredSpace, basis: MartingaleBasis) -> StieltjesFunction:
    """``mu_t = (E<M^1>_t + t) / (E<M^1>_T + T)`` on the grid."""
    if basis.d > 0:
        eqv = space.expectation(np.moveaxis(basis.qv[:, :, 0], 1, 0))
    else:
        eqv = np.zeros(space.n)
    total = eqv.sum() + space.grid.T
    return StieltjesFunction(space.grid, space.grid.dt / total, eqv / total, nonnegative=True)


def psi(clock: StieltjesFunction, basis: MartingaleBasis) -> np.ndarray:
    """Densities ``psi^i = Delta<M^i> / Delta mu`` of shape (n, n_outcomes, d)."""
    if clock.grid != basis.space.grid:
        raise SpaceMismatch("clock and space live on different grids")
    atoms = clock.atoms[:, None, None]
    bad = (basis.qv > 0) & (atoms <= 0)
    if np.any(bad):
        k = int(np.argwhere(bad)[0][0]) + 1
        raise UndefinedDensity(f"<M> jumps at step {k} where the clock has no positive atom")
    safe = np.where(atoms > 0, atoms, 1.0)
    return np.where(basis.qv > 0, basis.qv / safe, 0.0)


def seminorm_sq(Z, psi_arr) -> np.ndarray:
    """``||z||_M^2 = sum_i |z^i|^2 psi^i`` evaluated elementwise.

    ``Z`` (..., K, d) and ``psi_arr`` (..., d) broadcast over leading axes.
    """
    Z = np.asarray(Z, dtype=float)
    return np.sum(np.sum(Z ** 2, axis=-2) * psi_arr, axis=-1)


def seminorm_m(z, clock: StieltjesFunction, basis: MartingaleBasis, k: int, outcome: int) -> float:
    """Squared seminorm of a ``K x d`` matrix at the node of step ``k`` holding ``outcome``."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    p = psi(clock, basis)[k - 1, outcome]
    return float(seminorm_sq(z, p))


def h2_norm(Z, clock: StieltjesFunction, basis: MartingaleBasis) -> float:
    """``E int ||Z||_M^2 d mu``."""
    space = basis.space
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 3:
        Z = Z[:, :, None, :]
    if Z.shape[:2] != (space.n, space.size) or Z.shape[3] != basis.d:
        raise SpaceMismatch(f"integrand shape {Z.shape} does not fit the basis")
    dens = seminorm_sq(Z, psi(clock, basis))  # (n, outcomes)
    return float(np.sum(dens @ space.prob * clock.atoms))


def s2_norm(Y, space: FiniteFilteredSpace) -> float:
    """``E max_k ||Y_k||^2``."""
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 2:
        Y = Y[..., None]
    if Y.shape[:2] != (space.n + 1, space.size):
        raise SpaceMismatch(f"process shape {Y.shape} does not fit the space")
    return float(space.prob @ np.max(np.sum(Y ** 2, axis=2), axis=0))
