"""Random model generators shared by the test modules."""

import numpy as np

from bsdekit.drivers import (
    AbsZDriver,
    CallbackDriver,
    ClippedDriver,
    ComponentwiseDriver,
    LinearDriver,
)
from bsdekit.space import FiniteFilteredSpace, build_martingale_basis
from bsdekit.stieltjes import StieltjesFunction, TimeGrid


def random_grid(rng, n):
    return TimeGrid(np.concatenate([[0.0], np.cumsum(rng.uniform(0.1, 1.0, n))]))


def random_stieltjes(rng, n=None, atom_range=(-0.9, 0.9), cont_range=(-1.0, 1.0)):
    n = int(rng.integers(1, 65)) if n is None else n
    return StieltjesFunction(random_grid(rng, n), rng.uniform(*cont_range, n),
                             rng.uniform(*atom_range, n))


def random_space(rng, max_outcomes=64, max_steps=8, max_branch=4, n=None):
    """Random tree filtration: every leaf at step n is one outcome."""
    n = int(rng.integers(1, max_steps + 1)) if n is None else n
    paths = [[0]]  # ancestry labels per leaf so far
    counter = 1
    for _ in range(n):
        new_paths = []
        budget = max_outcomes
        for i, path in enumerate(paths):
            remaining = len(paths) - i - 1
            room = budget - len(new_paths) - remaining
            m = int(rng.integers(1, max_branch + 1))
            m = max(1, min(m, room))
            for _ in range(m):
                new_paths.append(path + [counter])
                counter += 1
        paths = new_paths
    labels = np.array(paths).T  # (n+1, outcomes)
    w = rng.uniform(0.2, 1.0, labels.shape[1])
    prob = w / w.sum()
    return FiniteFilteredSpace.from_labels(prob, random_grid(rng, n), labels)


def random_model(rng, **kw):
    space = random_space(rng, **kw)
    return space, build_martingale_basis(space)


def random_clock(rng, space, basis, signed=False, lo=0.05, hi=1.0):
    """Purely atomic positive clock charging every step."""
    atoms = rng.uniform(lo, hi, space.n)
    if signed:
        flip = rng.random(space.n) < 0.4
        atoms = np.where(flip, -atoms, atoms)
    return StieltjesFunction(space.grid, np.zeros(space.n), atoms)


def random_driver(rng, K, d, psi, clock_atoms, margin):
    """Random standard driver with c_t * dmu^2 <= 1 - margin."""
    n = len(clock_atoms)
    cap = (1.0 - margin) / np.max(clock_atoms ** 2)
    kind = rng.integers(0, 4)
    if kind == 0:
        A = rng.standard_normal((K, K))
        A *= np.sqrt(cap / 2.0) / np.linalg.norm(A, 2) * rng.uniform(0.3, 1.0)
        B = 0.5 * rng.standard_normal((d, K, K)) if d else None
        g = rng.standard_normal(K)
        return LinearDriver(A, B, g, psi=psi)
    if kind == 1:
        return ClippedDriver(random_driver_linear(rng, K, d, psi, cap), -1.0, 1.5)
    if kind == 2:
        parts = [random_scalar_nonlinear(rng, cap, n) for _ in range(K)]
        return ComponentwiseDriver(parts)
    return AbsZDriver(rng.uniform(0.05, 1.0), K)


def random_driver_linear(rng, K, d, psi, cap):
    A = rng.standard_normal((K, K))
    A *= np.sqrt(cap / 2.0) / np.linalg.norm(A, 2)
    B = rng.standard_normal((d, K, K)) * 0.5 if d else None
    return LinearDriver(A, B, rng.standard_normal(K), psi=psi)


def random_scalar_nonlinear(rng, cap, n):
    """F(y, z) = a sin(y) + b ||z||_M + g, squared constants (2a^2, 2b^2)."""
    a = np.sqrt(cap / 2.0) * rng.uniform(0.2, 1.0)
    b = rng.uniform(0.0, 1.0)
    g = rng.uniform(-1.0, 1.0)

    def fn(k, y, z, psi):
        return a * np.sin(y) + b * np.sqrt(np.sum(z ** 2 * psi[:, None, :], axis=2)) + g

    return CallbackDriver(fn, 1, 2 * a * a, 2 * b * b)


def random_standard_problem(rng, max_outcomes=64, max_steps=8, max_K=3, signed=False,
                            margin_lo=0.05, hi=3.0):
    """Random problem whose driver satisfies c_t * dmu^2 <= 1 - margin, margin >= margin_lo."""
    from bsdekit.bsde import BsdeProblem
    from bsdekit.drivers import ZeroDriver

    space, basis = random_model(rng, max_outcomes=max_outcomes, max_steps=max_steps)
    clock = random_clock(rng, space, basis, signed=signed, hi=hi)
    K = int(rng.integers(1, max_K + 1))
    probe = BsdeProblem(space, basis, clock, ZeroDriver(K), np.zeros((space.size, K)))
    margin = rng.uniform(margin_lo, 0.9)
    drv = random_driver(rng, K, basis.d, probe.psi, clock.atoms, margin)
    return BsdeProblem(space, basis, clock, drv, rng.standard_normal((space.size, K)))


def random_comparison_pair(rng, max_outcomes=64, max_steps=6):
    """Scalar linear pair with Q >= Qbar and F >= Fbar (the gap is a nonnegative predictable g)."""
    from bsdekit.bsde import BsdeProblem
    from bsdekit.drivers import ZeroDriver

    space, basis = random_model(rng, max_outcomes=max_outcomes, max_steps=max_steps)
    clock = random_clock(rng, space, basis, hi=0.5)
    probe = BsdeProblem(space, basis, clock, ZeroDriver(), np.zeros(space.size))
    d = basis.d
    beta = rng.uniform(-1, 1)
    B = rng.uniform(-0.5, 0.5, (d, 1, 1)) if d else None
    F = LinearDriver([[beta]], B, [0.1], psi=probe.psi)
    gap = np.abs(rng.standard_normal((space.n, space.size, 1))) * (rng.random((space.n, space.size, 1)) < 0.3)
    gap = np.stack([space.conditional_expectation(gap[k], k) for k in range(space.n)])
    Fb = LinearDriver([[beta]], B, np.array([0.1]) - gap, lip_y=F.lip_y, lip_z=F.lip_z)
    Q = rng.standard_normal(space.size)
    Qb = Q - np.abs(rng.standard_normal(space.size)) * (rng.random(space.size) < 0.3)
    return BsdeProblem(space, basis, clock, F, Q), BsdeProblem(space, basis, clock, Fb, Qb)
