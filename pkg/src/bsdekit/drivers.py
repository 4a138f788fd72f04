"""Driver catalog.

A driver is called as ``F(k, y, z, psi)`` with

* ``k``: step index ``1..n`` (the driver is evaluated on ``]t_{k-1}, t_k]``),
* ``y``: array ``(n_outcomes, K)``,
* ``z``: array ``(n_outcomes, K, d)``,
* ``psi``: densities ``(n_outcomes, d)`` of the basis variations against the norm clock,

and returns ``(n_outcomes, K)``.  Each driver declares squared Lipschitz constants
``lip_y`` (``c_t``, scalar or per step) and ``lip_z`` (``c``), meaning
``|F(y,z) - F(y',z')|^2 <= c_t |y-y'|^2 + c ||z-z'||_M^2``.
"""

from __future__ import annotations

import numpy as np

from .space import seminorm_sq


def _per_step(value, k: int) -> float:
    arr = np.asarray(value, dtype=float)
    return float(arr) if arr.ndim == 0 else float(arr[k - 1])


class Driver:
    tag = "abstract"
    componentwise = False
    depends_on_y = True

    def __init__(self, K: int, lip_y=0.0, lip_z=0.0):
        self.K = int(K)
        self.lip_y = lip_y
        self.lip_z = lip_z

    def __call__(self, k, y, z, psi):
        raise NotImplementedError

    def lip_y_at(self, k: int) -> float:
        return _per_step(self.lip_y, k)

    def lip_z_at(self, k: int) -> float:
        return _per_step(self.lip_z, k)

    def lip_y_steps(self, n: int) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.lip_y, dtype=float), (n,)).copy()

    def lip_z_steps(self, n: int) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.lip_z, dtype=float), (n,)).copy()

    def to_record(self) -> dict:
        rec = {"type": self.tag, "K": self.K}
        rec.update(self._params())
        rec["lip_y"] = np.asarray(self.lip_y).tolist()
        rec["lip_z"] = np.asarray(self.lip_z).tolist()
        return rec

    def _params(self) -> dict:
        return {}


class ZeroDriver(Driver):
    tag = "zero"
    componentwise = True
    depends_on_y = False

    def __init__(self, K: int = 1):
        super().__init__(K, 0.0, 0.0)

    def __call__(self, k, y, z, psi):
        return np.zeros_like(y)


class LinearDriver(Driver):
    """``F(y, z) = A y + sum_i B_i z^i + g``.

    ``B`` has shape ``(d, K, K)``; columns ``z^i`` whose density ``psi^i`` vanishes
    are ignored so that ``F`` only sees ``z`` through its seminorm class.  ``g`` is
    a constant vector or a predictable array ``(n, n_outcomes, K)``.
    Constants default to :meth:`derived_constants` when ``psi`` is supplied.
    """

    tag = "linear"

    def __init__(self, A=None, B=None, g=None, *, K: int | None = None,
                 lip_y=None, lip_z=None, psi=None):
        if K is None:
            K = np.shape(A)[0] if A is not None else (np.shape(B)[1] if B is not None else 1)
        self.A = np.zeros((K, K)) if A is None else np.atleast_2d(np.asarray(A, dtype=float))
        self.B = None if B is None else np.asarray(B, dtype=float).reshape(-1, K, K)
        self.g = None if g is None else np.asarray(g, dtype=float)
        if lip_y is None or lip_z is None:
            cy, cz = self.derived_constants(psi)
            lip_y = cy if lip_y is None else lip_y
            lip_z = cz if lip_z is None else lip_z
        super().__init__(K, lip_y, lip_z)

    @property
    def depends_on_y(self):
        return bool(np.any(self.A != 0))

    @property
    def componentwise(self):
        off = self.A - np.diag(np.diag(self.A))
        if np.any(off != 0):
            return False
        if self.B is None:
            return True
        return all(np.all(b - np.diag(np.diag(b)) == 0) for b in self.B)

    def derived_constants(self, psi=None) -> tuple[float, float]:
        cy = float(np.linalg.norm(self.A, 2) ** 2)
        if self.B is None or not np.any(self.B):
            return cy, 0.0
        if psi is None:
            raise ValueError("z-coefficients need psi to derive the z-constant")
        norms = np.array([np.linalg.norm(b, 2) ** 2 for b in self.B])
        p = np.asarray(psi, dtype=float).reshape(-1, np.shape(psi)[-1])[:, : norms.size]
        ratio = np.where(p > 0, norms[None, : p.shape[1]] / np.where(p > 0, p, 1.0), 0.0)
        cz = float(np.max(ratio.sum(axis=1), initial=0.0))
        if cy == 0.0:
            return 0.0, cz
        return 2.0 * cy, 2.0 * cz

    def __call__(self, k, y, z, psi):
        out = y @ self.A.T
        if self.B is not None:
            d = min(self.B.shape[0], z.shape[2])
            zm = np.where(psi[:, None, :d] > 0, z[:, :, :d], 0.0)
            out = out + np.einsum("ikl,wli->wk", self.B[:d], zm)
        if self.g is not None:
            out = out + (self.g[k - 1] if self.g.ndim == 3 else self.g)
        return out

    def _params(self):
        rec = {"A": self.A.tolist()}
        if self.B is not None:
            rec["B"] = self.B.tolist()
        if self.g is not None:
            rec["g"] = self.g.tolist()
        return rec


class AbsZDriver(Driver):
    """``F_j(y, z) = alpha ||z_j||_M`` for each row ``z_j``."""

    tag = "abs_z"
    componentwise = True
    depends_on_y = False

    def __init__(self, alpha: float, K: int = 1):
        self.alpha = float(alpha)
        super().__init__(K, 0.0, self.alpha ** 2)

    def __call__(self, k, y, z, psi):
        return self.alpha * np.sqrt(np.sum(z ** 2 * psi[:, None, :], axis=2))

    def _params(self):
        return {"alpha": self.alpha}


class ClippedDriver(Driver):
    """Coordinatewise clamp of another driver; clamping is 1-Lipschitz."""

    tag = "clipped"

    def __init__(self, inner: Driver, lo=-np.inf, hi=np.inf):
        self.inner = inner
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        super().__init__(inner.K, inner.lip_y, inner.lip_z)

    @property
    def depends_on_y(self):
        return self.inner.depends_on_y

    @property
    def componentwise(self):
        return self.inner.componentwise

    def __call__(self, k, y, z, psi):
        return np.clip(self.inner(k, y, z, psi), self.lo, self.hi)

    def _params(self):
        return {
            "inner": self.inner.to_record(),
            "lo": None if np.all(np.isneginf(self.lo)) else self.lo.tolist(),
            "hi": None if np.all(np.isposinf(self.hi)) else self.hi.tolist(),
        }


class ComponentwiseDriver(Driver):
    """Stack scalar drivers: component ``j`` sees only ``(y_j, z_j)``."""

    tag = "componentwise"
    componentwise = True

    def __init__(self, parts):
        self.parts = list(parts)
        if any(p.K != 1 for p in self.parts):
            raise ValueError("componentwise parts must be scalar drivers")
        lip_y = np.max([np.asarray(p.lip_y, dtype=float) for p in self.parts], axis=0)
        lip_z = np.max([np.asarray(p.lip_z, dtype=float) for p in self.parts], axis=0)
        super().__init__(len(self.parts), lip_y, lip_z)

    @property
    def depends_on_y(self):
        return any(p.depends_on_y for p in self.parts)

    def __call__(self, k, y, z, psi):
        cols = [p(k, y[:, j:j + 1], z[:, j:j + 1, :], psi) for j, p in enumerate(self.parts)]
        return np.concatenate(cols, axis=1)

    def _params(self):
        return {"parts": [p.to_record() for p in self.parts]}


class ScaledDriver(Driver):
    """``lam_k F`` with a per-step (possibly signed) factor."""

    tag = "scaled"

    def __init__(self, inner: Driver, lam):
        self.inner = inner
        self.lam = np.asarray(lam, dtype=float)
        lam2 = self.lam ** 2
        super().__init__(inner.K, np.asarray(inner.lip_y) * lam2, np.asarray(inner.lip_z) * lam2)

    @property
    def depends_on_y(self):
        return self.inner.depends_on_y

    @property
    def componentwise(self):
        return self.inner.componentwise

    def __call__(self, k, y, z, psi):
        lam = self.lam if self.lam.ndim == 0 else self.lam[k - 1]
        return lam * self.inner(k, y, z, psi)

    def _params(self):
        return {"inner": self.inner.to_record(), "lam": self.lam.tolist()}


class CallbackDriver(Driver):
    """User function with declared constants; nothing is derived."""

    tag = "callback"

    def __init__(self, fn, K: int, lip_y, lip_z, *, depends_on_y: bool = True,
                 componentwise: bool = False):
        self.fn = fn
        self._dep = depends_on_y
        self._cw = componentwise
        super().__init__(K, lip_y, lip_z)

    @property
    def depends_on_y(self):
        return self._dep

    @property
    def componentwise(self):
        return self._cw

    def __call__(self, k, y, z, psi):
        return np.asarray(self.fn(k, y, z, psi), dtype=float)


def audit_lipschitz(driver: Driver, psi_arr: np.ndarray, samples: int = 64,
                    rng: np.random.Generator | None = None, scale: float = 1.0) -> float:
    """Worst observed ratio of ``|dF|^2`` to the declared bound on random inputs.

    A value above 1 means the declared constants are violated.  The audit is
    advisory: it samples, it does not prove.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    n, size, d = psi_arr.shape
    K = driver.K
    worst = 0.0
    for _ in range(samples):
        k = int(rng.integers(1, n + 1))
        y1, y2 = (scale * rng.standard_normal((size, K)) for _ in range(2))
        z1, z2 = (scale * rng.standard_normal((size, K, d)) for _ in range(2))
        p = psi_arr[k - 1]
        df = driver(k, y1, z1, p) - driver(k, y2, z2, p)
        lhs = np.sum(df ** 2, axis=1)
        rhs = driver.lip_y_at(k) * np.sum((y1 - y2) ** 2, axis=1) \
            + driver.lip_z_at(k) * seminorm_sq(z1 - z2, p)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(rhs > 0, lhs / rhs, np.where(lhs > 1e-24, np.inf, 0.0))
        worst = max(worst, float(np.max(ratio)))
    return worst
