import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bsdekit.drivers import (
    AbsZDriver,
    ClippedDriver,
    ComponentwiseDriver,
    LinearDriver,
    ScaledDriver,
    ZeroDriver,
    audit_lipschitz,
)
from bsdekit.space import psi, reference_clock

from strategies import random_model, random_scalar_nonlinear

seeds = st.integers(0, 2 ** 32 - 1)


def model_psi(seed):
    rng = np.random.default_rng(seed)
    sp, b = random_model(rng, max_outcomes=32, max_steps=5)
    return rng, sp, b, psi(reference_clock(sp, b), b)


def test_zero_driver():
    y = np.ones((3, 2))
    assert np.all(ZeroDriver(2)(1, y, np.ones((3, 2, 1)), np.ones((3, 1))) == 0)


def test_linear_constants_y_only():
    d = LinearDriver([[0.5]])
    assert d.lip_y == pytest.approx(0.25) and d.lip_z == 0.0


def test_linear_constants_doubled_when_mixed():
    p = np.full((4, 1), 2.0)
    d = LinearDriver([[0.5]], [[[1.0]]], psi=p)
    assert d.lip_y == pytest.approx(0.5) and d.lip_z == pytest.approx(1.0)


def test_linear_needs_psi_for_z_constant():
    with pytest.raises(ValueError):
        LinearDriver([[0.0]], [[[1.0]]])


def test_componentwise_flags():
    assert LinearDriver(np.diag([1.0, 2.0])).componentwise
    assert not LinearDriver([[1.0, 1.0], [0.0, 1.0]]).componentwise
    assert ComponentwiseDriver([AbsZDriver(0.1), ZeroDriver()]).componentwise


def test_clip_and_scale():
    lin = LinearDriver([[2.0]], g=[0.0])
    y = np.array([[-3.0], [0.1], [3.0]])
    z = np.zeros((3, 1, 0))
    p = np.zeros((3, 0))
    np.testing.assert_array_equal(ClippedDriver(lin, -1.0, 1.0)(1, y, z, p), [[-1.0], [0.2], [1.0]])
    sc = ScaledDriver(lin, [0.5, -2.0])
    np.testing.assert_array_equal(sc(2, y, z, p), -2.0 * lin(2, y, z, p))
    assert sc.lip_y_at(2) == pytest.approx(4.0 * lin.lip_y)


@settings(max_examples=25, deadline=None)
@given(seeds)
def test_declared_constants_hold(seed):
    rng, sp, b, ps = model_psi(seed)
    drivers = [AbsZDriver(rng.uniform(0, 2), 2),
               LinearDriver(rng.standard_normal((2, 2)), rng.standard_normal((b.d, 2, 2)) if b.d else None,
                            psi=ps),
               ComponentwiseDriver([random_scalar_nonlinear(rng, 1.0, sp.n) for _ in range(2)])]
    drivers.append(ClippedDriver(drivers[1], -0.5, 0.5))
    for drv in drivers:
        assert audit_lipschitz(drv, ps, samples=16, rng=rng) <= 1.0 + 1e-9


def test_audit_detects_understated_constant():
    rng, sp, b, ps = model_psi(0)
    bad = LinearDriver([[3.0]], lip_y=1.0, lip_z=0.0)
    assert audit_lipschitz(bad, ps, samples=8, rng=rng) > 1.0
