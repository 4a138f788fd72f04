import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bsdekit.drivers import AbsZDriver, CallbackDriver, LinearDriver, ZeroDriver
from bsdekit.errors import InvalidDriver
from bsdekit.expectation import ExpectationEngine, axiom_suite
from bsdekit.space import reference_clock

from strategies import random_model

seeds = st.integers(0, 2 ** 32 - 1)


def engine(seed, driver, **kw):
    rng = np.random.default_rng(seed)
    sp, b = random_model(rng, max_outcomes=32, max_steps=5, **kw)
    return rng, ExpectationEngine(sp, b, reference_clock(sp, b), driver)


def test_zero_driver_is_classical():
    rng, e = engine(0, ZeroDriver())
    Q = rng.standard_normal(e.space.size)
    for t in range(e.space.n + 1):
        # the recursion averages step by step, so agreement is to rounding
        np.testing.assert_allclose(e.evaluate(Q, t), e.space.conditional_expectation(Q, t), atol=1e-14)


def test_measurable_terminal_is_fixed():
    rng, e = engine(1, AbsZDriver(0.1))
    t = e.space.n // 2
    Q = e.space.conditional_expectation(rng.standard_normal(e.space.size), t)
    np.testing.assert_allclose(e.evaluate(Q, t), Q, atol=1e-14)


@settings(max_examples=25, deadline=None)
@given(seeds)
def test_sublinear_driver_superadditive_symmetry(seed):
    rng, e = engine(seed, AbsZDriver(0.1))
    Q = rng.standard_normal(e.space.size)
    assert np.all(e.evaluate(Q, 0) + e.evaluate(-Q, 0) >= -1e-12)


def test_risk_measure_zero_driver():
    rng, e = engine(2, ZeroDriver())
    Q = rng.standard_normal(e.space.size)
    np.testing.assert_allclose(e.risk_measure(Q, 0), -e.space.conditional_expectation(Q, 0), atol=1e-14)
    np.testing.assert_array_equal(e.risk_measure(Q, e.space.n), -Q)


@settings(max_examples=25, deadline=None)
@given(seeds)
def test_risk_measure_antitone(seed):
    rng, e = engine(seed, AbsZDriver(0.1))
    Q = rng.standard_normal(e.space.size)
    Qb = Q - np.abs(rng.standard_normal(e.space.size))
    assert np.all(e.risk_measure(Q, 0) <= e.risk_measure(Qb, 0) + 1e-12)


def test_zero_driver_axioms_exact():
    _, e = engine(3, ZeroDriver())
    rep = axiom_suite(e, trials=30, seed=1)
    assert rep["passed"]
    for name in ("triviality", "tower", "zero_one"):
        assert rep["axioms"][name]["worst"] <= 1e-15


def test_abs_driver_tower():
    _, e = engine(4, AbsZDriver(0.1))
    rep = axiom_suite(e, trials=100, seed=2)
    assert rep["passed"] and rep["axioms"]["tower"]["worst"] <= 1e-10


def test_axiom_suite_deterministic():
    _, e = engine(5, AbsZDriver(0.1))
    assert axiom_suite(e, trials=10, seed=7) == axiom_suite(e, trials=10, seed=7)


def test_zero_one_with_whole_space():
    rng, e = engine(6, AbsZDriver(0.2))
    Q = rng.standard_normal(e.space.size)
    A = np.ones(e.space.size)
    np.testing.assert_array_equal(e.evaluate(A * Q, 1), A * e.evaluate(Q, 1))


@pytest.mark.parametrize("driver", [
    LinearDriver([[0.5]]),
    LinearDriver([[0.0]], g=[1.0]),
    CallbackDriver(lambda k, y, z, p: np.sin(y), 1, 0.0, 0.0),
])
def test_engine_rejects_invalid_drivers(driver):
    with pytest.raises(InvalidDriver):
        engine(7, driver)
