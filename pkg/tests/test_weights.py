import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from degenlab import (DyadicCube, a2_constant, ainfty_profile, constant_weight, evaluate_and_mass,
                      power_weight, product_weight, random_dyadic_weight, weight_from_spec)
from degenlab._oracles import a2_bruteforce_power, power_arc_masses, power_root_mass, riemann_mass
from degenlab.errors import DepthExceededError, PreconditionError


def test_constant_weight_is_flat():
    w = constant_weight(2.5)
    assert a2_constant(w, 10) == 1.0
    prof = ainfty_profile(w, 8)
    assert prof.a2 == 1.0 and prof.c0 == pytest.approx(0.0, abs=1e-12)
    assert prof.dw == pytest.approx(1.0)
    assert np.allclose(w.grid_samples(16), 2.5)


@pytest.mark.parametrize("a", [-0.5, 0.3, 0.5, 0.9])
def test_power_root_mass_closed_form(a):
    w = power_weight(a)
    assert w.level(0)[0][0] == pytest.approx(power_root_mass(a), rel=1e-12)


@pytest.mark.parametrize("a", [0.5, -0.3])
def test_power_masses_against_gauss_quadrature(a):
    w = power_weight(a)
    for level in (1, 4, 9):
        assert np.allclose(w.level(level)[0], power_arc_masses(a, level), rtol=1e-10)
        assert np.allclose(w.level(level)[1], power_arc_masses(a, level, -1), rtol=1e-10)


def test_power_a2_against_bruteforce_and_limit():
    fast = a2_constant(power_weight(0.5, 14), 14)
    assert fast == pytest.approx(a2_bruteforce_power(0.5, 14), rel=1e-10)
    # edge arcs see x^a, whose averages give 1 / (1 - a^2) in the small-scale limit
    assert fast == pytest.approx(4.0 / 3.0, abs=1e-8)
    assert fast < 4.0 / 3.0


def test_a2_nondecreasing_in_depth():
    w = power_weight(0.7)
    vals = [a2_constant(w, d) for d in range(1, 12)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_deep_cube_uses_quadrature():
    w = power_weight(0.5, depth=6)
    q = DyadicCube(9, 3)
    _, mass, logm = evaluate_and_mass(w, q)
    lo, hi = q.interval
    ref = riemann_mass(w, lo, hi, 20000)
    assert mass == pytest.approx(ref, rel=1e-6)
    assert logm == pytest.approx(riemann_mass(lambda x: np.log(w(x)), lo, hi, 20000) / (hi - lo), rel=1e-4)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.0, 1.0))
def test_random_dyadic_is_a2_and_normalised(seed, beta):
    w = random_dyadic_weight(seed, 8, beta)
    a2 = a2_constant(w, 8)
    # log w stays within depth * beta of zero, which caps the ratio of averages
    assert 1.0 <= a2 <= math.exp(2 * 8 * beta) * (1 + 1e-12)
    # the log-martingale keeps every level's log-mean at zero on the root
    assert abs(w.level(0)[2][0]) < 1e-12
    # Jensen: exp of the log-mean never exceeds the average
    for d in range(9):
        m, _, lm = w.level(d)
        assert np.all(np.exp(lm) <= m * 2.0**d * (1 + 1e-12))
    with pytest.raises(DepthExceededError):
        w.level(9)


def test_product_weight_combines_factors():
    p = product_weight([power_weight(0.2), power_weight(0.3), random_dyadic_weight(1, 6, 0.2)])
    assert p.exponent == pytest.approx(0.5)
    x = np.linspace(0.01, 0.99, 7)
    ref = power_weight(0.5)(x) * random_dyadic_weight(1, 6, 0.2)(x)
    assert np.allclose(p(x), ref)


def test_weight_from_spec_round_trip():
    for spec in ({"kind": "constant"}, {"kind": "power", "params": {"a": 0.5}},
                 {"kind": "random-dyadic", "params": {"beta": 0.2}, "depth": 8, "seed": 4}):
        w = weight_from_spec(spec)
        w2 = weight_from_spec(w.to_spec())
        assert w.weight_id == w2.weight_id
        assert np.allclose(w.grid_samples(32), w2.grid_samples(32))
    with pytest.raises(PreconditionError):
        weight_from_spec({"kind": "power"})
    with pytest.raises(PreconditionError):
        weight_from_spec({"kind": "nope"})
    with pytest.raises(PreconditionError):
        power_weight(1.0)


def test_ainfty_profile_of_power_weight():
    prof = ainfty_profile(power_weight(0.5), 10)
    assert 0 < prof.sigma <= 1 <= prof.tau
    assert prof.c0 > 0
    assert prof.to_json()["depth"] == 10
