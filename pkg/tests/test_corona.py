import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_grid
from degenlab.corona import (StoppingParams, box_count, calibrate, check_first_statement, check_maximality,
                             corona_decompose, corona_partition_counts, fit_gap_exponent, generation_disjoint,
                             iterated_stopping, log_weight_samples, pair_average, random_unit_vectors,
                             sawtooth_counts, square_function_report, stopping_tau_xi)
from degenlab.corona import test_function as probe_field
from degenlab.corona import test_function_gap as probe_gap
from degenlab.dyadic import DyadicCube
from degenlab.errors import PreconditionError
from degenlab.operators import CoefficientMatrix, SpectralCalculus
from degenlab.weights import ainfty_profile, constant_weight, power_weight, random_dyadic_weight


def _recursive_stops(w, q, ref, sigma, max_depth, gen, out):
    if q.level == max_depth:
        return
    for c in q.children():
        lm = w.level(c.level)[2][c.index]
        if abs(lm - ref) > sigma:
            out[c] = gen + 1
            _recursive_stops(w, c, lm, sigma, max_depth, gen + 1, out)
        else:
            _recursive_stops(w, c, ref, sigma, max_depth, gen, out)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([0.05, 0.1, 0.2, 0.4]))
def test_decomposition_matches_recursive_definition(seed, sigma):
    w = random_dyadic_weight(seed, 7, 0.3)
    root = DyadicCube(0, 0)
    dec = corona_decompose(w, root, sigma, 7)
    ref = {}
    _recursive_stops(w, root, w.level(0)[2][0], sigma, 7, 0, ref)
    got = {c: j + 1 for j, g in enumerate(dec.generations) for c in g}
    assert got == ref
    mass = sum(w.level(c.level)[0][c.index] for c in ref) / w.level(0)[0][0]
    assert dec.packing_ratio == pytest.approx(mass, abs=1e-12)
    assert check_maximality(w, dec)
    assert generation_disjoint(dec)
    assert check_first_statement(w, dec) <= sigma + 1e-12
    total, parts = corona_partition_counts(dec)
    assert total == parts


def test_constant_weight_never_stops():
    dec = corona_decompose(constant_weight(), DyadicCube(0, 0), 0.01, 8)
    assert dec.stopping_cubes() == [] and dec.packing_ratio == 0.0
    assert dec.owner(DyadicCube(5, 3)) == DyadicCube(0, 0)


def test_power_weight_stops_near_singularity():
    dec = corona_decompose(power_weight(0.8), DyadicCube(0, 0), 0.2, 10)
    first = dec.first_generation()
    assert first
    assert dec.is_stopping(first[0])
    # children and owners agree
    for c in first:
        assert dec.owner(c) == c
        assert dec.owner(c.parent()) == dec.root
    cm = dec.children_map()
    assert sorted(cm[dec.root]) == sorted(first)


def test_subcube_root_and_tree():
    w = random_dyadic_weight(2, 8, 0.5)
    q = DyadicCube(2, 1)
    dec = corona_decompose(w, q, 0.1, 8)
    assert all(q.contains(c) for c in dec.stopping_cubes())
    tree = dec.to_tree()
    assert tree["cube"] == [2, 1]
    with pytest.raises(PreconditionError):
        corona_decompose(w, q, 0.1, 9)
    with pytest.raises(PreconditionError):
        corona_decompose(w, q, 0.0, 8)


def test_square_function_against_bmo():
    w = random_dyadic_weight(5, 9, 0.4)
    dec = corona_decompose(w, DyadicCube(0, 0), 0.1, 9)
    lhs, bmo, ratio = square_function_report(w, dec)
    assert lhs > 0 and bmo > 0 and ratio == pytest.approx(lhs / bmo)


def test_box_counting():
    assert box_count(3, 3) == 1
    assert box_count(0, 4) == 31
    root = DyadicCube(1, 0)
    fam = [DyadicCube(3, 0), DyadicCube(2, 1)]
    total, parts = sawtooth_counts(root, fam, 5)
    assert total == parts == box_count(1, 5)


@pytest.fixture(scope="module")
def stopping_setup():
    model = random_dyadic_weight(3, 12, 0.3)
    _, D = make_grid(model, 64)
    calc = SpectralCalculus(D, CoefficientMatrix.identity(64))
    return model, calc, log_weight_samples(model, 64)


def test_test_function_gap_shrinks(stopping_setup):
    _, calc, _ = stopping_setup
    q = DyadicCube(2, 1)
    xi = random_unit_vectors(1, 0)[0]
    gaps = [probe_gap(calc, q, xi, s) for s in (0.2, 0.1, 0.05, 0.025)]
    assert all(b < a for a, b in zip(gaps, gaps[1:]))
    fit = fit_gap_exponent(calc, (0.2, 0.1, 0.05, 0.025), [q], [xi])
    assert fit.delta > 0.5
    f, aux = probe_field(calc, q, xi, 0.1)
    assert np.linalg.norm(pair_average(f, q, calc.D.grid.w) - xi) == pytest.approx(gaps[1])
    with pytest.raises(PreconditionError):
        probe_field(calc, q, np.array([1.0, 1.0]), 0.1)


def test_stopping_family_is_disjoint_and_bounded(stopping_setup):
    _, calc, logw = stopping_setup
    q = DyadicCube(1, 0)
    xi = np.array([1.0, 0.0], complex)
    p = StoppingParams(sigma_3=0.05, sigma_4=0.3, sigma_5=0.3)
    fam = stopping_tau_xi(calc, logw, q, xi, 0.0, p)
    total, parts = sawtooth_counts(q, fam.cubes, 6)
    assert total == parts
    assert 0.0 <= fam.ratio <= 1.0
    assert set(fam.large) | set(fam.misaligned) == set(fam.cubes)
    masses = iterated_stopping(calc, logw, q, xi, 0.0, p, generations=2)
    assert all(0 <= m <= 1 for m in masses)


def test_calibration_keeps_bad_mass_below_bound(stopping_setup):
    model, calc, logw = stopping_setup
    cases = [(calc, logw, DyadicCube(2, k), xi, 0.0) for k in range(2) for xi in random_unit_vectors(2, 0)]
    cal = calibrate(cases, ainfty_profile(model, 6).c0)
    p = cal.params
    assert cal.max_gap <= cal.gap_target
    assert cal.train_ratio <= 1 - p.sigma_6
    assert p.sigma_w == pytest.approx(p.sigma_4 * p.sigma_5 / (32 * math.e))


def test_stopping_params_validation():
    with pytest.raises(PreconditionError):
        StoppingParams(sigma_6=1.5)
    with pytest.raises(PreconditionError):
        StoppingParams(sigma_w=0.0)
    assert StoppingParams().to_json()["xi"] == [[1.0, 0.0], [0.0, 0.0]]
