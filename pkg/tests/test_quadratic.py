import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_grid
from degenlab.corona import StoppingParams
from degenlab.errors import PreconditionError
from degenlab.operators import CoefficientMatrix, SpectralCalculus, WeightedGrid, random_accretive, spectral_pair
from degenlab.quadratic import (annihilation_residual, calderon_pairing, mean_value_exponents, poincare_ratios,
                                ppa_error, principal_part, proof_replay, quadratic_functional, quadratic_gram,
                                quadratic_ratio_sup, random_range_fields, resolvent_gradient_functional)
from degenlab.weights import constant_weight, power_weight, random_dyadic_weight


def test_identity_closed_form(flat32):
    # for self-adjoint T the ratio is int s^2 / (1 + s^2)^2 ds/s = 1/2 on every eigenvector
    _, D = flat32
    calc = SpectralCalculus(D, CoefficientMatrix.identity(32))
    rep = quadratic_ratio_sup(calc, probes=32)
    assert rep.sup == pytest.approx(0.5, rel=0.02)
    assert rep.inf == pytest.approx(0.5, rel=0.02)
    assert rep.inf <= rep.probe_inf <= rep.probe_sup <= rep.sup + 1e-12


def test_functional_matches_gram_form(power32):
    # two routes: quadrature of ||Q_t v||^2 and the assembled Schur-form Gram matrix
    g, D = power32
    calc = SpectralCalculus(D, random_accretive(32, 4))
    v = random_range_fields(calc, 1, 5)[0]
    a = (v * g.s2) @ D.range_basis.conj()
    k, _ = quadratic_gram(calc)
    assert quadratic_functional(calc, v) == pytest.approx(float(np.real(a.conj() @ k @ a)), rel=1e-10)


def test_bd_calculus_ratios_are_bounded(power32):
    _, D = power32
    db, bd = spectral_pair(D, random_accretive(32, 1))
    r1, r2 = quadratic_ratio_sup(db, probes=32), quadratic_ratio_sup(bd, probes=32)
    assert 0 < r1.inf <= r1.sup < 10
    assert 0 < r2.inf <= r2.sup < 10
    with pytest.raises(PreconditionError):
        quadratic_ratio_sup(db, probes=8)


@pytest.mark.parametrize("model", [constant_weight(), power_weight(0.5), random_dyadic_weight(3, 8, 0.4)])
def test_scalar_functionals_closed_forms(model):
    g = WeightedGrid.from_model(model, 64)
    f = np.random.default_rng(0).standard_normal(64)
    f = f - g.inner(f, np.ones(64)) / g.mass()
    nf = g.norm(f) ** 2
    assert resolvent_gradient_functional(g, f) / nf == pytest.approx(0.5, rel=0.02)
    assert calderon_pairing(g, f) / nf == pytest.approx(math.pi / 2, rel=0.01)


@pytest.fixture(scope="module")
def power_calc():
    _, D = make_grid(power_weight(0.5), 32)
    return SpectralCalculus(D, random_accretive(32, 0))


def test_principal_part_annihilates_constants(power_calc):
    pp = principal_part(power_calc, probes=2)
    assert annihilation_residual(power_calc, pp) <= 1e-10
    assert pp.carleson > 0 and pp.cube_bound > 0 and math.isfinite(pp.et_bound)


def test_ppa_split_bounds_total(power_calc):
    pp = principal_part(power_calc, probes=0)
    v = random_range_fields(power_calc, 1, 3)[0]
    split = ppa_error(power_calc, v, pp=pp, verbose=True)
    assert split.total == pytest.approx(ppa_error(power_calc, v, pp=pp))
    # ||a + b + c||^2 <= 3 (||a||^2 + ||b||^2 + ||c||^2)
    assert split.total <= 3 * split.parts_sum * (1 + 1e-12)
    assert split.total / power_calc.D.grid.norm(v) ** 2 < 5


def test_ppa_of_constants_is_small(power_calc):
    n = power_calc.n
    v = np.concatenate([np.ones(n), np.zeros(n)]).astype(complex)
    pp = principal_part(power_calc, probes=0)
    assert ppa_error(power_calc, v, pp=pp) <= 1e-18


@settings(max_examples=10, deadline=None)
@given(st.integers(1, 12))
def test_poincare_ratio_bounded(modes):
    g = WeightedGrid.from_model(power_weight(0.5), 64)
    x = g.x
    psi = np.cos(2 * np.pi * modes * x) + 0.3 * np.sin(2 * np.pi * x)
    assert 0 < poincare_ratios(g, psi) < 2


def test_mean_value_exponents_positive():
    g = WeightedGrid.from_model(power_weight(0.5), 64)
    mv = mean_value_exponents(g, samples=16)
    assert mv["tau1"] > 0 and mv["tau2"] > 0
    assert mv["points1"] > 4


def test_replay_report_is_consistent():
    model = random_dyadic_weight(3, 12, 0.3)
    _, D = make_grid(model, 32)
    calc = SpectralCalculus(D, CoefficientMatrix.identity(32))
    params = StoppingParams(sigma_w=0.05, sigma_1=0.5, sigma_2=0.5)
    rep = proof_replay(calc, model, params, tau_steps=3, directions=4, samples=8)
    assert rep.partition_defect <= 1e-12
    assert rep.direct <= rep.bound * (1 + 1e-12)
    assert 0 <= rep.coverage <= 1
