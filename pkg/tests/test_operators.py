import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import linalg

from conftest import make_grid
from degenlab._oracles import random_accretivity, random_sector_angle
from degenlab.errors import NotAccretiveError, PreconditionError
from degenlab.operators import (CoefficientMatrix, ScalarLaplacian, SpectralCalculus, WeightedGrid, accretivity,
                                arc_distance, gradient_matrix, matrix_sign, offdiag_probe, random_accretive,
                                riesz_and_kato, spectral_pair)
from degenlab.quadratic import random_range_fields
from degenlab.weights import constant_weight, power_weight, random_dyadic_weight


@pytest.mark.parametrize("seed", range(4))
def test_D_is_weighted_self_adjoint_with_known_kernel(seed):
    _, D = make_grid(random_dyadic_weight(seed, 10, 0.4), 64)
    assert D.self_adjointness_defect() <= 1e-12
    assert D.null_defect() <= 1e-15
    p = D.range_projector()
    assert np.allclose(p @ p, p, atol=1e-12)
    assert np.allclose(p @ D.null_basis, 0, atol=1e-12)
    v = np.random.default_rng(seed).standard_normal(128)
    assert np.allclose(D.project_range(v), p @ v)


def test_sign_error_in_divergence_is_detected():
    g, D = make_grid(power_weight(0.5), 32)
    D.matrix[:32, 32:] *= -1
    assert D.self_adjointness_defect() > 1


def test_gradient_matrix_differences():
    g = gradient_matrix(8)
    f = np.arange(8.0)
    assert np.allclose((g @ f)[:-1], 8.0)
    assert np.allclose(g @ np.ones(8), 0)


def test_coefficient_matrix_shapes_and_adjoint():
    b = random_accretive(16, 3)
    v = np.random.default_rng(0).standard_normal(32) + 0j
    assert np.allclose(b.apply(v), b.matrix @ v)
    assert np.allclose(b.adjoint().matrix, b.matrix.conj().T)
    assert not b.is_hermitian()
    with pytest.raises(PreconditionError):
        CoefficientMatrix(np.zeros((4, 3, 3)))
    with pytest.raises(PreconditionError):
        CoefficientMatrix.from_pieces(np.ones((3, 2, 2)), 16)


def test_accretivity_against_random_sampling(power32):
    _, D = power32
    B = random_accretive(32, 5)
    kappa, mu = accretivity(B, D)
    bc = D.range_basis.conj().T @ B.matrix @ D.range_basis
    assert kappa <= random_accretivity(B.matrix, D.range_basis, 500, seed=1) + 1e-12
    assert random_sector_angle(bc, 500, seed=2) <= mu + 1e-12
    with pytest.raises(NotAccretiveError):
        accretivity(CoefficientMatrix.constant(np.diag([1.0, -1.0]), 32), D)


def test_matrix_sign_matches_scipy():
    rng = np.random.default_rng(4)
    m = rng.standard_normal((20, 20)) + 1j * rng.standard_normal((20, 20)) + 3 * np.diag(np.sign(rng.standard_normal(20)))
    s = matrix_sign(m)
    assert np.allclose(s, linalg.signm(m), atol=1e-9)
    assert np.allclose(s @ s, np.eye(20), atol=1e-10)


@pytest.fixture(scope="module")
def calcs():
    _, D = make_grid(power_weight(0.5), 32)
    B = random_accretive(32, 7)
    return D, B, SpectralCalculus(D, B, method="eig"), SpectralCalculus(D, B, method="sign")


def test_eig_and_sign_paths_agree(calcs):
    D, B, ce, cs = calcs
    v = random_range_fields(ce, 1, 0)[0]
    for name, t in (("resolvent", 0.1), ("P", 0.05), ("Q", 0.05), ("sgn", 1.0), ("chi+", 1.0), ("exp", 0.02),
                    ("abs", 1.0)):
        a, b = ce.apply(name, v, t), cs.apply(name, v, t)
        assert np.linalg.norm(a - b) <= 1e-8 * np.linalg.norm(a), name


def test_resolvent_matches_direct_inverse(calcs):
    D, B, ce, _ = calcs
    t = 0.03
    T = ce.operator_matrix()
    direct = np.linalg.inv(np.eye(64) + 1j * t * T)
    assert np.allclose(ce.matrix("resolvent", t), direct, atol=1e-9)
    assert ce.reconstruction_error < 1e-12


def test_intertwining_db_bd(calcs):
    D, B, _, _ = calcs
    db, bd = spectral_pair(D, B)
    v = np.random.default_rng(1).standard_normal(64) + 0j
    for name in ("resolvent", "Q", "exp"):
        lhs = D.apply(bd.apply(name, v, 0.05))
        rhs = db.apply(name, D.apply(v), 0.05)
        assert np.allclose(lhs, rhs, atol=1e-8 * np.linalg.norm(rhs))


def test_functions_vanish_or_fix_the_null_space(calcs):
    D, B, ce, _ = calcs
    nb = np.linalg.solve(B.matrix, D.null_basis[:, 0].astype(complex))
    assert np.allclose(ce.apply("Q", nb, 0.1), 0, atol=1e-10)
    assert np.allclose(ce.apply("resolvent", nb, 0.1), nb, atol=1e-10)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 1.0), st.floats(0.01, 1.0))
def test_semigroup_law(seed, s, t):
    _, D = make_grid(constant_weight(), 16)
    calc = SpectralCalculus(D, random_accretive(16, seed))
    v = random_range_fields(calc, 1, seed)[0]
    a = calc.apply("exp", calc.apply("exp", v, s), t)
    assert np.linalg.norm(a - calc.apply("exp", v, s + t)) <= 1e-10 * np.linalg.norm(v)


def test_identity_spectrum_is_symmetric():
    _, D = make_grid(constant_weight(), 16)
    calc = SpectralCalculus(D, CoefficientMatrix.identity(16))
    lam = np.sort(calc.lam.real)
    assert np.allclose(lam, -lam[::-1], atol=1e-10)
    assert calc.mu == pytest.approx(0.0, abs=1e-12)


def test_offdiag_decay():
    _, D = make_grid(power_weight(0.5), 64)
    calc = SpectralCalculus(D, random_accretive(64, 2))
    tab = offdiag_probe(calc, (0.0, 0.125), (0.5, 0.625))
    assert np.all(np.diff(tab.resolvent) < 0)
    assert tab.order_resolvent > 1
    assert arc_distance((0.0, 0.125), (0.9, 0.95)) == pytest.approx(0.05)


def test_scalar_laplacian_kernel_and_resolvent():
    g = WeightedGrid.from_model(power_weight(0.5), 32)
    lap = ScalarLaplacian(g)
    assert lap.lam_w[0] == pytest.approx(0.0, abs=1e-9)
    f = np.random.default_rng(0).standard_normal(32)
    r = lap.resolvents(f, [0.1])[0]
    # (I - t^2 Delta_w) r = f with -Delta_w = G^{*w} G
    minus_lap = (lap.G.T * g.w) @ lap.G / g.w[:, None]
    assert np.allclose(r + 0.01 * minus_lap @ r, f)


def test_kato_identity_case_is_exact():
    g = WeightedGrid.from_model(power_weight(0.5), 32)
    rep = riesz_and_kato(g, 1.0, 1.0, probes=10)
    assert rep.lower == pytest.approx(1.0, abs=1e-10)
    assert rep.upper == pytest.approx(1.0, abs=1e-10)
    assert rep.riesz_min == pytest.approx(1.0, abs=1e-10)
    assert rep.sqrt_residual < 1e-10


def test_kato_variable_coefficients_bracket():
    g = WeightedGrid.from_model(power_weight(0.5), 32)
    a = np.repeat([1.0, 2.0, 0.7, 1.3], 8)
    rep = riesz_and_kato(g, a, 1.0, probes=10)
    assert 0 < rep.lower <= 1 <= rep.upper
    assert np.all((rep.probe_ratios >= rep.lower - 1e-10) & (rep.probe_ratios <= rep.upper + 1e-10))
