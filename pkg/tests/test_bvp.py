import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from conftest import make_grid
from degenlab import bvp
from degenlab.dyadic import make_tgrid
from degenlab.errors import (CompatibilityError, GridMismatchError, NotHermitianError, PreconditionError,
                             SingularBlockError)
from degenlab.operators import CoefficientMatrix, SpectralCalculus
from degenlab.weights import constant_weight, power_weight

finite = st.floats(-3, 3, allow_nan=False)


@settings(max_examples=50)
@given(arrays(np.float64, (4, 2, 2, 2), elements=finite))
def test_hat_is_an_involution(parts):
    c = parts[..., 0] + 1j * parts[..., 1]
    c[:, 0, 0] += np.where(np.abs(c[:, 0, 0]) < 0.1, 1.0, 0.0)
    back = bvp.hat_transform(bvp.hat_transform(c))
    assert np.allclose(back, c, atol=1e-9 * max(1.0, np.abs(c).max()) ** 3)


def test_hat_singular_block():
    with pytest.raises(SingularBlockError):
        bvp.hat_transform(np.array([[0.0, 1.0], [1.0, 1.0]]))


def test_hat_preserves_accretivity():
    c = bvp.random_c(16, 3)
    pair = bvp.CoefficientPair.from_c(c)
    assert pair.involution_error() < 1e-14
    assert bvp.pointwise_accretivity(c.b) > 0
    assert bvp.pointwise_accretivity(pair.B.b) > 0
    assert pair.adjoint().C.b == pytest.approx(np.conj(np.swapaxes(c.b, 1, 2)))


def _dirichlet_mode(n, k):
    # discrete harmonic extension of cos(2 pi k x) for C = I: the symbol of -d_x^2 is (2 n sin(pi k / n))^2
    return 2 * n * math.sin(math.pi * k / n)


@pytest.mark.parametrize("k", [1, 3])
def test_flat_dirichlet_matches_separation_of_variables(k):
    n = 32
    g, D = make_grid(constant_weight(), n)
    phi = np.cos(2 * np.pi * k * g.x)
    sol = bvp.solve_tindep(D, CoefficientMatrix.identity(n), "dirichlet", phi)
    lam = _dirichlet_mode(n, k)
    ts = [0.0, 0.05, 0.2]
    u = sol.potential(ts)
    ref = np.exp(-lam * np.array(ts))[:, None] * phi[None, :]
    assert np.allclose(u, ref, atol=1e-10)
    assert abs(sol.constant) < 1e-12


def test_dirichlet_constant_datum_gives_constant_solution(power32):
    g, D = power32
    sol = bvp.solve_tindep(D, bvp.random_c(32, 1), "dirichlet", np.full(32, 2.0))
    assert sol.constant == pytest.approx(2.0)
    assert np.allclose(sol.potential([0.0, 0.3]), 2.0, atol=1e-10)
    assert np.allclose(sol.conormal([0.1]), 0, atol=1e-10)


@pytest.mark.parametrize("kind", bvp.KINDS)
def test_boundary_traces_reproduce_data(power32, kind):
    g, D = power32
    c = bvp.random_c(32, 2)
    phi = bvp.fourier_datum(g, 4, seed=3)
    if kind == "neumann":
        phi = bvp.neumann_compatible(g, phi)
    sol = bvp.solve_tindep(D, c, kind, phi)
    f0 = sol.boundary_trace()
    if kind == "neumann":
        assert np.allclose(f0[:32], phi, atol=1e-10)
    elif kind == "regularity":
        assert np.allclose(f0[32:], D.G @ phi, atol=1e-8)
        u0 = sol.potential([0.0])[0]
        # u is recovered up to the additive constant fixed by decay at infinity
        assert np.allclose(u0 - u0.mean(), phi - phi.mean(), atol=1e-10)
    else:
        assert np.allclose(sol.potential([0.0])[0], phi, atol=1e-10)
    assert sol.sigma_min > 0 and sol.condition >= 1


def test_solutions_decay_and_satisfy_weak_form(power32):
    g, D = power32
    c = bvp.random_c(32, 4)
    phi = bvp.neumann_compatible(g, bvp.fourier_datum(g))
    sol = bvp.solve_tindep(D, c, "neumann", phi)
    norms = g.norm(sol.conormal([0.0, 0.5, 2.0]))
    assert norms[0] > norms[1] > norms[2]
    assert np.allclose(sol.potential([40.0]), 0, atol=1e-8)
    res = bvp.weak_form_residual(D, sol.hardy.B, sol.hardy, sol.coeffs, tests=5)
    assert res < 1e-9
    n = sol.compute_norms()
    assert n["ntmax_grad"] > 0 and n["trace_limits"][0] < n["trace_limits"][-1]


def test_gradient_dictionary(power32):
    # (d_t u, d_x u) from the conormal field agrees with finite differences of u
    g, D = power32
    sol = bvp.solve_tindep(D, bvp.random_c(32, 5), "dirichlet", bvp.fourier_datum(g))
    t, dt = 0.2, 1e-5
    u = sol.potential([t - dt, t + dt])
    grad = sol.gradient([t])[0]
    assert np.allclose((u[1] - u[0]) / (2 * dt), grad[0], atol=1e-6 * np.abs(grad[0]).max())
    assert np.allclose(D.G @ sol.potential([t])[0], grad[1], atol=1e-8)


def test_neumann_datum_must_be_compatible(power32):
    g, D = power32
    with pytest.raises(CompatibilityError):
        bvp.solve_tindep(D, CoefficientMatrix.identity(32), "neumann", np.ones(32))
    with pytest.raises(PreconditionError):
        bvp.solve_tindep(D, CoefficientMatrix.identity(32), "robin", np.zeros(32))
    with pytest.raises(PreconditionError):
        bvp.solve_tindep(D, CoefficientMatrix.identity(32), "dirichlet", np.zeros(5))


def test_identity_trace_maps():
    _, D = make_grid(power_weight(0.5), 32)
    hy = bvp.HardySpaces(D, CoefficientMatrix.identity(32))
    assert hy.sigma_min("dirichlet") == pytest.approx(1 / math.sqrt(2), abs=1e-10)
    assert hy.sigma_min("neumann") == pytest.approx(1 / math.sqrt(2), abs=1e-10)
    assert hy.sigma_min("regularity") == pytest.approx(1 / math.sqrt(2), abs=1e-10)
    assert hy.basis("+").shape == (64, 31)


@pytest.mark.parametrize("side", ["+", "-"])
def test_rellich_identity_for_hermitian_coefficients(power32, side):
    _, D = power32
    rep = bvp.rellich_residual(D, bvp.random_hermitian_c(32, 6), side, probes=5)
    assert rep.perp_residual < 1e-12 and rep.par_residual < 1e-12
    assert rep.operator_residual < 1e-12
    assert rep.coercivity_ratio > 0


def test_rellich_fails_without_symmetry(power32):
    _, D = power32
    with pytest.raises(NotHermitianError):
        bvp.rellich_residual(D, bvp.random_c(32, 7))
    rep = bvp.rellich_residual(D, bvp.random_c(32, 7), require_hermitian=False, probes=5)
    assert max(rep.perp_residual, rep.par_residual) > 1e-3


def test_fd_oracle_converges_to_semigroup():
    errs = []
    for n in (16, 32):
        g, D = make_grid(constant_weight(), n)
        phi = bvp.fourier_datum(g, 2)
        fd = bvp.fd_reference_solve(g, CoefficientMatrix.identity(n), "dirichlet", phi)
        sol = bvp.solve_tindep(D, CoefficientMatrix.identity(n), "dirichlet", phi)
        _, gs = sol.on_uniform_mesh(fd.dt, fd.grad.shape[0])
        errs.append(bvp.mesh_error(fd.grad, gs, g.w, fd.dt))
        assert np.allclose(fd.u[0], phi)
    assert 1.5 <= errs[0] / errs[1] <= 3


def test_fd_neumann_mean_and_restriction():
    g, _ = make_grid(power_weight(0.5), 16)
    phi = bvp.neumann_compatible(g, bvp.fourier_datum(g, 2))
    fd = bvp.fd_reference_solve(g, CoefficientMatrix.identity(16), "neumann", phi)
    assert abs(g.inner(fd.u[0], np.ones(16))) < 1e-10
    u, gr = fd.restrict()
    assert u.shape[1] == 8 and gr.shape[2] == 8
    with pytest.raises(CompatibilityError):
        bvp.fd_reference_solve(g, CoefficientMatrix.identity(16), "neumann", np.ones(16))


def test_se_of_zero_discrepancy_vanishes(power32):
    _, D = power32
    B = bvp.hat_transform(bvp.random_c(32, 8))
    tg = make_tgrid(32)
    calc = SpectralCalculus(D, B)
    f = bvp.random_field(D, calc, tg, seed=1)
    res = bvp.sE_apply(D, B, np.zeros((len(tg), 32, 2, 2)), f)
    assert np.allclose(res.S.values, 0) and np.allclose(res.h_minus, 0)


def test_se_intertwining_and_bounds(power32):
    _, D = power32
    B = bvp.hat_transform(bvp.random_c(32, 9))
    tg = make_tgrid(32)
    calc = SpectralCalculus(D, B)
    f = bvp.random_field(D, calc, tg, seed=2)
    disc = bvp.step_discrepancy(tg, 32, 0.1, 0.25)
    res = bvp.sE_apply(D, B, disc, f)
    assert res.intertwining_defect < 1e-10
    assert 0 < res.ratio_x < 10 and res.e_star > 0
    with pytest.raises(GridMismatchError):
        bvp.sE_apply(D, B, disc[:-1], f)


def test_sweeps_baseline_and_duality(power32):
    _, D = power32
    c0 = bvp.random_hermitian_c(32, 0)
    dc = bvp.random_c(32, 100)
    rep = bvp.perturbation_sweep(D, c0, dc, np.linspace(0, 0.3, 4))
    hy = bvp.HardySpaces(D, bvp.hat_transform(c0))
    for k in bvp.KINDS:
        assert rep.sigma[k][0] == pytest.approx(hy.sigma_min(k))
    assert rep.continuous() and rep.radius == pytest.approx(0.3)
    flags = bvp.duality_flags(D, samples=4)
    assert all(a == b for a, b, _, _ in flags)


def test_tdep_sweep_reduces_to_tindep_at_zero(power32):
    _, D = power32
    c0 = bvp.random_hermitian_c(32, 1)
    rep = bvp.tdep_sweep(D, c0, bvp.random_c(32, 2), [0.0, 0.05], maxiter=30)
    hy = bvp.HardySpaces(D, bvp.hat_transform(c0))
    assert rep.converged.all()
    assert rep.sigma[0] == pytest.approx(hy.sigma_min("neumann"), rel=1e-10)
    assert rep.e_star[0] == 0 and rep.e_star[1] > 0
    with pytest.raises(PreconditionError):
        bvp.tdep_sweep(D, c0, c0, [0.0], kind="dirichlet")


def test_interior_estimates(power32):
    g, D = power32
    tg = np.arange(40) / 16
    u = np.ones((40, 32))
    grad = np.zeros((39, 2, 32))
    rep = bvp.interior_checks(tg, u, grad, g.w)
    assert rep.caccioppoli_max == 0.0
    fd = bvp.fd_reference_solve(g, CoefficientMatrix.identity(32), "dirichlet", bvp.fourier_datum(g))
    rep = bvp.interior_checks(fd.t, fd.u, fd.grad, g.w, D=D, B=CoefficientMatrix.identity(32))
    assert 0 < rep.caccioppoli_max < 50 and 0 < rep.reverse_holder_max < 5
    assert 0 < rep.local_coercivity <= 1
    with pytest.raises(PreconditionError):
        bvp.interior_checks(fd.t, fd.u, fd.grad, g.w, alpha=0.9, beta=0.5)


def test_ntmax_equivalence_bracket(power32):
    _, D = power32
    r = bvp.ntmax_equivalence(SpectralCalculus(D, bvp.hat_transform(bvp.random_c(32, 3))), probes=5)
    assert np.all((r > 0.5) & (r < 2))


def test_solution_export_rows(power32):
    g, D = power32
    sol = bvp.solve_tindep(D, CoefficientMatrix.identity(32), "dirichlet", bvp.fourier_datum(g))
    rows = sol.to_rows([0.0, 0.5])
    assert len(rows) == 64 and len(rows[0]) == 8
    assert rows[0][2] == pytest.approx(bvp.fourier_datum(g)[0])
