import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from degenlab.dyadic import (DyadicCube, UpperHalfField, average, block_average, carleson_norm_dyadic,
                             et_apply, make_tgrid, ntmax, scale_level, whitney_averages)
from degenlab.errors import GridMismatchError, PreconditionError, ResolutionError


cubes = st.integers(0, 12).flatmap(lambda d: st.builds(DyadicCube, st.just(d), st.integers(0, 2**d - 1)))


@given(cubes)
def test_children_split_parent(q):
    a, b = q.children()
    assert a.parent() == q and b.parent() == q
    assert a.interval[0] == q.interval[0] and b.interval[1] == q.interval[1]
    assert math.isclose(a.length + b.length, q.length)
    assert q.contains(a) and q.contains(b) and not a.contains(q)


@given(cubes, cubes)
def test_containment_is_nesting(p, q):
    lo_p, hi_p = p.interval
    lo_q, hi_q = q.interval
    nested = lo_p <= lo_q and hi_q <= hi_p
    assert p.contains(q) == nested


def test_invalid_cube_rejected():
    with pytest.raises(PreconditionError):
        DyadicCube(2, 4)
    with pytest.raises(ResolutionError):
        DyadicCube(6, 0).grid_slice(16)


@given(st.floats(1e-6, 8.0))
def test_scale_level_brackets_t(t):
    d = scale_level(t)
    if t <= 1:
        assert 2.0 ** (-d - 1) < t <= 2.0**-d * (1 + 1e-15)
    else:
        assert d == 0


def test_tgrid_covers_octaves():
    tg = make_tgrid(64, q=4)
    assert tg.t_min == 2.0**-11 and tg.t_max == 4.0
    assert len(tg) == 13 * 4
    # dt/t integrates log(t_max / t_min)
    assert math.isclose(tg.integrate_dt_over_t(np.ones(len(tg))), math.log(tg.t_max / tg.t_min))
    assert np.allclose(tg.upper[:-1], tg.lower[1:])
    with pytest.raises(PreconditionError):
        make_tgrid(t_min=1.0, t_max=0.5)


def test_averages_of_constants_and_weights():
    rng = np.random.default_rng(0)
    w = rng.uniform(0.5, 2.0, 32)
    f = rng.standard_normal(32)
    q = DyadicCube(2, 1)
    assert math.isclose(average(np.ones(32), q), 1.0)
    assert math.isclose(average(f, q, "dw", w), np.sum(f[8:16] * w[8:16]) / w[8:16].sum())
    b = block_average(f, 3, w)
    # block averages preserve the weighted mass of every block
    assert np.allclose((b * w).reshape(8, 4).sum(1), (f * w).reshape(8, 4).sum(1))
    assert np.allclose(block_average(f, 9), f)


def test_et_apply_uses_dw_for_normal_part():
    w = np.array([1.0, 3.0] * 8)
    u = np.stack([np.arange(16.0), np.arange(16.0)])
    out = et_apply(u, 0.1, w)
    assert out.shape == (2, 16)
    lvl = scale_level(0.1)
    assert np.allclose(out[0], block_average(u[0], lvl, w))
    assert np.allclose(out[1], block_average(u[1], lvl))


def test_carleson_norm_of_constant_density():
    # g = 1 on the t-grid: the box integral over Q is w(Q) * log(l(Q) / t_min)
    n = 16
    tg = make_tgrid(t_min=2.0**-8, t_max=1.0)
    w = np.ones(n)
    norm, cube = carleson_norm_dyadic(np.ones((len(tg), n)), tg, w)
    assert math.isclose(norm**2, math.log(1.0 / tg.t_min))
    assert cube == DyadicCube(0, 0)
    with pytest.raises(GridMismatchError):
        carleson_norm_dyadic(np.ones((3, n)), tg, w)


def test_whitney_average_of_constant_field():
    tg = make_tgrid(32)
    w = np.random.default_rng(1).uniform(0.5, 2, 32)
    vals = np.zeros((len(tg), 2, 32), complex)
    vals[:, 0] = 3.0
    vals[:, 1] = 4.0
    f = UpperHalfField(tg, vals, w)
    assert np.allclose(whitney_averages(vals, tg, w), 5.0)
    assert np.allclose(ntmax(f), 5.0)
    assert math.isclose(f.x_norm(), 5.0 * math.sqrt(w.mean()))


def test_field_validation():
    tg = make_tgrid(16)
    with pytest.raises(PreconditionError):
        UpperHalfField(tg, np.zeros((2, 2, 16)), np.ones(16))
    bad = np.zeros((len(tg), 2, 16))
    bad[0, 0, 0] = np.nan
    with pytest.raises(PreconditionError):
        UpperHalfField(tg, bad, np.ones(16))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_ntmax_dominates_pointwise_average(seed):
    rng = np.random.default_rng(seed)
    tg = make_tgrid(16)
    vals = rng.standard_normal((len(tg), 2, 16))
    w = rng.uniform(0.2, 5, 16)
    f = UpperHalfField(tg, vals, w)
    nt = ntmax(f)
    wa = whitney_averages(vals, tg, w)
    assert np.all(nt >= wa.max(axis=0) - 1e-12)
    assert f.y_norm() >= 0 and f.ystar_norm() >= 0
