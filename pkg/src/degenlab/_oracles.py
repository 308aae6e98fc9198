"""Independent reference computations used to cross-check the main code paths.

Nothing here shares code with the quantities it checks: masses of power
weights are computed by Gauss-Jacobi / Gauss-Legendre quadrature instead of
incomplete beta functions, spectral constants by brute force, and so on.
"""
import math

import numpy as np
from scipy import special


def _gl(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return x, w


def power_arc_masses(a, level, exponent_sign=1, n=24):
    """Masses of |2 sin(pi x)|^(s a) over every dyadic arc of ``level`` (s = exponent_sign)."""
    b = exponent_sign * a
    k = 2**level
    ell = 1.0 / k
    out = np.empty(k)
    if level == 0:
        # split the circle into two halves, each touching one singular point
        return np.array([2.0 * _touching_mass(b, 0.5, n)])
    xg, wg = _gl(n)
    lo = np.arange(k) * ell
    pts = lo[:, None] + 0.5 * ell * (xg[None, :] + 1.0)
    vals = np.abs(2.0 * np.sin(np.pi * pts)) ** b
    out[:] = 0.5 * ell * (vals @ wg)
    edge = _touching_mass(b, ell, n)
    out[0] = edge
    out[-1] = edge
    return out


def _touching_mass(b, ell, n):
    """int_0^ell |2 sin(pi x)|^b dx by Gauss-Jacobi with weight x^b."""
    if b == 0:
        return ell
    xj, wj = special.roots_jacobi(n, 0.0, b)
    x = 0.5 * ell * (xj + 1.0)
    g = (2.0 * np.sin(np.pi * x) / x) ** b
    return (0.5 * ell) ** (b + 1.0) * float(np.sum(wj * g))


def a2_bruteforce_power(a, depth, n=24):
    """Exhaustive scan of all dyadic arcs up to ``depth`` for |2 sin(pi x)|^a."""
    best = 1.0
    for d in range(depth + 1):
        m = power_arc_masses(a, d, 1, n)
        mi = power_arc_masses(a, d, -1, n)
        best = max(best, float(np.max(m * mi)) * 4.0**d)
    return best


def riemann_mass(f, lo, hi, samples):
    x = lo + (np.arange(samples) + 0.5) * (hi - lo) / samples
    return float(np.sum(f(x)) * (hi - lo) / samples)


def power_root_mass(a):
    """Closed form int_0^1 |2 sin(pi x)|^a dx = Gamma(1 + a) / Gamma(1 + a/2)^2."""
    return math.gamma(1.0 + a) / math.gamma(1.0 + 0.5 * a) ** 2


def random_sector_angle(bc, samples, seed=0):
    """Lower bound for the numerical-range angle of ``bc`` from random vectors."""
    rng = np.random.default_rng(seed)
    m = bc.shape[0]
    v = rng.standard_normal((m, samples)) + 1j * rng.standard_normal((m, samples))
    q = np.einsum("ij,ij->j", v.conj(), bc @ v)
    return float(np.max(np.abs(np.angle(q))))


def random_accretivity(bmat, basis, samples, seed=0):
    """Minimum of Re<Bv, v>/|v|^2 over random v in the span of ``basis`` (an upper bound for kappa)."""
    rng = np.random.default_rng(seed)
    k = basis.shape[1]
    c = rng.standard_normal((k, samples)) + 1j * rng.standard_normal((k, samples))
    v = basis @ c
    num = np.real(np.einsum("ij,ij->j", v.conj(), bmat @ v))
    den = np.real(np.einsum("ij,ij->j", v.conj(), v))
    return float(np.min(num / den))
