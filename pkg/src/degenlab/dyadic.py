"""Dyadic arcs, upper half-space meshes and the norms built on them.

Conventions
-----------
The boundary grid has ``N = 2**L`` cells; sample ``i`` sits at the centre of
the arc ``[i/N, (i+1)/N)`` and carries the arc average ``w_i`` of the weight.
The transversal variable uses log-spaced cells: cell ``k`` covers
``(2**(k/q), 2**((k+1)/q)]`` and is represented by its geometric centre, so a
midpoint rule in ``ln t`` integrates exactly over whole octaves and every cell
lies inside a single dyadic scale band.
"""
from dataclasses import dataclass
import math

import numpy as np

from ._validation import check_power_of_two
from .errors import GridMismatchError, PreconditionError, ResolutionError


@dataclass(frozen=True, order=True)
class DyadicCube:
    level: int
    index: int

    def __post_init__(self):
        if self.level < 0 or not 0 <= self.index < 2**self.level:
            raise PreconditionError(f"invalid dyadic cube ({self.level}, {self.index})")

    @property
    def length(self):
        return 2.0**-self.level

    @property
    def interval(self):
        return self.index * self.length, (self.index + 1) * self.length

    def parent(self):
        if self.level == 0:
            return None
        return DyadicCube(self.level - 1, self.index // 2)

    def children(self):
        return DyadicCube(self.level + 1, 2 * self.index), DyadicCube(self.level + 1, 2 * self.index + 1)

    def contains(self, other):
        if other.level < self.level:
            return False
        return other.index >> (other.level - self.level) == self.index

    def grid_slice(self, n):
        """Index range of the grid cells of an ``n``-point grid lying in this cube."""
        per = n >> self.level if self.level <= int(math.log2(n)) else 0
        if per == 0:
            raise ResolutionError(f"cube of level {self.level} is finer than a grid of {n} cells")
        return slice(self.index * per, (self.index + 1) * per)


def scale_level(t):
    """Level ``d`` with ``t`` in ``(2**(-d-1), 2**-d]``; scales above 1 map to the whole circle."""
    m, e = math.frexp(float(t))
    d = -e + (1 if m == 0.5 else 0)
    return max(d, 0)


@dataclass(frozen=True)
class TGrid:
    """Log-spaced transversal grid with ``q`` cells per octave."""

    t: np.ndarray
    q: int
    t_min: float
    t_max: float

    @property
    def dlog(self):
        return math.log(2.0) / self.q

    @property
    def dt(self):
        """Lengths of the cells in ``t``."""
        return self.t * (2.0 ** (0.5 / self.q) - 2.0 ** (-0.5 / self.q))

    @property
    def lower(self):
        return self.t * 2.0 ** (-0.5 / self.q)

    @property
    def upper(self):
        return self.t * 2.0 ** (0.5 / self.q)

    @property
    def levels(self):
        return np.array([scale_level(u) for u in self.upper])

    def __len__(self):
        return self.t.size

    def integrate_dt_over_t(self, values, axis=0):
        return np.sum(np.moveaxis(values, axis, 0), axis=0) * self.dlog if values.size else 0.0

    def same_as(self, other):
        return self.q == other.q and self.t.shape == other.t.shape and np.array_equal(self.t, other.t)


def make_tgrid(n=None, q=4, t_min=None, t_max=4.0, min_factor=32):
    """Geometric t-grid from ``t_min`` to ``t_max`` (both rounded to powers of two).

    The default lower end is ``h / min_factor`` with ``h = 1/n``.
    """
    if t_min is None:
        if n is None:
            raise PreconditionError("give either the grid size or t_min")
        t_min = 1.0 / (n * min_factor)
    lo = math.floor(math.log2(t_min) + 1e-9)
    hi = math.ceil(math.log2(t_max) - 1e-9)
    if hi <= lo:
        raise PreconditionError("t_max must exceed t_min")
    k = np.arange(lo * q, hi * q)
    t = 2.0 ** ((k + 0.5) / q)
    return TGrid(t=t, q=q, t_min=2.0**lo, t_max=2.0**hi)


@dataclass
class UpperHalfField:
    """Complex 2-vector field on a ``TGrid`` times the periodic boundary grid.

    ``values`` has shape ``(nt, 2, N)``: component 0 is the normal part and
    component 1 the tangential part.
    """

    tgrid: TGrid
    values: np.ndarray
    weights: np.ndarray
    weight_id: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        n = self.weights.size
        check_power_of_two(n)
        if self.values.shape != (len(self.tgrid), 2, n):
            raise PreconditionError(
                f"field values have shape {self.values.shape}, expected {(len(self.tgrid), 2, n)}")
        if not np.all(np.isfinite(self.values)):
            raise PreconditionError("field values must be finite")

    @property
    def n(self):
        return self.weights.size

    def slice_norms2(self):
        """``||f_t||^2`` in L2(w) for every t in the grid."""
        return np.sum(np.abs(self.values) ** 2 * self.weights, axis=(1, 2)) / self.n

    def y_norm(self):
        return math.sqrt(float(np.sum(self.slice_norms2() * self.tgrid.t**2) * self.tgrid.dlog))

    def ystar_norm(self):
        return math.sqrt(float(np.sum(self.slice_norms2()) * self.tgrid.dlog))

    def x_norm(self, c0=2.0, c1=1.0):
        nt = ntmax(self, 2, c0, c1)
        return math.sqrt(float(np.sum(nt**2 * self.weights) / self.n))

    def metadata(self):
        return {"N": self.n, "q": self.tgrid.q, "t_min": self.tgrid.t_min,
                "t_max": self.tgrid.t_max, "weight-id": self.weight_id}

    def to_rows(self):
        n = self.n
        x = (np.arange(n) + 0.5) / n
        rows = []
        for j, t in enumerate(self.tgrid.t):
            v = self.values[j]
            for i in range(n):
                rows.append((t, x[i], v[0, i].real, v[0, i].imag, v[1, i].real, v[1, i].imag))
        return rows


def average(f, cube, measure="dx", weights=None):
    """Discrete average of grid samples over a dyadic cube.

    ``f`` may carry leading axes; the grid axis is the last one.
    """
    f = np.asarray(f)
    n = f.shape[-1]
    check_power_of_two(n)
    if cube.level > int(math.log2(n)) - 1:
        raise ResolutionError(f"cube level {cube.level} has fewer than 2 points on a grid of {n}")
    sl = cube.grid_slice(n)
    if measure == "dx":
        return f[..., sl].mean(axis=-1)
    if measure == "dw":
        if weights is None:
            raise PreconditionError("dw-averages need weight samples")
        w = np.asarray(weights)[sl]
        return (f[..., sl] * w).sum(axis=-1) / w.sum()
    raise PreconditionError(f"unknown measure {measure!r}")


def block_average(f, level, weights=None):
    """Average over every cube of ``level`` and broadcast back to the grid.

    Levels finer than the grid act as the identity.
    """
    f = np.asarray(f)
    n = f.shape[-1]
    per = n >> level if level <= int(math.log2(n)) else 1
    per = max(per, 1)
    shape = f.shape[:-1] + (n // per, per)
    if weights is None:
        avg = f.reshape(shape).mean(axis=-1)
    else:
        w = np.asarray(weights).reshape(n // per, per)
        avg = (f.reshape(shape) * w).sum(axis=-1) / w.sum(axis=-1)
    return np.repeat(avg, per, axis=-1)


def et_apply(u, t, weights):
    """Dyadic averaging E_t: dw-average of the normal part, dx-average of the tangential part."""
    u = np.asarray(u)
    n = weights.size
    flat = u.ndim >= 1 and u.shape[-1] == 2 * n and (u.ndim == 1 or u.shape[-2:] != (2, n))
    v = u.reshape(u.shape[:-1] + (2, n)) if flat else u
    d = scale_level(t)
    out = np.empty(v.shape, dtype=np.result_type(v, float))
    out[..., 0, :] = block_average(v[..., 0, :], d, weights)
    out[..., 1, :] = block_average(v[..., 1, :], d)
    return out.reshape(u.shape)


def carleson_norm_dyadic(g, tgrid, weights):
    """Weighted dyadic Carleson norm of a nonnegative function ``g`` of shape ``(nt, N)``.

    Returns ``(norm, cube)``: the square root of the largest value of
    ``w(Q)^-1 * int_{Q x (0, l(Q)]} g dw dt/t`` and the maximising cube.
    """
    g = np.asarray(g, dtype=float)
    n = weights.size
    if g.shape != (len(tgrid), n):
        raise GridMismatchError(f"g has shape {g.shape}, expected {(len(tgrid), n)}")
    big_l = int(math.log2(n))
    upper = tgrid.upper
    best, arg = 0.0, DyadicCube(0, 0)
    wg = g * weights / n
    for d in range(big_l + 1):
        keep = upper <= 2.0**-d * (1 + 1e-12)
        if not np.any(keep):
            continue
        per = n >> d
        box = wg[keep].sum(axis=0).reshape(2**d, per).sum(axis=1) * tgrid.dlog
        mass = weights.reshape(2**d, per).sum(axis=1) / n
        ratio = box / mass
        k = int(np.argmax(ratio))
        if ratio[k] > best:
            best, arg = float(ratio[k]), DyadicCube(d, k)
    return math.sqrt(best), arg


def _whitney_offsets(tgrid, c0):
    m = 0
    while 2.0 ** ((m + 1) / tgrid.q) < c0 * (1 - 1e-12):
        m += 1
    return m


def _periodic_window_sum(a, radius):
    """Sum of ``a`` over the periodic window ``[i - r, i + r]`` along the last axis."""
    n = a.shape[-1]
    if 2 * radius + 1 >= n:
        return np.broadcast_to(a.sum(axis=-1, keepdims=True), a.shape).copy()
    ext = np.concatenate([a[..., n - radius:], a, a[..., :radius + 1]], axis=-1)
    c = np.cumsum(ext, axis=-1)
    c = np.concatenate([np.zeros(a.shape[:-1] + (1,)), c], axis=-1)
    return c[..., 2 * radius + 1:2 * radius + 1 + n] - c[..., :n]


def whitney_averages(values, tgrid, weights, q=2, c0=2.0, c1=1.0):
    """L^q(dt dw) averages of |values| over the discrete Whitney regions W(t_j, x_i).

    ``values`` has shape ``(nt, ..., N)``; the modulus is taken over the middle axes.
    """
    v = np.asarray(values)
    nt, n = v.shape[0], v.shape[-1]
    mod = np.abs(v) if v.ndim == 2 else np.sqrt(np.sum(np.abs(v.reshape(nt, -1, n)) ** 2, axis=1))
    p = mod**q
    dt = tgrid.dt
    m = _whitney_offsets(tgrid, c0)
    out = np.zeros((nt, n))
    for j in range(nt):
        ks = np.arange(max(0, j - m), min(nt, j + m + 1))
        radius = max(int(math.ceil(c1 * tgrid.t[j] * n - 1e-12)) - 1, 0)
        num = _periodic_window_sum((dt[ks, None] * p[ks] * weights).sum(axis=0), radius)
        den = dt[ks].sum() * _periodic_window_sum(weights, radius)
        out[j] = (num / den) ** (1.0 / q)
    return out


def ntmax(f, q=2, c0=2.0, c1=1.0):
    """Non-tangential maximal function: sup over t of Whitney L^q averages."""
    if q not in (1, 2) and not 1 < q < 2:
        raise PreconditionError("q must lie in [1, 2]")
    if c0 <= 1 or c1 <= 0:
        raise PreconditionError("Whitney constants need c0 > 1 and c1 > 0")
    return whitney_averages(f.values, f.tgrid, f.weights, q, c0, c1).max(axis=0)


def whitney_sup(g, tgrid, weights, c0=2.0, c1=1.0):
    """W_infinity: supremum of ``g`` (shape ``(nt, N)``) over Whitney regions."""
    nt, n = g.shape
    m = _whitney_offsets(tgrid, c0)
    out = np.empty_like(g, dtype=float)
    for j in range(nt):
        lo, hi = max(0, j - m), min(nt, j + m + 1)
        col = g[lo:hi].max(axis=0)
        radius = max(int(math.ceil(c1 * tgrid.t[j] * n - 1e-12)) - 1, 0)
        if 2 * radius + 1 >= n:
            out[j] = col.max()
        else:
            stack = [np.roll(col, s) for s in range(-radius, radius + 1)]
            out[j] = np.max(stack, axis=0)
    return out


def carleson_functional(g, tgrid, weights):
    """Dyadic weighted Carleson functional C g(x) = sup_{Q ni x} w(Q)^-1 int_{Q x (0, l(Q))} g dt dw."""
    n = weights.size
    big_l = int(math.log2(n))
    upper = tgrid.upper
    out = np.zeros(n)
    wg = g * tgrid.dt[:, None] * weights / n
    for d in range(big_l + 1):
        keep = upper <= 2.0**-d * (1 + 1e-12)
        per = n >> d
        box = wg[keep].sum(axis=0).reshape(2**d, per).sum(axis=1)
        mass = weights.reshape(2**d, per).sum(axis=1) / n
        out = np.maximum(out, np.repeat(box / mass, per))
    return out


def modified_carleson_norm(E, tgrid, weights, c0=2.0, c1=1.0):
    """Return ``(||E||_*, ||E||_inf)`` for a matrix field ``E`` of shape ``(nt, N, 2, 2)``."""
    E = np.asarray(E)
    if E.shape[:2] != (len(tgrid), weights.size):
        raise GridMismatchError("E must be sampled on the (t, x) mesh")
    mag = np.linalg.norm(E, ord=2, axis=(-2, -1)) if E.ndim == 4 else np.abs(E)
    sup = float(mag.max()) if mag.size else 0.0
    g = mag**2 / tgrid.t[:, None]
    cf = carleson_functional(whitney_sup(g, tgrid, weights, c0, c1), tgrid, weights)
    return math.sqrt(float(cf.max())), sup
