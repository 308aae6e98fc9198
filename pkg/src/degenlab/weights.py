"""A2 weights on the periodic unit interval and their dyadic characteristics.

A weight is stored as ``c * exp(p(x)) * |2 sin(pi x)|**a`` where ``p`` is a
piecewise-constant function on the dyadic leaves of some construction depth.
Every kind offered here (constant, power, random-dyadic and products of these)
fits this form, which makes arc masses exact: closed-form incomplete beta
integrals for the power factor, exact sums for the piecewise-constant factor.
"""
from dataclasses import dataclass, asdict
import math

import numpy as np
from scipy import integrate, special

from ._validation import as_generator, check_positive
from .dyadic import DyadicCube
from .errors import DepthExceededError, PreconditionError

KINDS = ("constant", "power", "random-dyadic", "product")
DEFAULT_DEPTH = 14
MAX_RANDOM_DEPTH = 20

_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)


def _power_primitive(a, x):
    """Return int_0^x |2 sin(pi s)|^a ds for x in [0, 1/2].

    Uses the incomplete beta function. For x > 1/4 the integral is taken from
    the complementary end so that the beta argument stays below 1/2.
    """
    x = np.asarray(x, dtype=float)
    p = 0.5 * (a + 1.0)
    const = 2.0**a / np.pi
    half = 0.5 * special.beta(p, 0.5)  # int_0^{pi/2} sin^a
    theta = np.pi * x
    low = x <= 0.25
    out = np.empty_like(x)
    out[low] = half * special.betainc(p, 0.5, np.sin(theta[low]) ** 2)
    rest = half * special.betainc(0.5, p, np.cos(theta[~low]) ** 2)
    out[~low] = half - rest
    return const * out


def _power_leaf_masses(a, depth):
    """Masses of |2 sin(pi x)|^a on the 2**depth dyadic leaves."""
    if a == 0.0:
        return np.full(2**depth, 2.0**-depth)
    if depth == 0:
        return np.array([2.0 * _power_primitive(a, np.array([0.5]))[0]])
    half = 2 ** (depth - 1)
    edges = np.arange(half + 1) / 2.0**depth
    prim = _power_primitive(a, edges)
    left = np.diff(prim)
    return np.concatenate([left, left[::-1]])


def _power_leaf_logs(depth):
    """Integrals of ln|2 sin(pi x)| over the dyadic leaves."""
    n = 2**depth
    if depth == 0:
        return np.array([0.0])
    delta = 1.0 / n
    half = n // 2
    lo = np.arange(half) * delta
    nodes = lo[:, None] + 0.5 * delta * (_GL_X[None, :] + 1.0)
    vals = np.log(2.0 * np.sin(np.pi * nodes))
    left = 0.5 * delta * (vals @ _GL_W)
    # the first leaf carries the logarithmic singularity at x = 0
    x0 = 0.5 * delta * (_GL_X + 1.0)
    smooth = np.log(np.sinc(x0))
    left[0] = delta * (math.log(2.0 * math.pi * delta) - 1.0) + 0.5 * delta * (smooth @ _GL_W)
    return np.concatenate([left, left[::-1]])


def _power_arc_quad(a, lo, hi):
    """Adaptive quadrature of |2 sin(pi x)|^a over [lo, hi] within [0, 1]."""
    if a == 0.0:
        return hi - lo
    opts = dict(epsabs=0.0, epsrel=1e-12, limit=200)
    if lo == 0.0 and hi <= 0.5:
        g = lambda x: (np.sinc(x) * 2.0 * np.pi) ** a
        return integrate.quad(g, 0.0, hi, weight="alg", wvar=(a, 0.0), **opts)[0]
    if hi == 1.0 and lo >= 0.5:
        g = lambda s: (np.sinc(s) * 2.0 * np.pi) ** a
        return integrate.quad(g, 0.0, 1.0 - lo, weight="alg", wvar=(a, 0.0), **opts)[0]
    f = lambda x: abs(2.0 * math.sin(math.pi * x)) ** a
    return integrate.quad(f, lo, hi, **opts)[0]


class WeightModel:
    """An evaluable weight with cached dyadic masses.

    Instances are built through :func:`constant_weight`, :func:`power_weight`,
    :func:`random_dyadic_weight`, :func:`product_weight` or
    :func:`weight_from_spec`; the cache is filled eagerly and never mutated.
    """

    def __init__(self, kind, params, depth, seed=None, *, scale=1.0, exponent=0.0,
                 log_pieces=None):
        if kind not in KINDS:
            raise PreconditionError(f"unknown weight kind {kind!r}")
        if not -1.0 < exponent < 1.0:
            raise PreconditionError(f"power exponent must lie in (-1, 1), got {exponent}")
        self.kind = kind
        self.params = params
        self.seed = seed
        self.scale = check_positive(scale, "scale")
        self.exponent = float(exponent)
        if log_pieces is not None:
            log_pieces = np.asarray(log_pieces, dtype=float)
            self.piece_depth = int(round(math.log2(log_pieces.size)))
            if 2**self.piece_depth != log_pieces.size:
                raise PreconditionError("piecewise factor needs 2**depth leaves")
            depth = max(depth, self.piece_depth)
        else:
            self.piece_depth = None
        self.log_pieces = log_pieces
        self.depth = int(depth)
        self._mass, self._inv_mass, self._log_mean = self._build_cache(self.depth)

    # -- construction -----------------------------------------------------------
    def _leaves(self, depth):
        a = self.exponent
        m = _power_leaf_masses(a, depth)
        mi = _power_leaf_masses(-a, depth)
        logs = a * _power_leaf_logs(depth) if a != 0.0 else np.zeros(2**depth)
        logs = logs + math.log(self.scale) * 2.0**-depth
        m = m * self.scale
        mi = mi / self.scale
        if self.log_pieces is not None:
            rep = 2 ** (depth - self.piece_depth)
            p = np.repeat(self.log_pieces, rep)
            m = m * np.exp(p)
            mi = mi * np.exp(-p)
            logs = logs + p * 2.0**-depth
        return m, mi, logs

    def _build_cache(self, depth):
        m, mi, logs = self._leaves(depth)
        mass, inv, logint = [m], [mi], [logs]
        for _ in range(depth):
            mass.append(mass[-1].reshape(-1, 2).sum(axis=1))
            inv.append(inv[-1].reshape(-1, 2).sum(axis=1))
            logint.append(logint[-1].reshape(-1, 2).sum(axis=1))
        mass.reverse(), inv.reverse(), logint.reverse()
        log_mean = [li * 2.0**d for d, li in enumerate(logint)]
        for arr in mass + inv + log_mean:
            arr.setflags(write=False)
        return mass, inv, log_mean

    # -- queries ----------------------------------------------------------------
    def level(self, d):
        """Return ``(w(Q), w^{-1}(Q), (ln w)_Q)`` arrays for all cubes of level ``d``."""
        if d < 0:
            raise PreconditionError("level must be non-negative")
        if d <= self.depth:
            return self._mass[d], self._inv_mass[d], self._log_mean[d]
        if self.log_pieces is not None:
            raise DepthExceededError(
                f"level {d} exceeds the construction depth {self.depth} of this weight")
        m, mi, logs = self._leaves(d)
        return m, mi, logs * 2.0**d

    def __call__(self, x):
        x = np.mod(np.asarray(x, dtype=float), 1.0)
        val = self.scale * np.abs(2.0 * np.sin(np.pi * x)) ** self.exponent
        if self.log_pieces is not None:
            idx = np.minimum((x * 2**self.piece_depth).astype(int), 2**self.piece_depth - 1)
            val = val * np.exp(self.log_pieces[idx])
        return val

    def grid_samples(self, n):
        """Arc averages of w over the ``n`` cells of a dyadic grid."""
        d = int(round(math.log2(n)))
        if 2**d != n:
            raise PreconditionError(f"grid size must be a power of two, got {n}")
        return np.array(self.level(d)[0]) * n

    def to_spec(self):
        return {"kind": self.kind, "params": self.params, "depth": self.depth, "seed": self.seed}

    @property
    def weight_id(self):
        parts = ",".join(f"{k}={v}" for k, v in sorted(self.params.items()) if k != "factors")
        if self.kind == "product":
            parts = "*".join(f.get("kind", "?") for f in self.params["factors"])
        seed = f",seed={self.seed}" if self.seed is not None else ""
        return f"{self.kind}({parts},depth={self.depth}{seed})"

    def __repr__(self):
        return f"WeightModel<{self.weight_id}>"


def constant_weight(c=1.0, depth=DEFAULT_DEPTH):
    return WeightModel("constant", {"c": float(c)}, depth, scale=c)


def power_weight(a, depth=DEFAULT_DEPTH):
    """The weight |2 sin(pi x)|^a, A2 on the circle for -1 < a < 1."""
    return WeightModel("power", {"a": float(a)}, depth, exponent=a)


def random_dyadic_weight(seed, depth, beta):
    """Piecewise-constant weight whose logarithm is a dyadic martingale.

    Each cube splits its log-value ``v`` into ``v + e`` (left) and ``v - e``
    (right) with ``e`` uniform in ``[-beta, beta]``.
    """
    if not 0 <= depth <= MAX_RANDOM_DEPTH:
        raise PreconditionError(f"depth must lie in [0, {MAX_RANDOM_DEPTH}]")
    if not 0.0 <= beta <= 1.0:
        raise PreconditionError("beta must lie in [0, 1]")
    rng = as_generator(seed)
    logs = np.zeros(1)
    for d in range(depth):
        eps = rng.uniform(-beta, beta, size=2**d)
        logs = np.repeat(logs, 2) + np.column_stack([eps, -eps]).ravel()
    return WeightModel("random-dyadic", {"beta": float(beta)}, depth, seed=seed,
                       log_pieces=logs)


def product_weight(factors, depth=None):
    """Pointwise product of weights; exponents add and log-pieces are merged."""
    factors = list(factors)
    if not factors:
        raise PreconditionError("product needs at least one factor")
    scale = math.prod(f.scale for f in factors)
    exponent = sum(f.exponent for f in factors)
    pieces = [f for f in factors if f.log_pieces is not None]
    log_pieces = None
    if pieces:
        pd = max(f.piece_depth for f in pieces)
        log_pieces = np.zeros(2**pd)
        for f in pieces:
            log_pieces = log_pieces + np.repeat(f.log_pieces, 2 ** (pd - f.piece_depth))
    if depth is None:
        depth = max(f.depth for f in factors)
    params = {"factors": [f.to_spec() for f in factors]}
    return WeightModel("product", params, depth, scale=scale, exponent=exponent,
                       log_pieces=log_pieces)


def weight_from_spec(spec):
    """Build a weight from its JSON description ``{kind, params, depth, seed}``."""
    kind = spec.get("kind")
    params = spec.get("params", {}) or {}
    depth = spec.get("depth")
    if kind == "constant":
        return constant_weight(params.get("c", 1.0), depth or DEFAULT_DEPTH)
    if kind == "power":
        if "a" not in params:
            raise PreconditionError("power weight needs params.a")
        return power_weight(params["a"], depth or DEFAULT_DEPTH)
    if kind == "random-dyadic":
        return random_dyadic_weight(spec.get("seed", 0), depth if depth is not None else 10,
                                    params.get("beta", 0.3))
    if kind == "product":
        return product_weight([weight_from_spec(f) for f in params.get("factors", [])], depth)
    raise PreconditionError(f"unknown weight kind {kind!r}")


def evaluate_and_mass(w, cube, n_samples=16):
    """Return pointwise samples, the mass w(Q) and the log-mean (ln w)_Q.

    Cubes inside the cache are answered from it; deeper cubes of analytic
    kinds fall back to adaptive quadrature.
    """
    lo, hi = cube.interval
    xs = lo + (np.arange(n_samples) + 0.5) * (hi - lo) / n_samples
    samples = w(xs)
    if cube.level <= w.depth:
        return samples, float(w._mass[cube.level][cube.index]), float(
            w._log_mean[cube.level][cube.index])
    if w.log_pieces is not None:
        raise DepthExceededError(
            f"cube level {cube.level} exceeds the construction depth {w.depth}")
    mass = w.scale * _power_arc_quad(w.exponent, lo, hi)
    log_int = _log_arc_quad(w.exponent, lo, hi) + math.log(w.scale) * (hi - lo)
    return samples, mass, log_int / (hi - lo)


def _log_arc_quad(a, lo, hi):
    if a == 0.0:
        return 0.0
    f = lambda x: math.log(abs(2.0 * math.sin(math.pi * x)))
    pts = [p for p in (0.0, 1.0) if lo <= p <= hi]
    if pts:
        # ln|x| and ln|1-x| singularities: use the algebraic-log weight of QUADPACK
        if lo == 0.0:
            g = lambda x: math.log(2.0 * math.pi * np.sinc(x))
            return a * (integrate.quad(g, lo, hi, epsabs=0.0, epsrel=1e-12)[0]
                        + hi * (math.log(hi) - 1.0))
        g = lambda s: math.log(2.0 * math.pi * np.sinc(s))
        ln = 1.0 - lo
        return a * (integrate.quad(g, 0.0, ln, epsabs=0.0, epsrel=1e-12)[0]
                    + ln * (math.log(ln) - 1.0))
    return a * integrate.quad(f, lo, hi, epsabs=0.0, epsrel=1e-12)[0]


def a2_constant(w, depth):
    """Dyadic A2 characteristic: max over levels <= depth of (avg w)(avg 1/w)."""
    if depth < 1:
        raise PreconditionError("depth must be >= 1")
    best = 1.0
    for d in range(depth + 1):
        m, mi, _ = w.level(d)
        best = max(best, float(np.max(m * mi)) * 4.0**d)
    return best


@dataclass(frozen=True)
class WeightProfile:
    a2: float
    sigma: float
    tau: float
    c0: float
    dw: float
    depth: int
    sigma_residual: float = 0.0
    tau_residual: float = 0.0

    def to_json(self):
        return asdict(self)


def _envelope_slope(x, y, upper):
    keys = np.round(np.log2(x) * 64).astype(int)
    xs, ys = [], []
    for k in np.unique(keys):
        sel = keys == k
        xs.append(np.log(x[sel][0]))
        ys.append(np.log(y[sel].max() if upper else y[sel].min()))
    xs, ys = np.array(xs), np.array(ys)
    if xs.size < 2:
        return 1.0, 0.0
    A = np.column_stack([np.ones_like(xs), xs])
    coef, *_ = np.linalg.lstsq(A, ys, rcond=None)
    resid = float(np.sqrt(np.mean((A @ coef - ys) ** 2)))
    return float(coef[1]), resid


def ainfty_profile(w, depth, samples=64, seed=0):
    """Measure the A_infinity exponents, reverse-Jensen gap and doubling dimension."""
    if depth < 2:
        raise PreconditionError("depth must be >= 2")
    depth = min(depth, w.depth) if w.log_pieces is not None else depth
    rng = as_generator(seed)
    xs, ys = [], []
    c0 = 0.0
    doubling = 1.0
    for d in range(depth + 1):
        m, _, lm = w.level(d)
        c0 = max(c0, float(np.max(np.log(m * 2.0**d) - lm)))
        if d > 0:
            parent = w.level(d - 1)[0]
            doubling = max(doubling, float(np.max(np.repeat(parent, 2) / m)))
    for d in range(depth - 1):
        m = w.level(d)[0]
        idx = np.arange(m.size) if m.size <= samples else rng.choice(m.size, samples, replace=False)
        for k in (1, 2, 3):
            if d + k > depth:
                break
            sub = np.asarray(w.level(d + k)[0]).reshape(m.size, 2**k)[idx]
            if k < 3:
                masks = np.array([[(s >> j) & 1 for j in range(2**k)] for s in range(1, 2 ** 2**k)])
            else:
                masks = rng.integers(0, 2, size=(32, 2**k))
                masks = masks[masks.sum(axis=1) > 0]
            frac = masks.sum(axis=1) / 2.0**k
            ratio = (sub @ masks.T) / m[idx][:, None]
            xs.append(np.broadcast_to(frac, ratio.shape).ravel())
            ys.append(ratio.ravel())
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    keep = x < 1.0
    sigma, sres = _envelope_slope(x[keep], y[keep], upper=True)
    tau, tres = _envelope_slope(x[keep], y[keep], upper=False)
    sigma = float(min(max(sigma, 1e-6), 1.0))
    tau = float(max(tau, 1.0))
    return WeightProfile(a2=a2_constant(w, depth), sigma=sigma, tau=tau, c0=max(c0, 0.0),
                         dw=math.log2(doubling), depth=depth, sigma_residual=sres,
                         tau_residual=tres)
