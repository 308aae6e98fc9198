"""Discrete D, coefficient matrices B and the functional calculus of DB and BD.

Fields are flat complex vectors of length ``2N``: the first ``N`` entries are
the normal component, the last ``N`` the tangential one. Internally every
operator is conjugated by ``S = diag(sqrt(h w))`` so that the weighted inner
product becomes the Euclidean one ("tilde coordinates"). Pointwise
coefficient matrices commute with ``S``.
"""
from dataclasses import dataclass
import math

import numpy as np
from scipy import linalg

from ._validation import as_generator, check_field, check_weights, check_power_of_two
from .errors import IllConditionedError, NotAccretiveError, PreconditionError

FUNCTIONS = ("resolvent", "P", "Q", "psi", "sgn", "chi+", "chi-", "exp", "abs")
COND_LIMIT = 1e8


class WeightedGrid:
    """``N`` periodic cells carrying weight samples and the inner product h * sum f conj(g) w."""

    def __init__(self, weights, weight_id=""):
        self.w = check_weights(weights)
        self.n = self.w.size
        self.h = 1.0 / self.n
        self.weight_id = weight_id
        self.s = np.sqrt(self.h * self.w)
        self.s2 = np.concatenate([self.s, self.s])

    @classmethod
    def from_model(cls, model, n):
        check_power_of_two(n, minimum=8)
        return cls(model.grid_samples(n), model.weight_id)

    @property
    def x(self):
        return (np.arange(self.n) + 0.5) * self.h

    def _wvec(self, f):
        return self.w if f.shape[-1] == self.n else np.concatenate([self.w, self.w])

    def inner(self, f, g):
        f, g = np.asarray(f), np.asarray(g)
        return self.h * np.sum(f * np.conj(g) * self._wvec(f), axis=-1)

    def norm(self, f):
        return np.sqrt(np.real(self.inner(f, f)))

    def mass(self):
        return float(self.h * self.w.sum())


def gradient_matrix(n):
    """Periodic forward difference (G f)_i = (f_{i+1} - f_i) / h."""
    g = np.zeros((n, n))
    idx = np.arange(n)
    g[idx, idx] = -n
    g[idx, (idx + 1) % n] = n
    return g


class DiscreteD:
    """The operator D = [[0, div_w], [-G, 0]] on the weighted grid."""

    def __init__(self, grid):
        if grid.n < 8:
            raise PreconditionError("D needs at least 8 grid points")
        self.grid = grid
        n, w = grid.n, grid.w
        self.G = gradient_matrix(n)
        self.divw = -(1.0 / w)[:, None] * self.G.T * w[None, :]
        D = np.zeros((2 * n, 2 * n))
        D[:n, n:] = self.divw
        D[n:, :n] = -self.G
        self.matrix = D
        self.null_basis = np.zeros((2 * n, 2))
        self.null_basis[:n, 0] = 1.0
        self.null_basis[n:, 1] = 1.0 / w
        # tilde coordinates
        s2 = grid.s2
        self.tilde = s2[:, None] * D / s2[None, :]
        nt = s2[:, None] * self.null_basis
        self.null_tilde = nt / np.linalg.norm(nt, axis=0)
        q, _ = np.linalg.qr(self.null_tilde, mode="complete")
        self.range_basis = q[:, 2:]

    @property
    def n(self):
        return self.grid.n

    def apply(self, v):
        return self.matrix @ v

    def w_adjoint(self, m):
        """Adjoint of a 2N x 2N matrix with respect to the weighted inner product."""
        wv = np.concatenate([self.grid.w, self.grid.w])
        return (1.0 / wv)[:, None] * np.conj(m).T * wv[None, :]

    def self_adjointness_defect(self):
        """Operator norm of D - D^{*w} measured in the weighted inner product."""
        diff = self.matrix - self.w_adjoint(self.matrix)
        s2 = self.grid.s2
        return float(np.linalg.norm(s2[:, None] * diff / s2[None, :], 2))

    def null_defect(self):
        """Largest entry of D applied to the two null vectors, relative to ||D||."""
        r = self.matrix @ self.null_basis
        scale = np.abs(self.matrix).max() * np.abs(self.null_basis).max(axis=0)
        return float(np.max(np.abs(r).max(axis=0) / scale))

    def range_projector(self):
        """Weighted-orthogonal projector onto the closure of R(D), in original coordinates."""
        s2 = self.grid.s2
        p = np.eye(2 * self.n) - self.null_tilde @ self.null_tilde.T
        return p / s2[:, None] * s2[None, :]

    def project_range(self, v):
        s2 = self.grid.s2
        vt = s2 * v
        vt = vt - self.null_tilde @ (self.null_tilde.T @ vt)
        return vt / s2


def build_D(grid):
    return DiscreteD(grid)


class CoefficientMatrix:
    """Pointwise 2x2 complex coefficients ``b[i]`` acting on (normal, tangential) pairs."""

    def __init__(self, b, label=""):
        b = np.asarray(b, dtype=complex)
        if b.ndim != 3 or b.shape[1:] != (2, 2):
            raise PreconditionError(f"coefficients must have shape (N, 2, 2), got {b.shape}")
        if not np.all(np.isfinite(b)):
            raise PreconditionError("coefficients must be finite")
        self.b = b
        self.label = label

    @property
    def n(self):
        return self.b.shape[0]

    @classmethod
    def identity(cls, n):
        return cls(np.broadcast_to(np.eye(2), (n, 2, 2)).copy(), "identity")

    @classmethod
    def constant(cls, m, n, label="constant"):
        return cls(np.broadcast_to(np.asarray(m, dtype=complex), (n, 2, 2)).copy(), label)

    @classmethod
    def from_pieces(cls, pieces, n, label="pieces"):
        """Piecewise-constant coefficients on the dyadic arcs of level log2(len(pieces))."""
        pieces = np.asarray(pieces, dtype=complex)
        if n % pieces.shape[0]:
            raise PreconditionError("grid must refine the coefficient pieces")
        return cls(np.repeat(pieces, n // pieces.shape[0], axis=0), label)

    @classmethod
    def block_diagonal(cls, a, d, label="block-diagonal"):
        a, d = np.broadcast_arrays(np.asarray(a, dtype=complex), np.asarray(d, dtype=complex))
        b = np.zeros(a.shape + (2, 2), dtype=complex)
        b[:, 0, 0], b[:, 1, 1] = a, d
        return cls(b, label)

    @property
    def matrix(self):
        n = self.n
        m = np.zeros((2 * n, 2 * n), dtype=complex)
        idx = np.arange(n)
        for r in range(2):
            for c in range(2):
                m[r * n + idx, c * n + idx] = self.b[:, r, c]
        return m

    def apply(self, v):
        n = self.n
        v = np.asarray(v).reshape(v.shape[:-1] + (2, n))
        out = np.einsum("irc,...ci->...ri", self.b, v)
        return out.reshape(out.shape[:-2] + (2 * n,))

    def adjoint(self):
        return CoefficientMatrix(np.conj(np.swapaxes(self.b, 1, 2)), self.label + "*")

    def sup_norm(self):
        return float(np.linalg.norm(self.b, 2, axis=(1, 2)).max())

    def is_hermitian(self, tol=1e-12):
        return bool(np.max(np.abs(self.b - np.conj(np.swapaxes(self.b, 1, 2)))) <= tol * max(1.0, self.sup_norm()))

    def is_invertible(self):
        return bool(np.min(np.abs(np.linalg.det(self.b))) > 1e-12 * max(1.0, self.sup_norm()) ** 2)


def random_pieces(seed, level=3, strength=0.4, hermitian=False):
    """Random pointwise-accretive 2x2 matrices on 2**level dyadic arcs.

    Each piece is ``H + strength * X`` with ``H`` hermitian with spectrum in
    [0.5, 2] and ``||X|| = 1`` (``X`` hermitian when ``hermitian`` is set), so
    the real part stays above ``0.5 - strength``.
    """
    rng = as_generator(seed)
    k = 2**level
    out = np.empty((k, 2, 2), dtype=complex)
    for i in range(k):
        z = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
        q, _ = np.linalg.qr(z)
        h = q @ np.diag(rng.uniform(0.5, 2.0, 2)) @ q.conj().T
        x = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
        if hermitian:
            x = x + x.conj().T
        x /= np.linalg.norm(x, 2)
        out[i] = h + strength * x
    return out


def random_accretive(n, seed, level=3, strength=0.4):
    return CoefficientMatrix.from_pieces(random_pieces(seed, level, strength), n,
                                         f"random(seed={seed},level={level},strength={strength})")


def _compressed(op_matrix, D):
    u = D.range_basis
    return u.conj().T @ op_matrix @ u


def sector_angle(bc):
    """Largest |arg <B v, v>| over unit vectors, for a square matrix ``bc`` with positive real part.

    With X = Im bc and Y = Re bc > 0 the angle condition |<Xv,v>| <= tan(mu) <Yv,v>
    is a generalized eigenvalue bound, so tan(mu) = max |eig(X, Y)|.
    """
    x = (bc - bc.conj().T) / 2j
    y = (bc + bc.conj().T) / 2
    ev = linalg.eigh(x, y, eigvals_only=True)
    return float(math.atan(max(abs(ev[0]), abs(ev[-1]))))


def accretivity(B, D, with_angle=True):
    """Return ``(kappa, mu)``: the accretivity constant and angle of ``B`` on the range of D."""
    if B.n != D.n:
        raise PreconditionError("coefficient and grid sizes differ")
    bc = _compressed(B.matrix, D)
    kappa = float(linalg.eigh(0.5 * (bc + bc.conj().T), eigvals_only=True)[0])
    if kappa <= 0:
        raise NotAccretiveError(f"B is not accretive on the range of D (kappa = {kappa:.3e})")
    mu = sector_angle(bc) if with_angle else float("nan")
    return kappa, mu


def _fvalues(name, lam, t):
    z = t * lam
    if name == "resolvent":
        return 1.0 / (1.0 + 1j * z)
    if name == "P":
        return 1.0 / (1.0 + z * z)
    if name in ("Q", "psi"):
        return z / (1.0 + z * z)
    sgn = np.where(lam.real > 0, 1.0, -1.0)
    if name == "sgn":
        return sgn + 0 * z
    if name == "chi+":
        return (lam.real > 0).astype(float) + 0 * z
    if name == "chi-":
        return (lam.real < 0).astype(float) + 0 * z
    if name == "exp":
        return np.exp(-t * sgn * lam)
    if name == "abs":
        return sgn * lam + 0 * z
    raise PreconditionError(f"unknown function {name!r}; choose from {FUNCTIONS}")


def _fzero(name):
    return 1.0 if name in ("resolvent", "P", "exp") else 0.0


def matrix_sign(m, tol=1e-13, maxiter=100):
    """Matrix sign function by the scaled Newton iteration."""
    x = np.array(m, dtype=complex)
    for _ in range(maxiter):
        xi = np.linalg.inv(x)
        c = math.sqrt(np.linalg.norm(xi, 2) / np.linalg.norm(x, 2))
        nxt = 0.5 * (c * x + xi / c)
        if np.linalg.norm(nxt - x, 1) <= tol * np.linalg.norm(nxt, 1):
            return nxt
        x = nxt
    return x


class SpectralCalculus:
    """Functional calculus of T = DB or T = BD restricted to the closure of its range.

    The splitting ``H = R(T) + N(T)`` is represented by a basis ``[R | N]``;
    on the range part the compressed operator ``M = U^* D B U`` is diagonalised
    (``method='eig'``) or handled by matrix functions built on the Newton sign
    iteration (``method='sign'``).
    """

    def __init__(self, D, B, kind="DB", method="auto", _shared=None):
        if kind not in ("DB", "BD"):
            raise PreconditionError("kind must be 'DB' or 'BD'")
        self.D, self.B, self.kind = D, B, kind
        n = D.n
        self.n = n
        self.m = 2 * n - 2
        bm = B.matrix
        u = D.range_basis
        if _shared is None:
            self.kappa, self.mu = accretivity(B, D)
            self.M = u.conj().T @ D.tilde @ bm @ u
            herm = np.allclose(self.M, self.M.conj().T, atol=1e-13 * np.abs(self.M).max())
            if herm:
                lam, v = np.linalg.eigh(self.M)
                lam = lam.astype(complex)
            else:
                lam, v = np.linalg.eig(self.M)
            self.lam, self.V = lam, v.astype(complex)
            self.cond = float(np.linalg.cond(self.V))
        else:
            for key in ("kappa", "mu", "M", "lam", "V", "cond"):
                setattr(self, key, getattr(_shared, key))
        if method == "auto":
            method = "eig" if self.cond <= COND_LIMIT else "sign"
        elif method == "eig" and self.cond > COND_LIMIT:
            raise IllConditionedError(f"eigenbasis condition number {self.cond:.3e} exceeds {COND_LIMIT:.0e}")
        self.method = method
        if kind == "DB":
            rng_basis = u.astype(complex)
            null = self._null_of_DB(bm)
        else:
            rng_basis = bm @ u
            null = D.null_tilde.astype(complex)
        self.range_basis_t = rng_basis
        self.null_t = null
        basis = np.hstack([rng_basis, null])
        binv = np.linalg.inv(basis)
        self._rmap = binv[: self.m]
        self._nmap = binv[self.m:]
        if method == "eig":
            self.W = rng_basis @ self.V
            self.Cmap = np.linalg.solve(self.V, self._rmap)
        self._check_sector()

    def _null_of_DB(self, bm):
        if self.B.is_invertible():
            nb = np.linalg.solve(bm, self.D.null_tilde.astype(complex))
        else:
            _, _, vh = np.linalg.svd(self.D.tilde @ bm)
            nb = vh[-2:].conj().T
        return nb / np.linalg.norm(nb, axis=0)

    def _check_sector(self):
        lam = self.lam
        if np.any(np.abs(lam.real) <= 1e-8 * np.abs(lam)):
            raise PreconditionError("spectrum touches the imaginary axis")
        folded = lam * np.where(lam.real > 0, 1.0, -1.0)
        self.max_angle = float(np.max(np.abs(np.angle(folded))))
        self.sector_ok = self.max_angle <= self.mu + 1e-6

    @property
    def reconstruction_error(self):
        r = self.V @ (self.lam[:, None] * np.linalg.inv(self.V)) - self.M
        return float(np.linalg.norm(r) / np.linalg.norm(self.M))

    def resolvent_constant(self, radii=None):
        """max over probes z off the sector of ||(z - T)^{-1}|| * dist(z, S_mu)."""
        theta = 0.5 * (self.mu + math.pi / 2)
        mags = np.abs(self.lam)
        if radii is None:
            radii = [mags.min(), float(np.median(mags)), mags.max()]
        best = 0.0
        for r in radii:
            for z in (r * np.exp(1j * theta), -r * np.exp(-1j * theta)):
                smin = np.linalg.svd(z * np.eye(self.m) - self.M, compute_uv=False)[-1]
                best = max(best, abs(z) * math.sin(theta - self.mu) / smin)
        return best

    # -- coefficients -----------------------------------------------------------
    def _tilde(self, v):
        return self.D.grid.s2 * v

    def _untilde(self, v):
        return v / self.D.grid.s2

    def range_coefficients(self, v):
        """Coordinates of the range part of ``v`` (eigen-coordinates for the eig method)."""
        vt = self._tilde(v)
        if self.method == "eig":
            return self.Cmap @ vt
        return self._rmap @ vt

    def split(self, v):
        """Return the range and null parts of ``v`` for the splitting H = R(T) + N(T)."""
        vt = self._tilde(v)
        r = self.range_basis_t @ (self._rmap @ vt)
        nl = self.null_t @ (self._nmap @ vt)
        return self._untilde(r), self._untilde(nl)

    def _sign_matrix(self):
        if getattr(self, "_sign", None) is None:
            self._sign = matrix_sign(self.M)
        return self._sign

    def _fmatrix(self, name, t):
        m = self.M
        eye = np.eye(self.m)
        if name == "resolvent":
            return np.linalg.inv(eye + 1j * t * m)
        if name == "P":
            return np.linalg.inv(eye + t * t * m @ m)
        if name in ("Q", "psi"):
            return t * m @ np.linalg.inv(eye + t * t * m @ m)
        s = self._sign_matrix()
        if name == "sgn":
            return s
        if name == "chi+":
            return 0.5 * (eye + s)
        if name == "chi-":
            return 0.5 * (eye - s)
        if name == "abs":
            return s @ m
        if name == "exp":
            return linalg.expm(-t * s @ m)
        raise PreconditionError(f"unknown function {name!r}")

    def evaluate(self, name, v, ts=(1.0,)):
        """Return f_t(T) v for every t in ``ts`` as an array of shape ``(len(ts), 2N)``."""
        v = check_field(v, self.n)
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        vt = self._tilde(v)
        null_part = self.null_t @ (self._nmap @ vt)
        out = np.empty((ts.size, 2 * self.n), dtype=complex)
        if self.method == "eig":
            c = self.Cmap @ vt
            fv = _fvalues(name, self.lam[None, :], ts[:, None])
            out[:] = (fv * c) @ self.W.T
        else:
            a = self._rmap @ vt
            for j, t in enumerate(ts):
                out[j] = self.range_basis_t @ (self._fmatrix(name, t) @ a)
        out += _fzero(name) * null_part
        return out / self.D.grid.s2

    def evaluate_rows(self, name, vs, ts):
        """Return f_{t_j}(T) v_j for paired rows ``vs[j]`` and scales ``ts[j]``."""
        vs = np.asarray(vs, dtype=complex)
        ts = np.asarray(ts, dtype=float)
        if vs.shape != (ts.size, 2 * self.n):
            raise PreconditionError("need one field per t value")
        vt = vs * self.D.grid.s2
        null_part = (vt @ self._nmap.T) @ self.null_t.T
        if self.method == "eig":
            c = vt @ self.Cmap.T
            out = (_fvalues(name, self.lam[None, :], ts[:, None]) * c) @ self.W.T
        else:
            a = vt @ self._rmap.T
            out = np.stack([self.range_basis_t @ (self._fmatrix(name, t) @ a[j]) for j, t in enumerate(ts)])
        out = out + _fzero(name) * null_part
        return out / self.D.grid.s2

    def apply(self, name, v, t=1.0):
        return self.evaluate(name, v, [t])[0]

    def apply_custom(self, fn, v, f0=0.0):
        """Apply an arbitrary scalar function ``fn(lam)`` through the eigen-expansion."""
        if self.method != "eig":
            raise PreconditionError("custom functions need the eigen-expansion path")
        vt = self._tilde(np.asarray(v, dtype=complex))
        out = self.W @ (fn(self.lam) * (self.Cmap @ vt)) + f0 * self.null_t @ (self._nmap @ vt)
        return out / self.D.grid.s2

    def matrix(self, name, t=1.0):
        """f_t(T) as a dense matrix in original coordinates."""
        if self.method == "eig":
            fv = _fvalues(name, self.lam, t)
            mt = self.W @ (fv[:, None] * self.Cmap)
        else:
            mt = self.range_basis_t @ self._fmatrix(name, t) @ self._rmap
        mt = mt + _fzero(name) * self.null_t @ self._nmap
        s2 = self.D.grid.s2
        return mt / s2[:, None] * s2[None, :]

    def operator_matrix(self):
        """T itself in original coordinates (D @ B or B @ D)."""
        if self.kind == "DB":
            return self.D.matrix @ self.B.matrix
        return self.B.matrix @ self.D.matrix

    def fingerprint(self):
        return {"N": self.n, "weight-id": self.D.grid.weight_id, "B-id": self.B.label,
                "kappa": self.kappa, "mu": self.mu, "cond": self.cond}


def spectral_calculus(D, B, kind="DB", method="auto"):
    return SpectralCalculus(D, B, kind, method)


def spectral_pair(D, B, method="auto"):
    """Calculi of DB and BD sharing one eigendecomposition."""
    db = SpectralCalculus(D, B, "DB", method)
    bd = SpectralCalculus(D, B, "BD", db.method, _shared=db)
    return db, bd


def apply_function(calc, name, v, t=1.0):
    return calc.apply(name, v, t)


def _periodic_distance(a, b):
    d = abs(a - b) % 1.0
    return min(d, 1.0 - d)


def arc_distance(e, f):
    (e0, e1), (f0, f1) = e, f
    if e0 < f1 and f0 < e1:
        return 0.0
    return min(_periodic_distance(e1, f0), _periodic_distance(f1, e0),
               _periodic_distance(e0, f1), _periodic_distance(f0, e1))


@dataclass
class DecayTable:
    ratios_over_t: np.ndarray
    resolvent: np.ndarray
    q: np.ndarray
    order_resolvent: float
    order_q: float


def offdiag_probe(calc, e_arc, f_arc, u=None, ratios=(2, 4, 8, 16), seed=0):
    """Measure ||1_E R_t u|| / ||u|| and ||1_E Q_t u|| / ||u|| for t = dist(E, F) / r."""
    grid = calc.D.grid
    x = grid.x
    in_e = (x >= e_arc[0]) & (x < e_arc[1])
    in_f = (x >= f_arc[0]) & (x < f_arc[1])
    if u is None:
        rng = as_generator(seed)
        u = rng.standard_normal(2 * grid.n) + 1j * rng.standard_normal(2 * grid.n)
        u = u * np.concatenate([in_f, in_f])
    dist = arc_distance(e_arc, f_arc)
    if dist <= 0:
        raise PreconditionError("arcs must be at positive distance")
    ts = dist / np.asarray(ratios, dtype=float)
    mask = np.concatenate([in_e, in_e])
    un = grid.norm(u)
    rr = np.array([grid.norm(mask * r) for r in calc.evaluate("resolvent", u, ts)]) / un
    qq = np.array([grid.norm(mask * r) for r in calc.evaluate("Q", u, ts)]) / un
    lx = np.log1p(np.asarray(ratios, dtype=float))
    order = lambda y: float(-np.polyfit(lx, np.log(np.maximum(y, 1e-300)), 1)[0])
    return DecayTable(np.asarray(ratios, float), rr, qq, order(rr), order(qq))


class ScalarLaplacian:
    """Spectral data of -Delta_w = G^{*w} G and of the unweighted -Delta = G^T G."""

    def __init__(self, grid):
        self.grid = grid
        g = gradient_matrix(grid.n)
        self.G = g
        sq = np.sqrt(grid.w)
        gs = g / sq[None, :]
        lw, vw = np.linalg.eigh((gs.T * grid.w) @ gs)
        self.lam_w = np.maximum(lw, 0.0)
        self.vec_w = vw
        self._sq = sq
        lu, vu = np.linalg.eigh(g.T @ g)
        self.lam = np.maximum(lu, 0.0)
        self.vec = vu

    def weighted_function(self, fn, f):
        """fn(-Delta_w) f; the kernel (constants) is mapped through fn at the zero eigenvalue."""
        ft = self._sq * np.asarray(f)
        c = ft @ self.vec_w
        return ((fn(self.lam_w) * c) @ self.vec_w.T) / self._sq

    def unweighted_function(self, fn, f):
        c = np.asarray(f) @ self.vec
        return (fn(self.lam) * c) @ self.vec.T

    def resolvents(self, f, ts, weighted=True):
        """(I - t^2 Delta)^{-1} f for every t, shape (len(ts), N)."""
        ts = np.asarray(ts, dtype=float)
        if weighted:
            ft = self._sq * np.asarray(f)
            c = ft @ self.vec_w
            out = (c / (1.0 + ts[:, None] ** 2 * self.lam_w)) @ self.vec_w.T
            return out / self._sq
        c = np.asarray(f) @ self.vec
        return (c / (1.0 + ts[:, None] ** 2 * self.lam)) @ self.vec.T


@dataclass
class KatoReport:
    riesz_min: float
    riesz_max: float
    lower: float
    upper: float
    probe_ratios: np.ndarray
    sqrt_residual: float


def riesz_and_kato(grid, a, d, probes=50, seed=0):
    """Riesz transform isometry and Kato square-root equivalence for B = diag(a, d).

    ``lower`` and ``upper`` are the exact extreme values of
    ||sqrt(-a div_w d G) u|| / ||G u|| over functions that are not constant.
    """
    n = grid.n
    D = DiscreteD(grid)
    B = CoefficientMatrix.block_diagonal(np.broadcast_to(a, (n,)), np.broadcast_to(d, (n,)))
    calc = SpectralCalculus(D, B, "BD")
    rng = as_generator(seed)
    lap = ScalarLaplacian(grid)
    # Riesz transform on functions orthogonal to constants
    ratios = []
    inv_sqrt = lambda lam: np.where(lam > 1e-12 * lam.max(), 1.0 / np.sqrt(np.maximum(lam, 1e-300)), 0.0)
    for _ in range(probes):
        f = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        f = f - grid.inner(f, np.ones(n)) / grid.mass()
        r = lap.G @ lap.weighted_function(inv_sqrt, f)
        ratios.append(grid.norm(r) / grid.norm(f))
    ratios = np.array(ratios)
    # square root of L = -a div_w d G from the normal block of |BD|
    absm = calc.matrix("abs")[:n, :n]
    a_arr = np.broadcast_to(np.asarray(a, dtype=complex), (n,))
    d_arr = np.broadcast_to(np.asarray(d, dtype=complex), (n,))
    L = -a_arr[:, None] * (D.divw @ (d_arr[:, None] * D.G))
    sqrt_residual = float(np.linalg.norm(absm @ absm - L) / np.linalg.norm(L))
    sw = np.sqrt(grid.h * grid.w)
    num = (sw[:, None] * absm)
    den = (sw[:, None] * D.G)
    # restrict to the complement of constants, where both forms are definite
    q, _ = np.linalg.qr(np.ones((n, 1)), mode="complete")
    basis = q[:, 1:]
    kn = (num @ basis).conj().T @ (num @ basis)
    kd = (den @ basis).conj().T @ (den @ basis)
    ev = linalg.eigh(kn, kd, eigvals_only=True)
    probe = []
    for _ in range(probes):
        u = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        probe.append(grid.norm(absm @ u) / grid.norm(D.G @ u))
    return KatoReport(float(ratios.min()), float(ratios.max()), float(np.sqrt(ev.min())),
                      float(np.sqrt(ev.max())), np.array(probe), sqrt_residual)
