"""Boundary value problems for div A grad u = 0 on the upper half-space over the torus.

Coefficients are handled through ``C = w^{-1} A``, a pointwise 2x2 field
acting on ``(d_t u, d_x u)``. The conormal gradient ``f = ((C grad u)_perp, d_x u)``
satisfies ``d_t f + D B f = 0`` with ``B = hat(C)``. Solutions decaying at
infinity are semigroup orbits in the spectral subspace of ``DB`` where the
real part of the spectrum is positive. That subspace is computed from a
sorted complex Schur form, which stays accurate even when the eigenvectors
of ``DB`` are badly conditioned.

Linear algebra runs in the tilde coordinates of :mod:`degenlab.operators`.
"""
from dataclasses import dataclass, field
import math

import numpy as np
from scipy import linalg, sparse
from scipy.sparse import linalg as splinalg

from ._validation import as_generator, check_field
from .dyadic import TGrid, UpperHalfField, make_tgrid, modified_carleson_norm, ntmax
from .errors import (CompatibilityError, GridMismatchError, NotAccretiveError, NotHermitianError,
                     PreconditionError, SingularBlockError, SolverSingularError, TraceMapSingularError)
from .operators import CoefficientMatrix, DiscreteD, SpectralCalculus, accretivity

KINDS = ("dirichlet", "regularity", "neumann")
SINGULAR_TOL = 1e-10


# -- coefficients -------------------------------------------------------------

def hat_transform(c):
    """Pointwise map [[a, b], [c, d]] -> [[1/a, -b/a], [c/a, d - c b/a]].

    Accepts an array of shape ``(..., 2, 2)`` or a :class:`CoefficientMatrix`;
    the transform is an involution.
    """
    wrap = isinstance(c, CoefficientMatrix)
    m = c.b if wrap else np.asarray(c, dtype=complex)
    a = m[..., 0, 0]
    scale = np.maximum(np.abs(m).reshape(m.shape[:-2] + (4,)).max(axis=-1), 1e-300)
    if np.any(np.abs(a) <= 1e-14 * scale):
        raise SingularBlockError("normal-normal block is singular")
    out = np.empty(m.shape, dtype=complex)
    out[..., 0, 0] = 1.0 / a
    out[..., 0, 1] = -m[..., 0, 1] / a
    out[..., 1, 0] = m[..., 1, 0] / a
    out[..., 1, 1] = m[..., 1, 1] - m[..., 1, 0] * m[..., 0, 1] / a
    if wrap:
        return CoefficientMatrix(out, f"hat({c.label})")
    return out


def pointwise_accretivity(c):
    """Smallest eigenvalue of the hermitian part over all points of a (..., 2, 2) field."""
    m = np.asarray(c)
    herm = 0.5 * (m + np.conj(np.swapaxes(m, -1, -2)))
    return float(np.linalg.eigvalsh(herm)[..., 0].min())


@dataclass
class CoefficientPair:
    """``C = w^{-1} A`` and ``B = hat(C)``; t-dependent pairs also carry ``E_s = B_0 - B_s``."""

    C: CoefficientMatrix
    B: CoefficientMatrix
    t_dependent: bool = False
    discrepancy: np.ndarray = None
    tgrid: TGrid = None

    @classmethod
    def from_c(cls, c, label=None):
        if not isinstance(c, CoefficientMatrix):
            c = CoefficientMatrix(c, label or "C")
        return cls(c, hat_transform(c))

    @classmethod
    def with_perturbation(cls, c0, dc_field, tgrid):
        """t-dependent pair with ``C_s = C_0 + dc_field[s]`` sampled on ``tgrid``."""
        pair = cls.from_c(c0)
        dc_field = np.asarray(dc_field, dtype=complex)
        if dc_field.shape != (len(tgrid), c0.n, 2, 2):
            raise GridMismatchError("perturbation must be sampled on the (t, x) mesh")
        bs = hat_transform(c0.b[None] + dc_field)
        pair.t_dependent = True
        pair.discrepancy = pair.B.b[None] - bs
        pair.tgrid = tgrid
        return pair

    def involution_error(self):
        back = hat_transform(self.B.b)
        return float(np.abs(back - self.C.b).max() / max(1.0, np.abs(self.C.b).max()))

    def accretivity(self, D):
        """(kappa of C, kappa of B) on the closure of the range of D."""
        return accretivity(self.C, D, with_angle=False)[0], accretivity(self.B, D, with_angle=False)[0]

    def adjoint(self):
        return CoefficientPair.from_c(self.C.adjoint())


def random_hermitian_c(n, seed, level=3, strength=0.4):
    from .operators import random_pieces
    return CoefficientMatrix.from_pieces(random_pieces(seed, level, strength, hermitian=True), n,
                                         f"hermitian(seed={seed})")


def random_c(n, seed, level=3, strength=0.4):
    from .operators import random_pieces
    return CoefficientMatrix.from_pieces(random_pieces(seed, level, strength), n, f"accretive(seed={seed})")


def lower_triangular_c(n, seed, level=3, coupling=0.5):
    """Block lower-triangular accretive coefficients [[a, 0], [c, d]]."""
    rng = as_generator(seed)
    k = 2**level
    pieces = np.zeros((k, 2, 2), dtype=complex)
    pieces[:, 0, 0] = rng.uniform(0.7, 1.5, k) * np.exp(1j * rng.uniform(-0.4, 0.4, k))
    pieces[:, 1, 1] = rng.uniform(0.7, 1.5, k) * np.exp(1j * rng.uniform(-0.4, 0.4, k))
    pieces[:, 1, 0] = coupling * (rng.standard_normal(k) + 1j * rng.standard_normal(k)) / math.sqrt(2)
    return CoefficientMatrix.from_pieces(pieces, n, f"lower-triangular(seed={seed})")


# -- Hardy spaces and trace maps ---------------------------------------------

class HardySpaces:
    """Spectral subspaces H+ and H- of DB and BD restricted to the closure of R(D).

    With ``M = U^* D B U`` and a sorted Schur form ``M = Z T Z^*``, the first
    ``k`` columns of ``Z`` span the invariant subspace of eigenvalues in the
    chosen half-plane, ``T11 = T[:k, :k]`` is the compressed generator, and
    the subspaces are ``U Z_k`` for DB and ``B U Z_k`` for BD.
    """

    def __init__(self, D, B):
        self.D, self.B = D, B
        self.kappa, self.mu = accretivity(B, D)
        u = D.range_basis
        self.M = u.conj().T @ D.tilde @ B.matrix @ u
        self._cache = {}

    @property
    def n(self):
        return self.D.n

    def schur(self, side="+"):
        if side not in self._cache:
            sort = "rhp" if side == "+" else "lhp"
            t, z, k = linalg.schur(self.M, output="complex", sort=sort)
            self._cache[side] = (t[:k, :k], z[:, :k])
        return self._cache[side]

    def generator(self, side="+"):
        return self.schur(side)[0]

    def basis(self, side="+", kind="DB"):
        """Orthonormal-coefficient spanning set in tilde coordinates (orthonormal for DB)."""
        _, zk = self.schur(side)
        y = self.D.range_basis @ zk
        return y if kind == "DB" else self.B.matrix @ y

    def propagator(self, t, side="+"):
        """exp(-t T11) on H+ (or exp(t T11) on H-, so that both decay for t >= 0)."""
        t11 = self.generator(side)
        return linalg.expm((-t if side == "+" else t) * t11)

    # trace maps act on coefficient vectors and return tilde boundary data
    def neumann_map(self):
        return self.basis("+")[: self.n]

    def regularity_map(self):
        return self.basis("+")[self.n:]

    def dirichlet_factor(self):
        """``B U Z_k = Y R`` with ``Y`` orthonormal."""
        y, r = np.linalg.qr(self.basis("+", "BD"))
        return y, r

    def dirichlet_map(self):
        y, _ = self.dirichlet_factor()
        s = self.D.grid.s
        return np.hstack([(s / np.linalg.norm(s))[:, None], -y[: self.n]])

    def trace_map(self, kind):
        kind = _check_kind(kind)
        if kind == "neumann":
            return self.neumann_map()
        if kind == "regularity":
            return self.regularity_map()
        return self.dirichlet_map()

    def sigma_min(self, kind):
        sv = np.linalg.svd(self.trace_map(kind), compute_uv=False)
        return float(sv[-1])

    def condition(self, kind):
        sv = np.linalg.svd(self.trace_map(kind), compute_uv=False)
        return float(sv[0] / sv[-1]) if sv[-1] > 0 else math.inf


def _check_kind(kind):
    kind = str(kind).lower()
    if kind not in KINDS:
        raise PreconditionError(f"unknown problem kind {kind!r}; choose from {KINDS}")
    return kind


# -- solutions ---------------------------------------------------------------

@dataclass
class BVPSolution:
    """Decaying solution of a t-independent problem, evaluable at any t >= 0.

    The field is ``f_t = Y exp(-t T11) a`` in tilde coordinates, ``Y`` the DB
    basis of H+. Potentials are ``u_t = c - (B Y T11^{-1} exp(-t T11) a)_perp``.
    """

    kind: str
    datum: np.ndarray
    hardy: HardySpaces
    coeffs: np.ndarray
    constant: complex
    sigma_min: float
    condition: float
    tgrid: TGrid = None
    norms: dict = field(default_factory=dict)

    @property
    def grid(self):
        return self.hardy.D.grid

    @property
    def n(self):
        return self.hardy.n

    def _states(self, ts):
        t11 = self.hardy.generator("+")
        return np.stack([linalg.expm(-t * t11) @ self.coeffs for t in np.atleast_1d(ts)])

    def _uniform_states(self, dt, count):
        step = linalg.expm(-dt * self.hardy.generator("+"))
        out = np.empty((count, self.coeffs.size), dtype=complex)
        cur = self.coeffs.copy()
        for k in range(count):
            out[k] = cur
            cur = step @ cur
        return out

    def _fields(self, states):
        hy = self.hardy
        s2 = self.grid.s2
        y = hy.basis("+")
        f = (states @ y.T) / s2
        integ = np.linalg.solve(hy.generator("+"), states.T).T
        v = (integ @ (hy.B.matrix @ y).T) / s2
        u = self.constant - v[:, : self.n]
        return f, u

    def conormal(self, ts):
        """f_t of shape (len(ts), 2N)."""
        return self._fields(self._states(ts))[0]

    def potential(self, ts):
        return self._fields(self._states(ts))[1]

    def gradient(self, ts):
        """(d_t u, d_x u) = ((B f)_perp, f_par), shape (len(ts), 2, N)."""
        f = self.conormal(ts)
        return self._gradient_from_f(f)

    def _gradient_from_f(self, f):
        n = self.n
        bf = self.hardy.B.apply(f)
        return np.stack([bf[:, :n], f[:, n:]], axis=1)

    def on_uniform_mesh(self, dt, count):
        """(u, grad u) at t = k dt for k < count; shapes (count, N) and (count, 2, N)."""
        f, u = self._fields(self._uniform_states(dt, count))
        return u, self._gradient_from_f(f)

    def boundary_trace(self):
        return self.conormal([0.0])[0]

    def field(self, tgrid=None):
        tgrid = tgrid or self.tgrid
        f = self.conormal(tgrid.t).reshape(len(tgrid), 2, self.n)
        return UpperHalfField(tgrid, f, self.grid.w, self.grid.weight_id)

    def trace_limits(self, octaves=4, points=8):
        """(1/t) int_t^{2t} ||f_s - f_0||^2 ds over the smallest octaves of the t-grid."""
        f0 = self.boundary_trace()
        xg, wg = np.polynomial.legendre.leggauss(points)
        out = []
        for j in range(octaves):
            t = self.tgrid.t_min * 2.0**j
            s = t * (1.5 + 0.5 * xg)
            diff = self.conormal(s) - f0
            out.append(float(np.sum(0.5 * wg * self.grid.norm(diff) ** 2)))
        return np.array(out)

    def compute_norms(self, c0=2.0, c1=1.0):
        tg = self.tgrid
        grad = self.gradient(tg.t)
        gfield = UpperHalfField(tg, grad, self.grid.w, self.grid.weight_id)
        u = self.potential(tg.t)
        self.norms = {
            "ntmax_grad": gfield.x_norm(c0, c1),
            "y_norm_grad": gfield.y_norm(),
            "sup_u": float(np.max(self.grid.norm(u))),
            "trace_norm": float(self.grid.norm(self.boundary_trace())),
            "trace_limits": self.trace_limits().tolist(),
        }
        return self.norms

    def to_rows(self, ts):
        f = self.conormal(ts)
        u = self.potential(ts)
        x = self.grid.x
        rows = []
        for j, t in enumerate(np.atleast_1d(ts)):
            for i in range(self.n):
                rows.append((t, x[i], u[j, i].real, u[j, i].imag, f[j, i].real, f[j, i].imag,
                             f[j, self.n + i].real, f[j, self.n + i].imag))
        return rows


def weighted_mean(grid, phi):
    return complex(grid.inner(np.asarray(phi, dtype=complex), np.ones(grid.n)) / grid.mass())


def solve_tindep(D, pair, kind, phi, tgrid=None, hardy=None, tol=SINGULAR_TOL):
    """Solve a t-independent Dirichlet, Regularity or Neumann problem.

    ``phi`` is the boundary potential for Dirichlet and Regularity and the
    conormal derivative for Neumann. The Neumann datum must have zero
    weighted mean. Dirichlet solutions tend to a constant at infinity, the
    others to zero.
    """
    kind = _check_kind(kind)
    if not isinstance(pair, CoefficientPair):
        pair = CoefficientPair.from_c(pair)
    grid = D.grid
    phi = np.asarray(phi, dtype=complex)
    if phi.shape != (grid.n,) or not np.all(np.isfinite(phi)):
        raise PreconditionError(f"datum must be a finite vector of length {grid.n}")
    hy = hardy or HardySpaces(D, pair.B)
    tmap = hy.trace_map(kind)
    u_, sv, vh = np.linalg.svd(tmap, full_matrices=False)
    smin = float(sv[-1])
    if smin <= tol * sv[0]:
        raise TraceMapSingularError(f"{kind} trace map is numerically singular (sigma_min = {smin:.3e})")
    s = grid.s
    constant = 0.0
    if kind == "neumann":
        scale = max(float(grid.norm(phi)), 1e-300)
        if abs(weighted_mean(grid, phi)) * math.sqrt(grid.mass()) > 1e-10 * scale:
            raise CompatibilityError("Neumann datum must have zero weighted mean")
        rhs = s * phi
    elif kind == "regularity":
        rhs = s * (D.G @ phi)
    else:
        rhs = s * phi
    sol = vh.conj().T @ ((u_.conj().T @ rhs) / sv)
    if kind == "dirichlet":
        _, r = hy.dirichlet_factor()
        constant = complex(sol[0] / np.linalg.norm(s))
        coeffs = np.linalg.solve(r, sol[1:])
        # the Dirichlet potential is c - v_perp with v = B U Z_k exp(-t T11) b; in the
        # DB picture this is f = D v, i.e. coefficients T11 b
        coeffs = hy.generator("+") @ coeffs
    else:
        coeffs = sol
    tgrid = tgrid or make_tgrid(grid.n)
    out = BVPSolution(kind, phi, hy, coeffs, constant, smin, float(sv[0] / smin), tgrid)
    return out


def fourier_datum(grid, modes=4, seed=None, amplitudes=None):
    """sum_{k=1}^{modes} a_k cos(2 pi k x) + b_k sin(2 pi k x) at the grid centres.

    Without a seed the coefficients are 1/k.
    """
    x = grid.x
    if amplitudes is None:
        if seed is None:
            amplitudes = [(1.0 / k, 1.0 / k) for k in range(1, modes + 1)]
        else:
            rng = as_generator(seed)
            amplitudes = rng.standard_normal((modes, 2))
    phi = np.zeros(grid.n)
    for k, (a, b) in enumerate(amplitudes, start=1):
        phi += a * np.cos(2 * np.pi * k * x) + b * np.sin(2 * np.pi * k * x)
    return phi


def neumann_compatible(grid, phi):
    return np.asarray(phi, dtype=complex) - weighted_mean(grid, phi)


# -- Rellich identity ---------------------------------------------------------

@dataclass
class RellichReport:
    perp_residual: float
    par_residual: float
    operator_residual: float
    coercivity_ratio: float
    kappa: float
    upper_ratio: float


def rellich_residual(D, pair, side="+", probes=20, seed=0, hardy=None, require_hermitian=True):
    """Residuals of (f, Bf) = 2 (f_perp, (Bf)_perp) = 2 (f_par, (Bf)_par) on H+ or H-.

    Residuals are relative to ||f|| ||Bf||; ``operator_residual`` is the
    operator norm of the pairing (N f, B g) restricted to the Hardy space,
    with N = diag(-1, 1), relative to ||B||.
    """
    if not isinstance(pair, CoefficientPair):
        pair = CoefficientPair.from_c(pair)
    if require_hermitian and not pair.C.is_hermitian(1e-10):
        raise NotHermitianError("Rellich identity needs hermitian coefficients")
    hy = hardy or HardySpaces(D, pair.B)
    n = D.n
    y = hy.basis(side)
    by = pair.B.matrix @ y
    ny = y.copy()
    ny[:n] *= -1
    op = float(np.linalg.norm(ny.conj().T @ by, 2) / pair.B.sup_norm())
    rng = as_generator(seed)
    perp, par, coer, upper = [], [], [], []
    for _ in range(probes):
        c = rng.standard_normal(y.shape[1]) + 1j * rng.standard_normal(y.shape[1])
        f = y @ c
        bf = pair.B.matrix @ f
        total = np.vdot(f, bf)
        ip = np.vdot(f[:n], bf[:n])
        il = np.vdot(f[n:], bf[n:])
        scale = np.linalg.norm(f) * np.linalg.norm(bf)
        perp.append(abs(total - 2 * ip) / scale)
        par.append(abs(total - 2 * il) / scale)
        ff = np.vdot(f, f).real
        coer.append(2 * ip.real / ff)
        upper.append(2 * ip.real / (np.linalg.norm(f[:n]) * np.linalg.norm(f)))
    return RellichReport(float(max(perp)), float(max(par)), op, float(min(coer)), hy.kappa, float(max(upper)))


# -- perturbation operators ----------------------------------------------------

def _cell_kernels(lam, tgrid):
    """Product-integration weights for piecewise-constant sources on the log cells.

    Returns ``(K_plus, K_minus, h_minus)`` with ``K_plus[j, k]`` the integral of
    exp(-(t_j - s) lam) over the part of cell k below t_j (used where
    Re lam > 0), ``K_minus[j, k]`` minus the integral of exp((s - t_j) lam) over
    the part of cell k above t_j (Re lam < 0) and ``h_minus[k]`` minus the
    integral of exp(s lam) over cell k.
    """
    t = tgrid.t[:, None, None]
    lo = tgrid.lower[None, :, None]
    up = tgrid.upper[None, :, None]
    lam = lam[None, None, :]
    j = np.arange(len(tgrid))
    below = (j[None, :] < j[:, None])[..., None]
    diag = (j[None, :] == j[:, None])[..., None]
    above = (j[None, :] > j[:, None])[..., None]
    with np.errstate(over="ignore", invalid="ignore"):
        kp_full = (np.exp(-(t - up) * lam) - np.exp(-(t - lo) * lam)) / lam
        kp_diag = (1.0 - np.exp(-(t - lo) * lam)) / lam
        km_full = -(np.exp((up - t) * lam) - np.exp((lo - t) * lam)) / lam
        km_diag = -(np.exp((up - t) * lam) - 1.0) / lam
    kp = np.where(below, kp_full, 0) + np.where(diag, kp_diag, 0)
    km = np.where(above, km_full, 0) + np.where(diag, km_diag, 0)
    neg = np.where(lam[0].real < 0, lam[0], -lam[0])
    hm = -(np.exp(tgrid.upper[:, None] * neg) - np.exp(tgrid.lower[:, None] * neg)) / neg
    hm = np.where(lam[0].real < 0, hm, 0)
    return kp, km, hm


@dataclass
class SEResult:
    S: UpperHalfField
    S_tilde: UpperHalfField
    h_minus: np.ndarray
    intertwining_defect: float
    ratio_x: float
    ratio_y: float
    ratio_h: float
    e_star: float


def _calc_pair(D, B):
    db = SpectralCalculus(D, B, "DB", method="eig")
    bd = SpectralCalculus(D, B, "BD", method="eig", _shared=db)
    return db, bd


def _se_coefficients(calc, sources, plus, kp, km):
    """Semigroup convolution in eigen-coordinates; ``sources`` has shape (..., nt, m)."""
    out = np.where(plus, np.einsum("jkm,...km->...jm", kp, sources), 0)
    out = out + np.where(plus, 0, np.einsum("jkm,...km->...jm", km, sources))
    return out


def se_operator(D, B0, discrepancy, tgrid, calcs=None):
    """Return a function applying S_E to fields of shape (..., nt, 2N) in original coordinates."""
    db, _ = calcs or _calc_pair(D, B0)
    nt = len(tgrid)
    disc = np.asarray(discrepancy, dtype=complex)
    if disc.shape[0] != nt:
        raise GridMismatchError("discrepancy and field use different t-grids")
    plus = db.lam.real > 0
    kp, km, hm = _cell_kernels(db.lam, tgrid)
    s2 = D.grid.s2
    n = D.n
    dt_ = tgrid.dt

    def apply_e(f):
        fr = f.reshape(f.shape[:-1] + (2, n))
        ef = np.einsum("tirc,...tci->...tri", disc, fr)
        return ef.reshape(f.shape)

    def source(f):
        g = apply_e(f) @ D.matrix.T
        return (g * s2) @ db.Cmap.T

    def apply(f):
        c = source(f)
        out = _se_coefficients(db, c, plus, kp, km)
        return (out @ db.W.T) / s2

    def h_minus(f):
        c = source(f)
        coef = np.where(plus, 0, np.einsum("km,...km->...m", hm, c))
        return (coef @ db.W.T) / s2

    apply.apply_e = apply_e
    apply.h_minus = h_minus
    apply.calc = db
    apply.dt = dt_
    return apply


def sE_apply(D, B0, discrepancy, f, calcs=None, c0=2.0, c1=1.0):
    """Apply S_E and its BD counterpart to a field sampled on the log t-grid.

    ``discrepancy`` has shape ``(nt, N, 2, 2)`` and holds ``E_s = B_0 - B_s``;
    ``f`` is an :class:`UpperHalfField` on the same t-grid. Sources are
    treated as constant on each log cell and the semigroup kernels are
    integrated exactly over each cell, so the weak singularity at s = t
    needs no special treatment.
    """
    tgrid = f.tgrid
    disc = np.asarray(discrepancy, dtype=complex)
    if disc.shape != (len(tgrid), D.n, 2, 2):
        raise GridMismatchError("discrepancy must be sampled on the field's t-grid")
    db, bd = calcs or _calc_pair(D, B0)
    op = se_operator(D, B0, disc, tgrid, (db, bd))
    n = D.n
    fv = f.values.reshape(len(tgrid), 2 * n)
    sf = op(fv)
    hminus = op.h_minus(fv)
    # BD version: sources E f expanded in the BD eigenbasis
    s2 = D.grid.s2
    ef = op.apply_e(fv)
    ct = (ef * s2) @ bd.Cmap.T
    plus = db.lam.real > 0
    kp, km, _ = _cell_kernels(db.lam, tgrid)
    st = (_se_coefficients(bd, ct, plus, kp, km) @ bd.W.T) / s2
    dst = st @ D.matrix.T
    scale = max(float(np.max(np.abs(sf))), 1e-300)
    defect = float(np.max(np.abs(dst - sf)) / scale) if np.any(sf) else float(np.max(np.abs(dst)))
    S = UpperHalfField(tgrid, sf.reshape(len(tgrid), 2, n), f.weights, f.weight_id)
    St = UpperHalfField(tgrid, st.reshape(len(tgrid), 2, n), f.weights, f.weight_id)
    e_star, _ = modified_carleson_norm(disc, tgrid, D.grid.w, c0, c1)
    fx = f.x_norm(c0, c1)
    fy = f.y_norm()
    hn = float(D.grid.norm(hminus))
    ratio_h = hn / (e_star * fx) if e_star > 0 and fx > 0 else 0.0
    return SEResult(S, St, hminus, defect, S.x_norm(c0, c1) / fx if fx else 0.0,
                    S.y_norm() / fy if fy else 0.0, ratio_h, e_star)


def step_discrepancy(tgrid, n, eta, t0, direction=None):
    """E(t, x) = eta * 1_{t < t0} * direction (identity by default)."""
    m = np.eye(2) if direction is None else np.asarray(direction, dtype=complex)
    mask = (tgrid.t < t0).astype(float)
    return eta * mask[:, None, None, None] * np.broadcast_to(m, (len(tgrid), n, 2, 2))


def random_field(D, calc, tgrid, seed=0, kind="semigroup"):
    """Test fields: semigroup orbits of random H+ data or random Y-type fields."""
    rng = as_generator(seed)
    n = D.n
    h = rng.standard_normal(2 * n) + 1j * rng.standard_normal(2 * n)
    if kind == "semigroup":
        h = calc.apply("chi+", h)
        vals = calc.evaluate("exp", h, tgrid.t)
    else:
        bump = np.exp(-np.log(tgrid.t / rng.uniform(0.01, 0.5)) ** 2)
        vals = bump[:, None] * calc.evaluate("exp", calc.apply("chi+", h), tgrid.t)
    return UpperHalfField(tgrid, vals.reshape(len(tgrid), 2, n), D.grid.w, D.grid.weight_id)


# -- finite-difference reference solver --------------------------------------

@dataclass
class FDSolution:
    """Vertex-mesh solution: ``u[k, i]`` at t = k dt and the cell centre x_i.

    ``grad[k, 0]`` is the forward t-difference and ``grad[k, 1]`` the forward
    x-difference, both for k < K.
    """

    t: np.ndarray
    u: np.ndarray
    grad: np.ndarray
    dt: float
    weights: np.ndarray

    @property
    def n(self):
        return self.u.shape[1]

    def restrict(self):
        """Transfer to the grid with half as many points: pairs of cells averaged, even t levels."""
        u = self.u[::2]
        u = 0.5 * (u[:, 0::2] + u[:, 1::2])
        kc = (self.grad.shape[0] + 1) // 2
        g = self.grad[: 2 * kc: 2]
        gt = 0.5 * (g[:, 0, 0::2] + g[:, 0, 1::2])
        gx = g[:, 1, 1::2]
        return u, np.stack([gt, gx], axis=1)


def _direct_solve(a, rhs):
    """Sparse LU with a symmetric-pattern ordering; real arithmetic when the matrix is real."""
    a = a.tocsc()
    if not np.any(a.data.imag):
        real = sparse.csc_matrix((np.ascontiguousarray(a.data.real), a.indices, a.indptr), shape=a.shape)
        lu = splinalg.splu(real, permc_spec="MMD_AT_PLUS_A")
        rhs = np.asarray(rhs)
        return lu.solve(np.ascontiguousarray(rhs.real)) + 1j * lu.solve(np.ascontiguousarray(rhs.imag))
    return splinalg.splu(a, permc_spec="MMD_AT_PLUS_A").solve(np.asarray(rhs, dtype=complex))


def fd_reference_solve(grid, c, kind, phi, t_max=2.0, dt=None):
    """Sparse finite-difference solve of div(w C grad u) = 0 on (0, t_max) x torus.

    The scheme minimises the lumped energy sum dt h w_i (C g, g) with forward
    differences ``g`` on each cell. The bottom carries the Dirichlet or
    Neumann datum and the top a zero conormal derivative. Neumann solutions
    are normalised to zero weighted mean on the bottom row.
    """
    kind = _check_kind(kind)
    n = grid.n
    h = grid.h
    dt = dt or h
    kt = int(round(t_max / dt))
    if kt < 2:
        raise PreconditionError("strip must contain at least two cells")
    cm = c.b if isinstance(c, CoefficientMatrix) else np.asarray(c, dtype=complex)
    if cm.shape != (n, 2, 2):
        raise PreconditionError("coefficients must match the grid")
    phi = np.asarray(phi, dtype=complex)
    if kind == "neumann":
        scale = max(float(grid.norm(phi)), 1e-300)
        if abs(weighted_mean(grid, phi)) * math.sqrt(grid.mass()) > 1e-10 * scale:
            raise CompatibilityError("Neumann datum must have zero weighted mean")
    w = grid.w
    kk, ii = np.meshgrid(np.arange(kt), np.arange(n), indexing="ij")
    nodes = np.stack([kk * n + ii, (kk + 1) * n + ii, kk * n + (ii + 1) % n], axis=-1)
    lmat = np.array([[-1.0 / dt, 1.0 / dt, 0.0], [-1.0 / h, 0.0, 1.0 / h]])
    local = np.einsum("rp,irs,sq->ipq", lmat, cm, lmat)
    local = local * (dt * h * w)[:, None, None]
    vals = np.broadcast_to(local[None], (kt, n, 3, 3))
    rows = np.broadcast_to(nodes[..., :, None], (kt, n, 3, 3))
    cols = np.broadcast_to(nodes[..., None, :], (kt, n, 3, 3))
    size = (kt + 1) * n
    a = sparse.csr_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=(size, size))
    try:
        if kind == "neumann":
            rhs = np.zeros(size + 1, dtype=complex)
            rhs[:n] = -h * w * phi
            con = np.zeros(size)
            con[:n] = h * w
            aug = sparse.bmat([[a, sparse.csr_matrix(con[:, None])], [sparse.csr_matrix(con[None, :]), None]],
                              format="csc")
            sol = _direct_solve(aug, rhs)[:size]
        else:
            inner = slice(n, size)
            rhs = -(a[inner, :n] @ phi)
            sol = np.empty(size, dtype=complex)
            sol[:n] = phi
            sol[n:] = _direct_solve(a[inner, inner].tocsc(), rhs)
    except RuntimeError as exc:
        raise SolverSingularError(str(exc)) from exc
    if not np.all(np.isfinite(sol)):
        raise SolverSingularError("reference solve produced non-finite values")
    u = sol.reshape(kt + 1, n)
    gt = (u[1:] - u[:-1]) / dt
    gx = (np.roll(u[:-1], -1, axis=1) - u[:-1]) / h
    return FDSolution(np.arange(kt + 1) * dt, u, np.stack([gt, gx], axis=1), dt, w)


def mesh_error(grad_a, grad_b, weights, dt):
    """Relative L2(dt dw) distance between two gradient fields of shape (K, 2, N)."""
    n = weights.size
    num = np.sum(np.abs(grad_a - grad_b) ** 2 * weights) * dt / n
    den = np.sum(np.abs(grad_b) ** 2 * weights) * dt / n
    return math.sqrt(num / den)


@dataclass
class OracleComparison:
    n: int
    kind: str
    error: float
    refinement_error: float
    error_coarse: float
    order_ratio: float
    top_sensitivity: float

    @property
    def within_tolerance(self):
        return self.error <= 3.0 * self.refinement_error

    @property
    def order_ok(self):
        return 1.5 <= self.order_ratio <= 3.0


def semigroup_vs_fd(wmodel, c_factory, kind, n, t_max=2.0, modes=4, sensitivity=True):
    """Compare semigroup and FD gradients at ``n`` and ``n/2`` with the FD refinement error at ``n``.

    ``c_factory(n)`` returns the coefficient field on an ``n``-point grid.
    """
    from .operators import WeightedGrid
    errors = {}
    fd_cache = {}
    for m in (n // 2, n, 2 * n):
        grid = WeightedGrid.from_model(wmodel, m)
        c = c_factory(m)
        phi = fourier_datum(grid, modes)
        if kind == "neumann":
            phi = neumann_compatible(grid, phi)
        fd_cache[m] = (grid, fd_reference_solve(grid, c, kind, phi, t_max))
        if m == 2 * n:
            break
        D = DiscreteD(grid)
        sol = solve_tindep(D, c, kind, phi)
        fd = fd_cache[m][1]
        _, gs = sol.on_uniform_mesh(fd.dt, fd.grad.shape[0])
        errors[m] = mesh_error(fd.grad, gs, grid.w, fd.dt)
    grid, fd = fd_cache[n]
    _, g_fine = fd_cache[2 * n][1].restrict()
    ref = mesh_error(fd.grad, g_fine[: fd.grad.shape[0]], grid.w, fd.dt)
    top = 0.0
    if sensitivity:
        g2, fd2 = fd_cache[n // 2]
        phi = fourier_datum(g2, modes)
        if kind == "neumann":
            phi = neumann_compatible(g2, phi)
        long = fd_reference_solve(g2, c_factory(n // 2), kind, phi, 2 * t_max)
        k = fd2.grad.shape[0]
        top = mesh_error(fd2.grad, long.grad[:k], g2.w, fd2.dt)
    return OracleComparison(n, kind, errors[n], ref, errors[n // 2], errors[n // 2] / errors[n], top)


# -- non-tangential control and weak form ---------------------------------------

def smooth_range_fields(calc, count, seed=0, modes=6):
    """Random fields built from a fixed set of low Fourier modes, then split onto R(T)."""
    rng = as_generator(seed)
    x = calc.D.grid.x
    out = []
    for _ in range(count):
        coef = rng.standard_normal((2, modes, 2)) / np.arange(1, modes + 1)[None, :, None]
        v = np.zeros((2, x.size))
        for comp in range(2):
            for k in range(modes):
                v[comp] += coef[comp, k, 0] * np.cos(2 * np.pi * (k + 1) * x)
                v[comp] += coef[comp, k, 1] * np.sin(2 * np.pi * (k + 1) * x)
        r, _ = calc.split(v.reshape(-1).astype(complex))
        out.append(r)
    return out


def ntmax_equivalence(calc, probes=20, seed=0, tgrid=None, c0=2.0, c1=1.0):
    """Ratios ||N_*(exp(-t|T|) h)|| / ||h|| for smooth random h in the closure of R(T)."""
    grid = calc.D.grid
    tgrid = tgrid or make_tgrid(grid.n)
    ratios = []
    for h in smooth_range_fields(calc, probes, seed):
        vals = calc.evaluate("exp", h, tgrid.t).reshape(len(tgrid), 2, grid.n)
        f = UpperHalfField(tgrid, vals, grid.w, grid.weight_id)
        ratios.append(f.x_norm(c0, c1) / float(grid.norm(h)))
    return np.array(ratios)


def weak_form_residual(D, B, hardy, coeffs, tests=20, seed=0, points=96, modes=4):
    """max over test fields phi = eta(t) psi(x) of |int -(f, d_t phi) + (B f, D phi) dt| / scale.

    ``f`` is the orbit of the H+ coefficients ``coeffs``; eta is a smooth bump
    compactly supported in a random subinterval of (0, 1) and psi a random
    trigonometric polynomial of degree ``modes`` in each component.
    """
    rng = as_generator(seed)
    grid = D.grid
    n = D.n
    y = hardy.basis("+")
    t11 = hardy.generator("+")
    xg, wg = np.polynomial.legendre.leggauss(points)
    worst = 0.0
    for _ in range(tests):
        a = rng.uniform(0.01, 0.5)
        b = a + rng.uniform(0.05, 0.5)
        s = 0.5 * (b - a) * (xg + 1.0) + a
        z = (2 * s - a - b) / (b - a)
        eta = np.exp(-1.0 / (1.0 - z**2))
        deta = eta * (-2 * z / (1.0 - z**2) ** 2) * 2 / (b - a)
        x = grid.x
        psi = np.zeros(2 * n, dtype=complex)
        for k in range(modes + 1):
            amp = rng.standard_normal(2) + 1j * rng.standard_normal(2)
            psi += np.concatenate([amp[0] * np.exp(2j * np.pi * k * x), amp[1] * np.exp(-2j * np.pi * k * x)])
        dpsi = D.apply(psi)
        total = 0.0
        scale = 0.0
        for sj, ej, dj, wj in zip(s, eta, deta, wg):
            f = (y @ (linalg.expm(-sj * t11) @ coeffs)) / grid.s2
            bf = B.apply(f)
            t1 = -grid.inner(f, dj * psi)
            t2 = grid.inner(bf, ej * dpsi)
            total += 0.5 * (b - a) * wj * (t1 + t2)
            scale += 0.5 * (b - a) * wj * (abs(t1) + abs(t2))
        worst = max(worst, abs(total) / max(scale, 1e-300))
    return worst


# -- interior estimates ---------------------------------------------------------

@dataclass
class InteriorReport:
    caccioppoli: np.ndarray
    reverse_holder: np.ndarray
    local_coercivity: float

    @property
    def caccioppoli_max(self):
        return float(self.caccioppoli.max()) if self.caccioppoli.size else 0.0

    @property
    def reverse_holder_max(self):
        return float(self.reverse_holder.max()) if self.reverse_holder.size else 0.0


def default_balls(t_max, count=10):
    """Deterministic interior balls (t_c, x_c, r) with r = t_c / 2."""
    tc = np.geomspace(0.05, 0.5 * t_max, count)
    xc = (np.arange(count) + 0.5) / count
    return [(float(t), float(x), float(0.5 * t)) for t, x in zip(tc, xc)]


def _ball_mask(t, x, ball, factor):
    tc, xc, r = ball
    dx = np.abs(x[None, :] - xc)
    dx = np.minimum(dx, 1.0 - dx)
    return (t[:, None] - tc) ** 2 + dx**2 < (factor * r) ** 2


def interior_checks(t, u, grad, weights, balls=None, alpha=0.5, beta=0.9, p=1.5, D=None, B=None,
                    coercivity_probes=20, seed=0):
    """Caccioppoli and reverse Hoelder ratios on interior balls, plus local coercivity of (D, B).

    ``u`` has shape (K, N) on the vertex mesh ``t``; ``grad`` has shape (K', 2, N)
    with K' <= K. Ratios are LHS / RHS, so the reported maxima are the
    measured constants.
    """
    if not 0 < alpha < beta <= 1:
        raise PreconditionError("need 0 < alpha < beta <= 1")
    k = grad.shape[0]
    t = np.asarray(t)[:k]
    u = np.asarray(u)[:k]
    n = weights.size
    x = (np.arange(n) + 0.5) / n
    gmod2 = np.sum(np.abs(grad) ** 2, axis=1)
    wv = np.broadcast_to(weights, gmod2.shape)
    balls = balls if balls is not None else default_balls(t[-1] if t.size else 1.0)
    cacc, rh = [], []
    for ball in balls:
        if ball[0] - beta * ball[2] <= 0:
            raise PreconditionError("ball must stay inside the upper half-space")
        inner = _ball_mask(t, x, ball, alpha)
        outer = _ball_mask(t, x, ball, beta)
        if not inner.any():
            continue
        lhs = np.sum(gmod2[inner] * wv[inner])
        rhs = ball[2] ** -2 * np.sum(np.abs(u[outer]) ** 2 * wv[outer])
        cacc.append(lhs / rhs if rhs > 0 else (0.0 if lhs == 0 else math.inf))
        avg2 = math.sqrt(np.sum(gmod2[inner] * wv[inner]) / np.sum(wv[inner]))
        avgp = (np.sum(gmod2[outer] ** (p / 2) * wv[outer]) / np.sum(wv[outer])) ** (1.0 / p)
        rh.append(avg2 / avgp if avgp > 0 else 0.0)
    lc = local_coercivity(D, B, coercivity_probes, seed) if D is not None else float("nan")
    return InteriorReport(np.array(cacc), np.array(rh), lc)


def local_coercivity(D, B, probes=20, seed=0, radii=(1 / 16, 1 / 8)):
    """max over random u and arcs B(x, r) of int_B |Du|^2 dw / (int_2B |BDu|^2 dw + r^-2 int_2B |u|^2 dw)."""
    rng = as_generator(seed)
    grid = D.grid
    n = D.n
    x = grid.x
    w = np.concatenate([grid.w, grid.w])
    worst = 0.0
    for _ in range(probes):
        u = rng.standard_normal(2 * n) + 1j * rng.standard_normal(2 * n)
        du = D.apply(u)
        bdu = B.apply(du)
        for r in radii:
            xc = rng.uniform()
            dist = np.abs(x - xc)
            dist = np.minimum(dist, 1.0 - dist)
            m1 = np.concatenate([dist < r] * 2)
            m2 = np.concatenate([dist < 2 * r] * 2)
            lhs = np.sum(np.abs(du[m1]) ** 2 * w[m1])
            rhs = np.sum(np.abs(bdu[m2]) ** 2 * w[m2]) + r**-2 * np.sum(np.abs(u[m2]) ** 2 * w[m2])
            worst = max(worst, lhs / rhs)
    return float(worst)


# -- perturbation sweeps ----------------------------------------------------------

@dataclass
class SweepReport:
    eps: np.ndarray
    sigma: dict
    accretive: np.ndarray
    max_jump: dict
    radius: float

    def continuous(self, factor=2.0):
        return all(j <= factor for j in self.max_jump.values())

    def to_json(self):
        return {"eps": self.eps.tolist(), "sigma": {k: v.tolist() for k, v in self.sigma.items()},
                "accretive": self.accretive.tolist(), "max_jump": self.max_jump, "radius": self.radius}


def perturbation_sweep(D, c0, dc, radii, kinds=KINDS, tol=1e-8):
    """Smallest singular values of the trace maps along C = C0 + eps * dC.

    The reported radius is the largest swept eps such that every smaller eps
    keeps C and hat(C) accretive and all trace maps above ``tol``.
    """
    radii = np.asarray(radii, dtype=float)
    sig = {k: np.full(radii.size, np.nan) for k in kinds}
    acc = np.zeros(radii.size, dtype=bool)
    radius = 0.0
    alive = True
    for j, eps in enumerate(radii):
        c = CoefficientMatrix(c0.b + eps * dc.b, f"{c0.label}+{eps:g}dC")
        try:
            if pointwise_accretivity(c.b) <= 0:
                raise NotAccretiveError("C lost pointwise accretivity")
            pair = CoefficientPair.from_c(c)
            hy = HardySpaces(D, pair.B)
            acc[j] = True
            for k in kinds:
                sig[k][j] = hy.sigma_min(k)
        except (NotAccretiveError, SingularBlockError):
            acc[j] = False
        ok = acc[j] and all(sig[k][j] > tol for k in kinds)
        if alive and ok:
            radius = float(eps)
        else:
            alive = False
    jumps = {}
    for k in kinds:
        s = sig[k][acc]
        if s.size > 1:
            r = s[1:] / s[:-1]
            jumps[k] = float(np.max(np.maximum(r, 1.0 / r)))
        else:
            jumps[k] = 1.0
    return SweepReport(radii, sig, acc, jumps, radius)


def duality_flags(D, samples=20, seed=0, tol=1e-8):
    """Invertibility of the Dirichlet map for C and of the Regularity map for C*."""
    out = []
    for j in range(samples):
        c = random_c(D.n, (seed, j))
        hy = HardySpaces(D, hat_transform(c))
        hs = HardySpaces(D, hat_transform(c.adjoint()))
        out.append((hy.sigma_min("dirichlet") > tol, hs.sigma_min("regularity") > tol,
                    hy.sigma_min("dirichlet"), hs.sigma_min("regularity")))
    return out


@dataclass
class TDepSweep:
    eta: np.ndarray
    sigma: np.ndarray
    e_star: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray


def tdep_sweep(D, c0, dc, etas, t0=0.25, kind="neumann", maxiter=80, tol=1e-10):
    """Trace-map smallest singular values for A = A0 + eta 1_{t<t0} dA.

    Solutions solve f = exp(-t DB0) h+ + S_E f by fixed-point iteration on the
    log t-grid; the trace is f_0 = h+ + h-(f).
    """
    kind = _check_kind(kind)
    if kind == "dirichlet":
        raise PreconditionError("t-dependent sweeps cover the Neumann and Regularity maps")
    tgrid = make_tgrid(D.n)
    pair0 = CoefficientPair.from_c(c0)
    calcs = _calc_pair(D, pair0.B)
    db = calcs[0]
    hy = HardySpaces(D, pair0.B)
    y = hy.basis("+")
    t11 = hy.generator("+")
    s2 = D.grid.s2
    n = D.n
    k = y.shape[1]
    f0 = np.stack([(y @ linalg.expm(-t * t11)).T / s2 for t in tgrid.t], axis=1)  # (k, nt, 2N)
    h0 = y.T / s2
    sig, es, its, conv = [], [], [], []
    for eta in etas:
        dfield = eta * (tgrid.t < t0)[:, None, None, None] * dc.b[None]
        pair = CoefficientPair.with_perturbation(c0, dfield, tgrid)
        op = se_operator(D, pair0.B, pair.discrepancy, tgrid, calcs)
        f = f0.copy()
        ok = False
        it = 0
        for it in range(1, maxiter + 1):
            nxt = f0 + op(f)
            delta = np.max(np.abs(nxt - f)) / np.max(np.abs(nxt))
            f = nxt
            if not np.isfinite(delta) or (it > 10 and delta > 0.5):
                break
            if delta < tol:
                ok = True
                break
        trace = h0 + op.h_minus(f)
        rows = slice(0, n) if kind == "neumann" else slice(n, 2 * n)
        tm = (trace * s2)[:, rows].T
        sig.append(float(np.linalg.svd(tm, compute_uv=False)[-1]) if ok else float("nan"))
        es.append(modified_carleson_norm(pair.discrepancy, tgrid, D.grid.w)[0])
        its.append(it)
        conv.append(ok)
    return TDepSweep(np.asarray(etas, float), np.array(sig), np.array(es), np.array(its), np.array(conv))
