"""Square-function estimates for Q_t = t DB (I + t^2 DBDB)^{-1} and the principal-part machinery.

The extreme values of the discrete square function on the range of T are
computed exactly: with ``T = Z R Z^*`` in Schur form, the quadratic form
``sum_j dlog ||Q_{t_j} v||^2`` has the matrix ``sum_j dlog Q_j^* G Q_j`` in the
range coordinates, where ``G`` is the Gram matrix of the range basis.
Triangular inverses keep this stable when the eigenbasis is ill-conditioned.
"""
from dataclasses import asdict, dataclass, field
import math

import numpy as np
from scipy import linalg
from scipy.linalg import blas, lapack

from ._validation import as_generator, check_field
from .corona import corona_decompose
from .dyadic import DyadicCube, block_average, carleson_norm_dyadic, et_apply, make_tgrid
from .errors import PreconditionError
from .operators import ScalarLaplacian


def _tgrid(calc, tgrid):
    return make_tgrid(calc.n) if tgrid is None else tgrid


def quadratic_functional(calc, v, tgrid=None):
    """Midpoint quadrature in ln t of ||Q_t v||^2 over the t-grid."""
    tgrid = _tgrid(calc, tgrid)
    v = check_field(v, calc.n)
    q = calc.evaluate("Q", v, tgrid.t)
    return float(tgrid.dlog * np.sum(calc.D.grid.norm(q) ** 2))


def _triangular_inverse(r):
    inv, info = lapack.ztrtri(np.asfortranarray(r), lower=0)
    if info != 0:
        raise PreconditionError("resolvent is singular")
    return inv


def quadratic_gram(calc, tgrid=None):
    """Return ``(K, G)``: the square-function form and the Gram matrix in range coordinates."""
    tgrid = _tgrid(calc, tgrid)
    m = calc.m
    tri, z = linalg.schur(calc.M, output="complex")
    eye = np.eye(m)
    if calc.kind == "DB":
        gram_z = None
    else:
        basis = calc.range_basis_t @ z
        gram_z = basis.conj().T @ basis
    acc = np.zeros((m, m), dtype=complex, order="F")
    for t in tgrid.t:
        q = (_triangular_inverse(eye - 1j * t * tri) - _triangular_inverse(eye + 1j * t * tri)) / 2j
        if gram_z is None:
            acc = blas.zherk(tgrid.dlog, q, beta=1.0, c=acc, trans=2, lower=0)
        else:
            acc += tgrid.dlog * (q.conj().T @ (gram_z @ q))
    k = np.triu(acc) + np.triu(acc, 1).conj().T if gram_z is None else 0.5 * (acc + acc.conj().T)
    k = z @ k @ z.conj().T
    g = eye if calc.kind == "DB" else calc.range_basis_t.conj().T @ calc.range_basis_t
    return 0.5 * (k + k.conj().T), g


@dataclass
class QuadraticReport:
    sup: float
    inf: float
    probe_sup: float
    probe_inf: float
    samples: list
    probes: int
    N: int
    tmin: float
    tmax: float
    q: int
    weight: str
    B: str
    seed: int
    kind: str = "DB"

    def to_json(self):
        d = asdict(self)
        d.pop("samples")
        return d


def random_range_fields(calc, count, seed):
    """White noise projected onto the closure of R(D), one field per row."""
    rng = as_generator(seed)
    n = calc.n
    v = rng.standard_normal((count, 2 * n)) + 1j * rng.standard_normal((count, 2 * n))
    return np.stack([calc.D.project_range(x) for x in v])


def quadratic_ratio_sup(calc, probes=64, seed=0, tgrid=None):
    """Exact sup and inf of the square-function ratio on the range of T plus random probe ratios."""
    if probes < 32:
        raise PreconditionError("use at least 32 probes")
    tgrid = _tgrid(calc, tgrid)
    k, g = quadratic_gram(calc, tgrid)
    ev = linalg.eigh(k, g, eigvals_only=True)
    vs = random_range_fields(calc, probes, seed)
    if calc.kind == "DB":
        a = (vs * calc.D.grid.s2) @ calc.D.range_basis.conj()
    else:
        a = (vs * calc.D.grid.s2) @ calc._rmap.T
    num = np.real(np.einsum("pi,ij,pj->p", a.conj(), k, a))
    den = np.real(np.einsum("pi,ij,pj->p", a.conj(), g, a))
    ratios = num / den
    return QuadraticReport(float(ev[-1]), float(ev[0]), float(ratios.max()), float(ratios.min()),
                           ratios.tolist(), probes, calc.n, tgrid.t_min, tgrid.t_max, tgrid.q,
                           calc.D.grid.weight_id, calc.B.label, int(seed) if seed is not None else 0,
                           calc.kind)


def resolvent_gradient_functional(grid, f, tgrid=None):
    """int ||t G (I - t^2 Delta_w)^{-1} f||^2 dt/t; equals ||f||^2 / 2 for f orthogonal to constants."""
    tgrid = make_tgrid(grid.n) if tgrid is None else tgrid
    lap = ScalarLaplacian(grid)
    u = lap.resolvents(f, tgrid.t)
    g = (u @ lap.G.T) * tgrid.t[:, None]
    return float(tgrid.dlog * np.sum(grid.norm(g) ** 2))


def calderon_pairing(grid, f, tgrid=None):
    """int <t (-Delta_w)^{1/2} (I - t^2 Delta_w)^{-1} f, f> dt/t; equals (pi/2) ||f||^2 off constants."""
    if tgrid is None:
        tgrid = make_tgrid(t_min=1.0 / (1024 * grid.n), t_max=256.0)
    lap = ScalarLaplacian(grid)
    ft = lap._sq * np.asarray(f)
    c = ft @ lap.vec_w
    root = np.sqrt(lap.lam_w)
    weights = (tgrid.t[:, None] * root) / (1.0 + tgrid.t[:, None] ** 2 * lap.lam_w)
    total = np.sum(weights * np.abs(c) ** 2) * tgrid.dlog
    return float(total * grid.h)


@dataclass
class PrincipalPart:
    gamma: np.ndarray
    tgrid: object
    weights: np.ndarray
    carleson: float
    carleson_cube: DyadicCube
    cube_bound: float
    et_bound: float = float("nan")

    def apply(self, v):
        """gamma_t E_t v for every t, shape (nt, 2N)."""
        n = self.gamma.shape[1]
        out = np.empty((len(self.tgrid), 2 * n), dtype=complex)
        for j, t in enumerate(self.tgrid.t):
            z = et_apply(np.asarray(v).reshape(2, n), t, self.weights)
            out[j] = np.einsum("irc,ci->ri", self.gamma[j], z).reshape(2 * n)
        return out

    def apply_rows(self, vs):
        n = self.gamma.shape[1]
        out = np.empty((len(self.tgrid), 2 * n), dtype=complex)
        for j, t in enumerate(self.tgrid.t):
            z = et_apply(np.asarray(vs[j]).reshape(2, n), t, self.weights)
            out[j] = np.einsum("irc,ci->ri", self.gamma[j], z).reshape(2 * n)
        return out


def gamma_norms(gamma):
    """Pointwise operator norms |gamma_t(x)|, shape (nt, N)."""
    return np.linalg.norm(gamma, ord=2, axis=(-2, -1))


def principal_part(calc, tgrid=None, probes=16, seed=0):
    """gamma_t(x) from Q_t applied to the constant vectors, with its Carleson and cube bounds."""
    tgrid = _tgrid(calc, tgrid)
    n = calc.n
    w = calc.D.grid.w
    gamma = np.empty((len(tgrid), n, 2, 2), dtype=complex)
    for col in range(2):
        e = np.zeros((2, n))
        e[col] = 1.0
        q = calc.evaluate("Q", e, tgrid.t).reshape(len(tgrid), 2, n)
        gamma[:, :, :, col] = np.transpose(q, (0, 2, 1))
    g2 = gamma_norms(gamma) ** 2
    carl, cube = carleson_norm_dyadic(g2, tgrid, w)
    big_l = int(round(math.log2(n)))
    cube_bound = 0.0
    for j, lvl in enumerate(tgrid.levels):
        cube_bound = max(cube_bound, float(block_average(g2[j], min(lvl, big_l), w).max()))
    pp = PrincipalPart(gamma, tgrid, w, carl, cube, cube_bound)
    rng = as_generator(seed)
    ratios = []
    for _ in range(probes):
        u = rng.standard_normal((2, n)) + 1j * rng.standard_normal((2, n))
        ge = pp.apply(u)
        for j, t in enumerate(tgrid.t):
            eu = et_apply(u, t, w).reshape(2 * n)
            ratios.append(calc.D.grid.norm(ge[j]) / calc.D.grid.norm(eu))
    pp.et_bound = float(max(ratios)) if ratios else float("nan")
    return pp


def annihilation_residual(calc, pp):
    """max over t and constant vectors c of ||Q_t c - gamma_t E_t c|| / |c|."""
    n = calc.n
    worst = 0.0
    for c in (np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.array([1.0, 1j]) / math.sqrt(2)):
        v = np.repeat(c[:, None], n, axis=1).reshape(2 * n)
        q = calc.evaluate("Q", v, pp.tgrid.t)
        r = q - pp.apply(v)
        scale = max(1.0, float(np.max(calc.D.grid.norm(q))))
        worst = max(worst, float(np.max(calc.D.grid.norm(r))) / scale)
    return worst


@dataclass
class PPASplit:
    total: float
    resolvent_tail: float
    principal: float
    averaging: float

    @property
    def parts_sum(self):
        return self.resolvent_tail + self.principal + self.averaging


def _p_t(lap, v, ts):
    n = lap.grid.n
    v = np.asarray(v).reshape(2, n)
    out = np.empty((ts.size, 2, n), dtype=complex)
    out[:, 0] = lap.resolvents(v[0], ts, weighted=True)
    out[:, 1] = lap.resolvents(v[1], ts, weighted=False)
    return out.reshape(ts.size, 2 * n)


def ppa_error(calc, v, tgrid=None, pp=None, verbose=False):
    """Quadrature of ||Q_t v - gamma_t E_t v||^2 dt/t; with ``verbose`` the three-term split too."""
    tgrid = _tgrid(calc, tgrid)
    if pp is None:
        pp = principal_part(calc, tgrid, probes=0)
    v = check_field(v, calc.n)
    grid = calc.D.grid
    q = calc.evaluate("Q", v, tgrid.t)
    diff = q - pp.apply(v)
    total = float(tgrid.dlog * np.sum(grid.norm(diff) ** 2))
    if not verbose:
        return total
    lap = ScalarLaplacian(grid)
    pv = _p_t(lap, v, tgrid.t)
    rows_v = np.broadcast_to(v, pv.shape)
    a = calc.evaluate_rows("Q", rows_v - pv, tgrid.t)
    b = calc.evaluate_rows("Q", pv, tgrid.t) - pp.apply_rows(pv)
    c = pp.apply_rows(pv - rows_v)
    integ = lambda x: float(tgrid.dlog * np.sum(grid.norm(x) ** 2))
    return PPASplit(total, integ(a), integ(b), integ(c))


# -- proof replay -------------------------------------------------------------

def _upper_envelope_fit(x, y, bins=12):
    """Slope and intercept of a line fitted to binwise maxima of y, then lifted over every point."""
    x, y = np.asarray(x), np.asarray(y)
    edges = np.linspace(x.min(), x.max(), bins + 1)
    xs, ys = [], []
    for i in range(bins):
        sel = (x >= edges[i]) & (x <= edges[i + 1])
        if np.any(sel):
            k = np.argmax(np.where(sel, y, -np.inf))
            xs.append(x[k])
            ys.append(y[k])
    if len(xs) < 2:
        return 0.0, float(np.max(y))
    slope, _ = np.polyfit(xs, ys, 1)
    return float(slope), float(np.max(y - slope * x))


def _smooth_random(rng, n, modes):
    k = np.arange(1, modes + 1)
    c = (rng.standard_normal(modes) + 1j * rng.standard_normal(modes)) / k
    x = (np.arange(n) + 0.5) / n
    return np.exp(2j * np.pi * np.outer(x, k)) @ c


def mean_value_exponents(grid, samples=40, seed=0, min_cells=4):
    """Fit tau_1 and tau_2 from upper envelopes of the mean-value inequalities.

    For each random field and cube, x = ln(B / (l A)) and y = ln(|mean| / A)
    where A and B are the L2(dw) averages of the derivative and of the field;
    the inequality reads y <= ln C + tau x on x < 0.
    """
    from .operators import gradient_matrix

    n, w = grid.n, grid.w
    g_mat = gradient_matrix(n)
    rng = as_generator(seed)
    big_l = int(round(math.log2(n)))
    pts1, pts2 = ([], []), ([], [])
    for s in range(samples):
        modes = int(2 ** rng.uniform(0, big_l - 1))
        f = _smooth_random(rng, n, max(modes, 1)) + 0.1 * (rng.standard_normal(n) if s % 4 == 0 else 0)
        divf = -(g_mat.T @ (w * f)) / w
        gg = g_mat @ f
        for lvl in range(1, big_l - int(math.log2(min_cells)) + 1):
            per = n >> lvl
            ell = 1.0 / 2**lvl
            wv = w.reshape(-1, per)
            avg_w = lambda a: (a.reshape(-1, per) * wv).sum(axis=1) / wv.sum(axis=1)
            for (lhs, a_, b_), pts in (
                    ((np.abs(avg_w(divf)), np.sqrt(avg_w(np.abs(divf) ** 2)), np.sqrt(avg_w(np.abs(f) ** 2))), pts1),
                    ((np.abs(gg.reshape(-1, per).mean(axis=1)), np.sqrt(avg_w(np.abs(gg) ** 2)),
                      np.sqrt(avg_w(np.abs(f) ** 2))), pts2)):
                ok = (lhs > 1e-14 * a_) & (a_ > 0) & (b_ > 0)
                xv = np.log(b_[ok] / (ell * a_[ok]))
                yv = np.log(lhs[ok] / a_[ok])
                keep = xv < 0
                pts[0].extend(xv[keep])
                pts[1].extend(yv[keep])
    out = []
    for xs, ys in (pts1, pts2):
        if len(xs) < 4:
            out.append((float("nan"), float("nan")))
        else:
            out.append(_upper_envelope_fit(xs, ys))
    (t1, c1), (t2, c2) = out
    return {"tau1": t1, "logC1": c1, "tau2": t2, "logC2": c2, "points1": len(pts1[0]), "points2": len(pts2[0])}


def poincare_ratios(grid, psi, min_cells=2):
    """max over cubes of (avg_Q |psi - psi_Q|^2 dw)^{1/2} / (l(Q) (avg_Q |G psi|^2 dw)^{1/2})."""
    from .operators import gradient_matrix

    n, w = grid.n, grid.w
    gpsi = gradient_matrix(n) @ psi
    big_l = int(round(math.log2(n)))
    worst = 0.0
    for lvl in range(0, big_l - int(math.log2(min_cells)) + 1):
        per = n >> lvl
        wv = w.reshape(-1, per)
        p = np.asarray(psi).reshape(-1, per)
        mean = (p * wv).sum(axis=1, keepdims=True) / wv.sum(axis=1, keepdims=True)
        lhs = np.sqrt((np.abs(p - mean) ** 2 * wv).sum(axis=1) / wv.sum(axis=1))
        # the gradient lives on cell edges: use the edges interior to the cube
        gq = np.abs(gpsi.reshape(-1, per)[:, :-1]) ** 2
        rhs = 2.0**-lvl * np.sqrt((gq * wv[:, :-1]).sum(axis=1) / wv.sum(axis=1))
        ok = rhs > 0
        if np.any(ok):
            worst = max(worst, float(np.max(lhs[ok] / rhs[ok])))
        if np.any(~ok & (lhs > 1e-13)):
            return float("inf")
    return worst


def _farthest_points(vectors, count, seed=0):
    rng = as_generator(seed)
    chosen = [int(rng.integers(len(vectors)))]
    d = np.linalg.norm(vectors - vectors[chosen[0]], axis=1)
    while len(chosen) < min(count, len(vectors)):
        k = int(np.argmax(d))
        chosen.append(k)
        d = np.minimum(d, np.linalg.norm(vectors - vectors[k], axis=1))
    return vectors[chosen]


@dataclass
class ReplayReport:
    tau1: float
    tau2: float
    poincare: float
    K: float
    direct: float
    packing: float
    bound: float
    partition_defect: float
    coverage: float
    net_size: tuple
    sigma_w: float
    sigma_1: float
    sigma_2: float
    details: dict = field(default_factory=dict)

    def to_json(self):
        return asdict(self)


def proof_replay(calc, wmodel, params, root=None, tgrid=None, tau_steps=8, directions=16, c0=None,
                 seed=0, samples=40):
    """Replay the mean-value fits, a Poincare check and the sawtooth Carleson aggregation."""
    grid = calc.D.grid
    n, w = grid.n, grid.w
    big_l = int(round(math.log2(n)))
    root = DyadicCube(0, 0) if root is None else root
    tgrid = _tgrid(calc, tgrid)
    mv = mean_value_exponents(grid, samples=samples, seed=seed)
    rng = as_generator(seed)
    poinc = max(poincare_ratios(grid, np.real(_smooth_random(rng, n, m))) for m in (1, 2, 4, 8, 16))
    pp = principal_part(calc, tgrid, probes=0)
    gam = pp.gamma
    norms = gamma_norms(gam)
    unit = np.where(norms[..., None, None] > 0, gam / np.maximum(norms, 1e-300)[..., None, None], 0)
    # Whitney cube of each (t, x) cell and its weight-oscillation offset ln(w_Q) - (ln w)_Q
    levels = np.minimum(tgrid.levels, big_l)
    if wmodel.depth < big_l:
        raise PreconditionError("weight cache shallower than the grid")
    offs = np.empty((len(tgrid), n))
    for j, lvl in enumerate(levels):
        mass, _, lm = wmodel.level(int(lvl))
        per = n >> int(lvl)
        offs[j] = np.repeat(np.log(np.asarray(mass) * 2.0**lvl) - np.asarray(lm), per)
    if c0 is None:
        c0 = float(offs.max())
    taus = np.linspace(0.0, c0, tau_steps)
    flat = unit.reshape(-1, 4)
    nz = norms.reshape(-1) > 0
    sample = flat[nz][:: max(1, int(nz.sum() // 4096))]
    feats = np.concatenate([sample.real, sample.imag], axis=1)
    nus = _farthest_points(feats, directions, seed)
    nus = (nus[:, :4] + 1j * nus[:, 4:]).reshape(-1, 2, 2)
    nus = nus / np.linalg.norm(nus, ord=2, axis=(1, 2))[:, None, None]
    dens = norms**2 * w[None, :] / n * tgrid.dlog
    # box sums per (level, cube) for every net element
    cube_ids = []
    for j, lvl in enumerate(levels):
        cube_ids.append((int(lvl), np.arange(n) >> (big_l - int(lvl))))
    sub_levels = range(root.level, big_l + 1)
    offsets = {lvl: sum(2**k for k in range(lvl)) for lvl in sub_levels}
    total_boxes = sum(2**k for k in range(big_l + 1))
    captured = np.zeros(norms.shape, dtype=bool)
    box_sums = []
    for tau in taus:
        near_tau = np.abs(offs - tau) < params.sigma_2
        for nu in nus:
            close = np.linalg.norm(unit - nu, ord=2, axis=(-2, -1)) <= params.sigma_1
            mask = (norms > 0) & close & near_tau
            captured |= mask
            sums = np.zeros(total_boxes)
            for j, (lvl, idx) in enumerate(cube_ids):
                np.add.at(sums, offsets[lvl] + idx, np.where(mask[j], dens[j], 0.0))
            box_sums.append(sums)
    box_sums = np.array(box_sums)
    # ownership: boxes of Omega^w(Q) for every cube Q inside the root
    ks, ratios = [], {}
    mass_all = {lvl: np.asarray(wmodel.level(lvl)[0]) for lvl in sub_levels}
    best_k = np.zeros(len(box_sums))
    root_dec = None
    root_saw = None
    for lvl in sub_levels:
        for idx in range(root.index << (lvl - root.level), (root.index + 1) << (lvl - root.level)):
            q = DyadicCube(lvl, idx)
            dec = corona_decompose(wmodel, q, params.sigma_w, big_l)
            own = []
            for r in range(len(dec.stop)):
                mine = np.flatnonzero(dec.owner_level[r] == 0)
                own.append(offsets[lvl + r] + (idx << r) + mine)
            own = np.concatenate(own)
            val = box_sums[:, own].sum(axis=1) / mass_all[lvl][idx]
            best_k = np.maximum(best_k, val)
            if q == root:
                root_dec = dec
                root_saw = box_sums[:, own].sum(axis=1)
    k_const = float(best_k.max())
    # full box of the root and the partition into sawtooth regions of the stopping family
    full_ids = np.concatenate([offsets[lvl] + np.arange(root.index << (lvl - root.level),
                                                        (root.index + 1) << (lvl - root.level))
                               for lvl in sub_levels])
    full = box_sums[:, full_ids].sum(axis=1)
    parts = root_saw.copy()
    for c in root_dec.stopping_cubes():
        dec = corona_decompose(wmodel, c, params.sigma_w, big_l)
        own = np.concatenate([offsets[c.level + r] + (c.index << r) + np.flatnonzero(dec.owner_level[r] == 0)
                              for r in range(len(dec.stop))])
        parts += box_sums[:, own].sum(axis=1)
    wq0 = float(mass_all[root.level][root.index])
    direct = float(full.max()) / wq0
    packing = root_dec.packing_ratio
    defect = float(np.max(np.abs(parts - full)) / max(float(full.max()), 1e-300))
    total = norms > 0
    coverage = float(captured[total].sum() / max(int(total.sum()), 1))
    return ReplayReport(mv["tau1"], mv["tau2"], poinc, k_const, direct, packing, k_const * (1 + packing),
                        defect, coverage, (len(taus), len(nus)), params.sigma_w, params.sigma_1,
                        params.sigma_2, {"mean_value": mv, "c0": c0})
