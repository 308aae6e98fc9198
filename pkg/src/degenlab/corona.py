"""Stopping-time constructions on dyadic arcs.

Two families live here: the corona decomposition of a weight (stop when the
log-mean drifts by more than ``sigma_w`` from the current top cube) and the
"bad cube" families attached to test functions, which stop when dyadic
averages of the test function become too large or lose their alignment with
the target vector ``xi``.
"""
from dataclasses import asdict, dataclass, field
import math

import numpy as np

from ._validation import as_generator, check_positive
from .dyadic import DyadicCube
from .errors import PreconditionError


@dataclass
class CoronaDecomposition:
    """Result of :func:`corona_decompose`.

    ``stop[r]`` flags the stopping cubes at relative level ``r`` below the
    root, ``gen[r]`` their generation (0 when not stopping) and ``owner[r]``
    the relative index of the nearest stopping-or-root ancestor-or-self at
    the level stored in ``owner_level[r]``.
    """

    root: DyadicCube
    sigma_w: float
    max_depth: int
    stop: list
    gen: list
    owner_level: list
    owner_index: list
    masses: list
    packing_ratio: float

    @property
    def generations(self):
        out = []
        for r, (s, g) in enumerate(zip(self.stop, self.gen)):
            for k in np.flatnonzero(s):
                j = int(g[k])
                while len(out) < j:
                    out.append([])
                out[j - 1].append(self._absolute(r, k))
        return out

    def _absolute(self, r, k):
        return DyadicCube(self.root.level + r, (self.root.index << r) + int(k))

    def stopping_cubes(self):
        return [c for g in self.generations for c in g]

    def first_generation(self):
        gens = self.generations
        return gens[0] if gens else []

    def is_stopping(self, cube):
        r = cube.level - self.root.level
        if r < 0 or r >= len(self.stop) or not self.root.contains(cube):
            return False
        return bool(self.stop[r][cube.index - (self.root.index << r)])

    def owner(self, cube):
        """Nearest stopping-or-root ancestor-or-self: the sawtooth region containing W_cube."""
        r = cube.level - self.root.level
        k = cube.index - (self.root.index << r)
        return self._absolute(int(self.owner_level[r][k]), int(self.owner_index[r][k]))

    def children_map(self):
        """Map every stopping-or-root cube to its list of stopping children."""
        out = {self.root: []}
        for r in range(1, len(self.stop)):
            for k in np.flatnonzero(self.stop[r]):
                c = self._absolute(r, k)
                out.setdefault(c, [])
                out.setdefault(self.owner(c.parent()), []).append(c)
        return out

    def children_of(self, cube):
        """Stopping cubes whose stopping parent is ``cube`` (the family B^w(cube))."""
        out = []
        for r in range(cube.level - self.root.level + 1, len(self.stop)):
            for k in np.flatnonzero(self.stop[r]):
                c = self._absolute(r, k)
                if cube.contains(c):
                    par = c.parent()
                    if self.owner(par) == cube:
                        out.append(c)
        return out

    def to_tree(self):
        """Nested JSON-ready tree {cube: [d, k], generation: j, children: [...]}."""
        nodes = {self.root: {"cube": [self.root.level, self.root.index], "generation": 0, "children": []}}
        for r in range(1, len(self.stop)):
            for k in np.flatnonzero(self.stop[r]):
                c = self._absolute(r, k)
                nodes[c] = {"cube": [c.level, c.index], "generation": int(self.gen[r][k]), "children": []}
                nodes[self.owner(c.parent())]["children"].append(nodes[c])
        return nodes[self.root]


def corona_decompose(w, Q, sigma_w, max_depth):
    """Breadth-first corona decomposition of ``w`` below ``Q`` down to absolute level ``max_depth``."""
    check_positive(sigma_w, "sigma_w")
    if max_depth < Q.level:
        raise PreconditionError("max_depth must not be above the root level")
    if max_depth > w.depth:
        raise PreconditionError(f"max_depth {max_depth} exceeds the weight cache depth {w.depth}")
    depth = max_depth - Q.level
    stop, gen, own_l, own_i, masses = [], [], [], [], []
    total = 0.0
    for r in range(depth + 1):
        lvl = Q.level + r
        sl = slice(Q.index << r, (Q.index + 1) << r)
        mass, _, lm = w.level(lvl)
        lm, mass = np.asarray(lm[sl]), np.asarray(mass[sl])
        masses.append(mass)
        if r == 0:
            s = np.zeros(1, dtype=bool)
            g = np.zeros(1, dtype=int)
            own_ref, own_gen = lm.copy(), np.zeros(1, dtype=int)
            ol, oi = np.zeros(1, dtype=int), np.zeros(1, dtype=int)
        else:
            par = np.arange(lm.size) // 2
            ref, gen_ref = prev_ref[par], prev_gen[par]
            s = np.abs(lm - ref) > sigma_w
            g = np.where(s, gen_ref + 1, 0)
            own_ref = np.where(s, lm, ref)
            own_gen = np.where(s, g, gen_ref)
            ol = np.where(s, r, prev_ol[par])
            oi = np.where(s, np.arange(lm.size), prev_oi[par])
            total += float(mass[s].sum())
        stop.append(s)
        gen.append(g)
        own_l.append(ol)
        own_i.append(oi)
        prev_ref, prev_gen, prev_ol, prev_oi = own_ref, own_gen, ol, oi
    ratio = total / float(masses[0][0])
    return CoronaDecomposition(Q, float(sigma_w), int(max_depth), stop, gen, own_l, own_i, masses, ratio)


def check_first_statement(w, dec):
    """Largest |(ln w)_S - (ln w)_root| over cubes not inside a first-generation stopping cube."""
    worst = 0.0
    inside = np.zeros(1, dtype=bool)
    root_lm = float(w.level(dec.root.level)[2][dec.root.index])
    for r in range(len(dec.stop)):
        if r > 0:
            inside = inside[np.arange(inside.size * 2) // 2]
            first = dec.stop[r] & (dec.gen[r] == 1)
            inside = inside | first
        lvl = dec.root.level + r
        lm = np.asarray(w.level(lvl)[2][dec.root.index << r:(dec.root.index + 1) << r])
        free = ~inside
        if np.any(free):
            worst = max(worst, float(np.max(np.abs(lm[free] - root_lm))))
    return worst


def _relative_log_means(w, dec):
    return [np.asarray(w.level(dec.root.level + r)[2][dec.root.index << r:(dec.root.index + 1) << r])
            for r in range(len(dec.stop))]


def check_maximality(w, dec):
    """True when every stopping cube exceeds the threshold and its parent does not."""
    lms = _relative_log_means(w, dec)
    for r in range(1, len(dec.stop)):
        for k in np.flatnonzero(dec.stop[r]):
            c = dec._absolute(r, k)
            top = dec.owner(c.parent())
            rt = top.level - dec.root.level
            top_lm = lms[rt][top.index - (dec.root.index << rt)]
            if abs(lms[r][k] - top_lm) <= dec.sigma_w:
                return False
            if r - 1 > rt and abs(lms[r - 1][k // 2] - top_lm) > dec.sigma_w:
                return False
    return True


def generation_disjoint(dec):
    """Cubes within one generation are pairwise disjoint."""
    top = max((int(g.max()) for g in dec.gen), default=0)
    for j in range(1, top + 1):
        covered = np.zeros(1, dtype=bool)
        for r in range(len(dec.stop)):
            if r > 0:
                covered = covered[np.arange(covered.size * 2) // 2]
            new = dec.stop[r] & (dec.gen[r] == j)
            if np.any(new & covered):
                return False
            covered = covered | new
    return True


def box_count(level_from, level_to):
    """Number of Whitney boxes in a Carleson box of a cube of level ``level_from``."""
    return 2 ** (level_to - level_from + 1) - 1


def corona_partition_counts(dec):
    """Return (boxes in the root Carleson box, sum over R of boxes in Omega^w(R)).

    The sawtooth sizes are counted independently of the owner map as
    |R-hat| minus the boxes of the stopping children of R.
    """
    total = box_count(dec.root.level, dec.max_depth)
    acc = 0
    for R, kids in dec.children_map().items():
        acc += box_count(R.level, dec.max_depth) - sum(box_count(c.level, dec.max_depth) for c in kids)
    return total, acc


def log_weight_samples(w, n):
    """dx-averages of ln w over the ``n`` cells."""
    d = int(round(math.log2(n)))
    return np.asarray(w.level(d)[2]) if d <= w.depth else np.repeat(np.asarray(w.level(w.depth)[2]), n >> w.depth)


def square_function_S(b, dec):
    """S(b)(x)^2 = sum over stopping cubes R of 1_R(x) |b_R - b_{R'}|^2, on the grid of ``b``.

    ``b`` holds samples on ``N`` cells covering the root cube with
    ``N >= 2**(max_depth - root.level)``; b_R is the dx-average over R.
    """
    b = np.asarray(b)
    n = b.size
    depth = dec.max_depth - dec.root.level
    if n < 2**depth:
        raise PreconditionError("grid too coarse for the decomposition depth")
    s2 = np.zeros(n)
    means = [b.reshape(2**r, -1).mean(axis=1) for r in range(depth + 1)]
    for r in range(1, depth + 1):
        for k in np.flatnonzero(dec.stop[r]):
            c = dec._absolute(r, k)
            top = dec.owner(c.parent())
            rt = top.level - dec.root.level
            kt = top.index - (dec.root.index << rt)
            gap = means[r][k] - means[rt][kt]
            per = n >> r
            s2[k * per:(k + 1) * per] += abs(gap) ** 2
    return np.sqrt(s2)


def square_function_report(w, dec):
    """Return (int S^2 dw / w(Q), int |ln w - (ln w)_Q|^2 dw / w(Q), normalised ratio)."""
    n = 2 ** (dec.max_depth - dec.root.level)
    lvl = dec.max_depth
    sl = slice(dec.root.index * n, (dec.root.index + 1) * n)
    b = np.asarray(w.level(lvl)[2])[sl]
    mass = np.asarray(w.level(lvl)[0])[sl]
    s = square_function_S(b, dec)
    wq = float(mass.sum())
    lhs = float(np.sum(s**2 * mass)) / wq
    bmo = float(np.sum(np.abs(b - b.mean()) ** 2 * mass)) / wq
    return lhs, bmo, (lhs / bmo if bmo > 0 else 0.0)


@dataclass
class StoppingParams:
    sigma_w: float = 0.1
    sigma_1: float = 0.1
    sigma_2: float = 0.1
    sigma_3: float = 0.05
    sigma_4: float = 0.2
    sigma_5: float = 0.2
    sigma_6: float = 0.1
    delta: float = 0.5
    tau: float = 0.0
    nu: np.ndarray = field(default_factory=lambda: np.eye(2) / math.sqrt(2))
    xi: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0], dtype=complex))

    def __post_init__(self):
        for k in ("sigma_w", "sigma_1", "sigma_2", "sigma_3", "sigma_4", "sigma_5", "sigma_6", "delta"):
            check_positive(getattr(self, k), k)
        if self.sigma_6 > 1:
            raise PreconditionError("sigma_6 must lie in (0, 1]")
        if self.tau < 0:
            raise PreconditionError("tau must be non-negative")

    def to_json(self):
        d = asdict(self)
        d["nu"] = [[[complex(z).real, complex(z).imag] for z in row] for row in np.asarray(self.nu)]
        d["xi"] = [[complex(z).real, complex(z).imag] for z in np.asarray(self.xi)]
        return d


def pair_average(f, cube, weights):
    """E_Q f: dw-average of the normal part and dx-average of the tangential part over ``cube``."""
    n = weights.size
    f = np.asarray(f).reshape(2, n)
    sl = cube.grid_slice(n)
    wv = weights[sl]
    return np.array([np.sum(f[0, sl] * wv) / wv.sum(), f[1, sl].mean()])


def level_pair_averages(f, level, weights):
    """E_Q f for every cube of ``level``, shape (2**level, 2)."""
    n = weights.size
    f = np.asarray(f).reshape(2, n)
    per = n >> level
    wv = weights.reshape(-1, per)
    a = (f[0].reshape(-1, per) * wv).sum(axis=1) / wv.sum(axis=1)
    b = f[1].reshape(-1, per).mean(axis=1)
    return np.stack([a, b], axis=1)


def indicator_datum(cube, xi, n):
    v = np.zeros((2, n), dtype=complex)
    sl = cube.grid_slice(n)
    v[0, sl], v[1, sl] = xi[0], xi[1]
    return v.reshape(2 * n)


def test_function(calc, q1, xi, sigma3):
    """Return ``(f, aux)`` with f = P_t(1_{Q1} xi) and aux = t DB f for t = sigma3 * l(Q1).

    ``calc`` must be the calculus of DB. ``t DB P_t = Q_t``, so the auxiliary
    field comes straight out of the calculus.
    """
    if calc.kind != "DB":
        raise PreconditionError("test functions use the calculus of DB")
    check_positive(sigma3, "sigma3")
    xi = np.asarray(xi, dtype=complex)
    if abs(np.linalg.norm(xi) - 1) > 1e-12:
        raise PreconditionError("xi must be a unit vector")
    t = sigma3 * q1.length
    v = indicator_datum(q1, xi, calc.n)
    return calc.apply("P", v, t), calc.apply("Q", v, t)


def test_function_gap(calc, q1, xi, sigma3):
    f, _ = test_function(calc, q1, xi, sigma3)
    return float(np.linalg.norm(pair_average(f, q1, calc.D.grid.w) - np.asarray(xi)))


def random_unit_vectors(count, seed):
    rng = as_generator(seed)
    z = rng.standard_normal((count, 2)) + 1j * rng.standard_normal((count, 2))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


@dataclass
class GapFit:
    sigma3: np.ndarray
    gaps: np.ndarray
    delta: float
    c: float


def fit_gap_exponent(calc, sigma3s, cubes, xis):
    """Largest gap |E_{Q1} f - xi| per sigma3 and the log-log slope delta with prefactor c."""
    sig = np.asarray(sigma3s, dtype=float)
    gaps = np.array([max(test_function_gap(calc, q, x, s) for q in cubes for x in xis) for s in sig])
    slope, icpt = np.polyfit(np.log(sig), np.log(np.maximum(gaps, 1e-300)), 1)
    c = float(np.max(gaps / sig**slope))
    return GapFit(sig, gaps, float(slope), c)


@dataclass
class BadFamily:
    q1: DyadicCube
    cubes: list
    ratio: float
    large: list
    misaligned: list
    feasible: bool


def _s_matrix(weights, logw, q1, tau):
    sl = q1.grid_slice(weights.size)
    w_q1 = float(weights[sl].mean())
    ln_q1 = float(logw[sl].mean())
    return w_q1 * math.exp(-tau - ln_q1), w_q1


def stopping_tau_xi(calc, logw, q1, xi, tau, params, f=None):
    """Maximal bad cubes below ``q1`` and their relative mass.

    ``logw`` holds dx-averages of ln w on the grid cells. A cube is bad when
    |E_Q f| > 1/sigma_4 or Re(S xi, diag(w_Q/w_Q1, 1) E_Q f) < sigma_5.
    """
    weights = calc.D.grid.w
    n = weights.size
    xi = np.asarray(xi, dtype=complex)
    if f is None:
        f, _ = test_function(calc, q1, xi, params.sigma_3)
    s11, w_q1 = _s_matrix(weights, logw, q1, tau)
    sxi = np.array([s11 * xi[0], xi[1]])
    big_l = int(round(math.log2(n)))
    covered = np.zeros(1, dtype=bool)
    cubes, large, mis = [], [], []
    mass = 0.0
    for r in range(big_l - q1.level + 1):
        lvl = q1.level + r
        if r > 0:
            covered = covered[np.arange(covered.size * 2) // 2]
        base = q1.index << r
        avgs = level_pair_averages(f, lvl, weights)[base:base + (1 << r)]
        per = n >> lvl
        wq = weights.reshape(-1, per)[base:base + (1 << r)]
        w_avg = wq.mean(axis=1)
        big = np.linalg.norm(avgs, axis=1) > 1.0 / params.sigma_4
        scaled = np.stack([w_avg / w_q1 * avgs[:, 0], avgs[:, 1]], axis=1)
        align = np.real(sxi[None, 0] * np.conj(scaled[:, 0]) + sxi[None, 1] * np.conj(scaled[:, 1]))
        low = align < params.sigma_5
        bad = (big | low) & ~covered
        for k in np.flatnonzero(bad):
            c = DyadicCube(lvl, base + int(k))
            cubes.append(c)
            (large if big[k] else mis).append(c)
        mass += float(wq[bad].sum()) / n
        covered = covered | bad
    wmass = float(weights[q1.grid_slice(n)].sum()) / n
    ratio = mass / wmass
    return BadFamily(q1, cubes, ratio, large, mis, ratio <= 1 - params.sigma_6 + 1e-12)


def sawtooth_counts(root, family, max_level):
    """Return (boxes in root-hat, boxes in the sawtooth + boxes in the family's Carleson boxes).

    Equality certifies that root-hat is the disjoint union of the sawtooth
    region and the Carleson boxes of the (disjoint) family.
    """
    total = box_count(root.level, max_level)
    covered = np.zeros(1, dtype=bool)
    saw = 0
    fam = {}
    for c in family:
        fam.setdefault(c.level, []).append(c.index)
    for r in range(max_level - root.level + 1):
        lvl = root.level + r
        if r > 0:
            covered = covered[np.arange(covered.size * 2) // 2]
        for idx in fam.get(lvl, []):
            covered[idx - (root.index << r)] = True
        saw += int(np.sum(~covered))
    boxes = sum(box_count(c.level, max_level) for c in family)
    return total, saw + boxes


def iterated_stopping(calc, logw, q0, xi, tau, params, generations=3, min_cells=4):
    """Masses of successive bad generations, each relative to w(Q0)."""
    weights = calc.D.grid.w
    n = weights.size
    big_l = int(round(math.log2(n)))
    w0 = float(weights[q0.grid_slice(n)].sum())
    current = [q0]
    out = []
    for _ in range(generations):
        nxt = []
        for q in current:
            if (n >> q.level) < min_cells or q.level > big_l:
                continue
            nxt.extend(stopping_tau_xi(calc, logw, q, xi, tau, params).cubes)
        mass = sum(float(weights[c.grid_slice(n)].sum()) for c in nxt) / w0
        out.append(mass)
        current = nxt
        if not current:
            break
    return out


@dataclass
class Calibration:
    params: StoppingParams
    gap_target: float
    c0: float
    max_gap: float
    train_ratio: float
    history: list


def calibrate(cases, c0, sigma6=0.1, sigma3_start=0.4, max_halvings=12, safety=0.5):
    """Fix sigma_3, then sigma_5 and sigma_4, then sigma_w = sigma_1 = sigma_2, in that order.

    ``cases`` is a list of ``(calc, logw, q1, xi, tau)`` tuples used for
    training. sigma_3 is halved until every gap is at most exp(-2 c0) / 2.
    sigma_5 is halved until the misalignment stops carry at most 1 - 2 sigma_6
    of the mass, sigma_4 until the size stops carry at most sigma_6. A final
    ``safety`` factor shrinks sigma_5 and sigma_4 once more.
    """
    target = 0.5 * math.exp(-2 * c0)
    history = []
    s3 = sigma3_start
    gap = float("inf")
    for _ in range(max_halvings):
        gap = max(test_function_gap(calc, q1, xi, s3) for calc, _, q1, xi, _ in cases)
        history.append(("sigma_3", s3, gap))
        if gap <= target:
            break
        s3 *= 0.5
    tests = [(calc, logw, q1, xi, tau, test_function(calc, q1, xi, s3)[0]) for calc, logw, q1, xi, tau in cases]

    def worst(s4, s5, which):
        p = StoppingParams(sigma_3=s3, sigma_4=s4, sigma_5=s5, sigma_6=sigma6)
        best = 0.0
        for calc, logw, q1, xi, tau, f in tests:
            fam = stopping_tau_xi(calc, logw, q1, xi, tau, p, f=f)
            n = calc.n
            w = calc.D.grid.w
            sel = fam.misaligned if which == "low" else fam.large
            m = sum(float(w[c.grid_slice(n)].sum()) for c in sel) / float(w[q1.grid_slice(n)].sum())
            best = max(best, m)
        return best

    s5 = 0.5
    for _ in range(max_halvings):
        r = worst(1e-12, s5, "low")
        history.append(("sigma_5", s5, r))
        if r <= 1 - 2 * sigma6:
            break
        s5 *= 0.5
    s4 = 0.5
    for _ in range(max_halvings):
        r = worst(s4, 1e-300, "big")
        history.append(("sigma_4", s4, r))
        if r <= sigma6:
            break
        s4 *= 0.5
    s4 *= safety
    s5 *= safety
    sw = s4 * s5 / (32 * math.e)
    params = StoppingParams(sigma_w=sw, sigma_1=sw, sigma_2=sw, sigma_3=s3, sigma_4=s4, sigma_5=s5,
                            sigma_6=sigma6)
    total = 0.0
    for calc, logw, q1, xi, tau, f in tests:
        total = max(total, stopping_tau_xi(calc, logw, q1, xi, tau, params, f=f).ratio)
    return Calibration(params, target, c0, float(gap), total, history)


def packing_ensemble(seeds, beta, sigma_w, depth, weight_factory):
    """Rows (seed, sigma_w, packing_ratio, a2) for random weights ``weight_factory(seed)``."""
    from .weights import a2_constant

    rows = []
    for s in seeds:
        w = weight_factory(s)
        dec = corona_decompose(w, DyadicCube(0, 0), sigma_w, depth)
        rows.append((int(s), float(sigma_w), dec.packing_ratio, a2_constant(w, depth)))
    return rows


def bucket_constants(rows, buckets=4):
    """Per-A2-class constants max(packing * sigma_w^2), classes by A2 quantiles (ascending)."""
    a2 = np.array([r[3] for r in rows])
    c = np.array([r[2] * r[1] ** 2 for r in rows])
    edges = np.quantile(a2, np.linspace(0, 1, buckets + 1))
    out = []
    for i in range(buckets):
        sel = (a2 >= edges[i]) & (a2 <= edges[i + 1]) if i == buckets - 1 else (a2 >= edges[i]) & (a2 < edges[i + 1])
        out.append((float(edges[i]), float(edges[i + 1]), float(c[sel].max()) if np.any(sel) else 0.0))
    return out
