"""Executable acceptance checks.

Each check returns a :class:`CriterionResult` holding the headline value,
the bound it is held to, and whether it passed. ``profile='full'`` runs at
the refinement sizes (N up to 512) and enforces the runtime budgets;
``profile='smoke'`` keeps every grid at N <= 128 and reports runtimes only.
"""
from dataclasses import dataclass, field
import math
import time

import numpy as np

from . import bvp
from .dyadic import DyadicCube
from ._oracles import a2_bruteforce_power
from .corona import (StoppingParams, calibrate, corona_decompose, corona_partition_counts,
                     fit_gap_exponent, log_weight_samples, random_unit_vectors, sawtooth_counts,
                     stopping_tau_xi)
from .operators import (CoefficientMatrix, DiscreteD, SpectralCalculus, WeightedGrid, random_accretive,
                        riesz_and_kato)
from .quadratic import (annihilation_residual, calderon_pairing, ppa_error, principal_part,
                        quadratic_ratio_sup, random_range_fields)
from .weights import a2_constant, ainfty_profile, constant_weight, power_weight, random_dyadic_weight

PROFILES = ("smoke", "full")


@dataclass
class CriterionResult:
    id: int
    name: str
    value: float
    bound: str
    passed: bool
    elapsed: float = 0.0
    limit: float = float("inf")
    details: dict = field(default_factory=dict)

    def line(self):
        flag = "PASS" if self.passed else "FAIL"
        return (f"[{flag}] {self.id:>2} {self.name:<34} value={self.value:.6g} bound: {self.bound}"
                f"  ({self.elapsed:.1f}s / {self.limit:g}s)")

    def row(self):
        return (self.id, self.value, self.bound, self.passed)


def _drift(values):
    """Largest relative change between consecutive refinement levels."""
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        return 0.0
    return float(np.max(np.abs(np.diff(v)) / np.maximum(np.abs(v[1:]), np.abs(v[:-1]))))


def _grid(model, n):
    g = WeightedGrid.from_model(model, n)
    return g, DiscreteD(g)


def _sizes(profile, full, smoke):
    return full if profile == "full" else smoke


# -- individual checks ----------------------------------------------------------

def check_self_adjoint(profile):
    n = 256 if profile == "full" else 128
    sa, null = 0.0, 0.0
    for s in range(20):
        _, D = _grid(random_dyadic_weight(s, 12, 0.3), n)
        sa = max(sa, D.self_adjointness_defect())
        null = max(null, D.null_defect())
    ok = sa <= 1e-12 and null <= 1e-14
    return dict(value=sa, bound="sa <= 1e-12, null <= 1e-14", passed=ok,
                details={"N": n, "sa_defect": sa, "null_defect": null})


def check_a2_oracle(profile):
    depth = 14
    w = power_weight(0.5, depth)
    fast = a2_constant(w, depth)
    brute = a2_bruteforce_power(0.5, depth)
    rel = abs(fast - brute) / brute
    return dict(value=rel, bound="<= 1e-6", passed=rel <= 1e-6,
                details={"a2": fast, "bruteforce": brute, "depth": depth})


def check_corona_packing(profile):
    depth, beta = 10, 0.3
    sigmas = (0.4, 0.2, 0.1, 0.05, 0.025)
    seeds = range(100) if profile == "full" else range(40)
    models = {s: random_dyadic_weight(s, depth, beta) for s in seeds}
    a2 = {s: a2_constant(w, depth) for s, w in models.items()}
    rows = []
    for sw in sigmas:
        for s, w in models.items():
            dec = corona_decompose(w, DyadicCube(0, 0), sw, depth)
            rows.append((s, sw, dec.packing_ratio, a2[s]))
    scaled = np.array([r[2] * r[1] ** 2 for r in rows])
    c_all = float(scaled.max())
    by_sigma = [float(max(r[2] * r[1] ** 2 for r in rows if r[1] == sw)) for sw in sigmas]
    # classes by A2 quantiles; lower classes must not need a larger constant
    edges = np.quantile(list(a2.values()), np.linspace(0, 1, 5))
    a2v = np.array([r[3] for r in rows])
    buckets = []
    for i in range(4):
        hi = a2v <= edges[i + 1] if i == 3 else a2v < edges[i + 1]
        sel = (a2v >= edges[i]) & hi
        buckets.append(float(scaled[sel].max()) if np.any(sel) else 0.0)
    mono_sigma = all(b <= a * (1 + 1e-12) for a, b in zip(by_sigma, by_sigma[1:]))
    mono_class = all(a <= b * (1 + 1e-12) for a, b in zip(buckets, buckets[1:]))
    ok = math.isfinite(c_all) and mono_sigma and mono_class
    return dict(value=c_all, bound="finite C; C monotone in sigma_w and in A2 class", passed=ok,
                details={"C_by_sigma": dict(zip(map(str, sigmas), by_sigma)), "C_by_a2_class": buckets,
                         "a2_edges": edges.tolist(), "weights": len(models)})


def check_closed_form(profile):
    n = 128
    g, D = _grid(constant_weight(), n)
    calc = SpectralCalculus(D, CoefficientMatrix.identity(n))
    rep = quadratic_ratio_sup(calc, probes=64, seed=0)
    rng = np.random.default_rng(0)
    f = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    f -= f.mean()
    cal = calderon_pairing(g, f) / g.norm(f) ** 2 / (math.pi / 2)
    e1 = abs(rep.sup - 0.5) / 0.5
    e2 = abs(cal - 1.0)
    return dict(value=rep.sup, bound="0.5 +- 2%, calderon/(pi/2) = 1 +- 1%", passed=e1 <= 0.02 and e2 <= 0.01,
                details={"sup": rep.sup, "inf": rep.inf, "calderon_ratio": cal})


def check_quadratic_stability(profile):
    sizes = _sizes(profile, (128, 256, 512), (64, 128))
    models = {"power": power_weight(0.5), "random-dyadic": random_dyadic_weight(7, 10, 0.3)}
    drift, inf_min = 0.0, float("inf")
    table = {}
    for name, model in models.items():
        sups = {s: [] for s in range(5)}
        for n in sizes:
            _, D = _grid(model, n)
            for s in range(5):
                rep = quadratic_ratio_sup(SpectralCalculus(D, random_accretive(n, s)), probes=32, seed=s)
                sups[s].append(rep.sup)
                inf_min = min(inf_min, rep.inf)
        for s, v in sups.items():
            drift = max(drift, _drift(v))
            table[f"{name}/B{s}"] = v
    return dict(value=drift, bound="sup drift <= 10%, inf > 0", passed=drift <= 0.10 and inf_min > 0,
                details={"sizes": list(sizes), "sup": table, "inf_min": inf_min})


def check_calculus_algebra(profile):
    n = 64
    _, D = _grid(power_weight(0.5), n)
    worst = {"sgn^2": 0.0, "chi+ + chi-": 0.0, "chi^2": 0.0, "semigroup": 0.0}
    for s in range(20):
        B = random_accretive(n, s)
        for method in ("eig", "sign"):
            calc = SpectralCalculus(D, B, method=method)
            for v in random_range_fields(calc, 3, s):
                nv = np.linalg.norm(v)
                err = lambda x: float(np.linalg.norm(x) / nv)
                sv = calc.apply("sgn", v)
                worst["sgn^2"] = max(worst["sgn^2"], err(calc.apply("sgn", sv) - v))
                p, m = calc.apply("chi+", v), calc.apply("chi-", v)
                worst["chi+ + chi-"] = max(worst["chi+ + chi-"], err(p + m - v))
                worst["chi^2"] = max(worst["chi^2"], err(calc.apply("chi+", p) - p), err(calc.apply("chi-", m) - m))
                a = calc.apply("exp", calc.apply("exp", v, 0.3), 0.05)
                worst["semigroup"] = max(worst["semigroup"], err(a - calc.apply("exp", v, 0.35)))
    value = max(worst.values())
    return dict(value=value, bound="<= 1e-9", passed=value <= 1e-9, details=worst)


def check_kato(profile):
    sizes = _sizes(profile, (64, 128, 256), (32, 64, 128))
    rng = np.random.default_rng(0)
    a8 = rng.uniform(0.6, 1.6, 8) * np.exp(1j * rng.uniform(-0.3, 0.3, 8))
    d8 = rng.uniform(0.6, 1.6, 8) * np.exp(1j * rng.uniform(-0.3, 0.3, 8))
    exact, lows, ups = 0.0, [], []
    for n in sizes:
        g = WeightedGrid.from_model(power_weight(0.5), n)
        one = riesz_and_kato(g, 1.0, 1.0)
        exact = max(exact, abs(one.lower - 1), abs(one.upper - 1))
        r = riesz_and_kato(g, np.repeat(a8, n // 8), np.repeat(d8, n // 8))
        lows.append(r.lower)
        ups.append(r.upper)
    drift = max(_drift(lows), _drift(ups))
    ok = exact <= 1e-10 and drift <= 0.10 and min(lows) > 0 and max(ups) < math.inf
    return dict(value=drift, bound="a=d=1 exact to 1e-10; bracket drift <= 10%", passed=ok,
                details={"sizes": list(sizes), "lower": lows, "upper": ups, "identity_error": exact})


def check_rellich(profile):
    n = 64
    _, D = _grid(power_weight(0.5), n)
    herm, ctrl = 0.0, float("inf")
    for s in range(20):
        for side in ("+", "-"):
            r = bvp.rellich_residual(D, bvp.random_hermitian_c(n, s), side, probes=10, seed=s)
            herm = max(herm, r.perp_residual, r.par_residual)
        r = bvp.rellich_residual(D, bvp.random_c(n, s), "+", probes=10, seed=s, require_hermitian=False)
        ctrl = min(ctrl, max(r.perp_residual, r.par_residual))
    return dict(value=herm, bound="hermitian <= 1e-8, control >= 1e-3", passed=herm <= 1e-8 and ctrl >= 1e-3,
                details={"hermitian_max": herm, "control_min": ctrl})


def check_bvp_oracle(profile):
    n = 256 if profile == "full" else 64
    out, ok, worst = {}, True, 0.0
    for wname, model in (("constant", constant_weight()), ("power", power_weight(0.5))):
        for kind in ("dirichlet", "neumann"):
            c = bvp.semigroup_vs_fd(model, CoefficientMatrix.identity, kind, n, sensitivity=False)
            out[f"{wname}/{kind}"] = {"error": c.error, "refinement_error": c.refinement_error,
                                      "order_ratio": c.order_ratio}
            ok = ok and c.within_tolerance and c.order_ok
            worst = max(worst, c.error / c.refinement_error)
    return dict(value=worst, bound="error <= 3x refinement error; order ratio in [1.5, 3]", passed=ok,
                details={"N": n, "cases": out})


def check_ntmax(profile):
    sizes = _sizes(profile, (64, 128, 256), (32, 64, 128))
    lo, hi = [], []
    for n in sizes:
        _, D = _grid(power_weight(0.5), n)
        r = bvp.ntmax_equivalence(SpectralCalculus(D, random_accretive(n, 0)), probes=20, seed=0)
        lo.append(float(r.min()))
        hi.append(float(r.max()))
    drift = max(_drift(lo), _drift(hi))
    return dict(value=drift, bound="bracket drift <= 10%", passed=drift <= 0.10 and min(lo) > 0,
                details={"sizes": list(sizes), "lower": lo, "upper": hi})


def check_ppa(profile):
    sizes = _sizes(profile, (64, 128, 256), (32, 64, 128))
    sups, ann = [], 0.0
    for n in sizes:
        g, D = _grid(power_weight(0.5), n)
        calc = SpectralCalculus(D, random_accretive(n, 0))
        pp = principal_part(calc, probes=0)
        ann = max(ann, annihilation_residual(calc, pp))
        sups.append(max(ppa_error(calc, v, pp=pp) / g.norm(v) ** 2 for v in random_range_fields(calc, 50, 1)))
    drift = _drift(sups)
    return dict(value=drift, bound="sup drift <= 10%, annihilation <= 1e-9", passed=drift <= 0.10 and ann <= 1e-9,
                details={"sizes": list(sizes), "sup_ratio": sups, "annihilation": ann})


def _stopping_cases(model, n, xis):
    _, D = _grid(model, n)
    calc = SpectralCalculus(D, CoefficientMatrix.identity(n))
    logw = log_weight_samples(model, n)
    return [(calc, logw, DyadicCube(2, k), xi, 0.0) for k in range(4) for xi in xis]


def check_stopping(profile):
    n = 128 if profile == "full" else 64
    train_model = random_dyadic_weight(3, 12, 0.3)
    train = _stopping_cases(train_model, 64, random_unit_vectors(3, 0))
    calc = train[0][0]
    fit = fit_gap_exponent(calc, (0.2, 0.1, 0.05, 0.025, 0.0125), [DyadicCube(2, k) for k in range(4)],
                           random_unit_vectors(4, 1))
    cal = calibrate(train, ainfty_profile(train_model, 6).c0)
    params = cal.params
    # an alignment threshold above |xi| = 1 flags everything: the ratio check must see it
    strict = StoppingParams(sigma_3=params.sigma_3, sigma_4=params.sigma_4, sigma_5=2.0, sigma_6=params.sigma_6)
    worst_ratio, control = 0.0, 1.0
    tiled = True
    ensemble = range(10) if profile == "full" else range(4)
    for s in ensemble:
        model = random_dyadic_weight(100 + s, 12, 0.3)
        for case in _stopping_cases(model, n, random_unit_vectors(2, s)):
            fam = stopping_tau_xi(*case, params)
            worst_ratio = max(worst_ratio, fam.ratio)
            control = min(control, stopping_tau_xi(*case, strict).ratio)
            total, parts = sawtooth_counts(case[2], fam.cubes, int(round(math.log2(n))))
            tiled = tiled and total == parts
        dec = corona_decompose(model, DyadicCube(0, 0), 0.2, 10)
        total, parts = corona_partition_counts(dec)
        tiled = tiled and total == parts
        total, parts = sawtooth_counts(dec.root, dec.first_generation(), 10)
        tiled = tiled and total == parts
    ok = fit.delta > 0 and worst_ratio <= 1 - params.sigma_6 and control > 1 - params.sigma_6 and tiled
    return dict(value=fit.delta, bound="delta > 0; bad mass <= 1 - sigma_6; exact tiling", passed=ok,
                details={"gaps": fit.gaps.tolist(), "delta": fit.delta, "bad_ratio_max": worst_ratio, "control_ratio_min": control,
                         "params": params.to_json(), "tiled": tiled})


def check_perturbation(profile):
    n = 128 if profile == "full" else 64
    _, D = _grid(power_weight(0.5), n)
    radii = np.linspace(0.0, 0.5, 11)
    jump, radius = 0.0, float("inf")
    runs = {}
    for s in range(3):
        c0 = bvp.random_hermitian_c(n, s)
        dc = bvp.random_c(n, 100 + s)
        rep = bvp.perturbation_sweep(D, c0, dc, radii)
        jump = max(jump, max(rep.max_jump.values()))
        radius = min(radius, rep.radius)
        runs[str(s)] = rep.to_json()
    flags = bvp.duality_flags(D, 20, seed=0)
    agree = all(a == b for a, b, _, _ in flags)
    ok = jump <= 2.0 and radius > 0 and agree
    return dict(value=jump, bound="adjacent jump <= 2x, radius > 0", passed=ok,
                details={"radius": radius, "duality_agree": agree, "sweeps": runs})


CRITERIA = {
    1: ("self-adjointness and kernel", check_self_adjoint, 5),
    2: ("A2 oracle agreement", check_a2_oracle, 10),
    3: ("corona packing", check_corona_packing, 60),
    4: ("quadratic closed form", check_closed_form, 10),
    5: ("quadratic stability", check_quadratic_stability, 600),
    6: ("functional calculus algebra", check_calculus_algebra, 60),
    7: ("Kato equivalence", check_kato, 60),
    8: ("Rellich identity", check_rellich, 60),
    9: ("BVP oracle match", check_bvp_oracle, 300),
    10: ("non-tangential equivalence", check_ntmax, 120),
    11: ("principal part approximation", check_ppa, 120),
    12: ("stopping-time geometry", check_stopping, 300),
    13: ("perturbation continuity", check_perturbation, 300),
}


def run_criterion(cid, profile="full"):
    if profile not in PROFILES:
        raise ValueError(f"profile must be one of {PROFILES}")
    name, fn, limit = CRITERIA[cid]
    start = time.perf_counter()
    out = fn(profile)
    elapsed = time.perf_counter() - start
    passed = bool(out["passed"]) and (profile != "full" or elapsed <= limit)
    return CriterionResult(cid, name, float(out["value"]), out["bound"], passed, elapsed, limit,
                           out.get("details", {}))


def run_all(profile="smoke", ids=None, echo=None):
    results = []
    for cid in ids or sorted(CRITERIA):
        r = run_criterion(cid, profile)
        if echo is not None:
            echo(r.line())
        results.append(r)
    return results
