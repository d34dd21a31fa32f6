"""Named verification suites: exact identities, sampler checks and estimator checks.

Every suite returns a SuiteReport whose checks record the achieved value,
the reference and the tolerance, so the same numbers back the CLI report
and the acceptance tests.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from . import analysis
from .cells import complex_from_spec, gauge_from_spec
from .duality import LN2, DualityRelation, dual_coupling, log_prefactor, log_sinh_2beta_star
from .lattice import Boundary, ReplicaLatticeSpec, Variant, build_replica_lattice, build_switching_lattice, spanning_tree
from .model import ProtocolSchedule, couplings_at
from .neq import estimate_ratio, reverse_consistency, run_ensemble
from .oracle import (dual_sector_sum, duality_identity, enumerate_gauge_Z, enumerate_sectors,
                     enumerate_spin_Z, exact_log_ratio, exact_renyi)
from .sampler import RngStream, exact_state_probabilities, run_chain, state_index, sw_apply_once

BETAS = (0.2, 0.44, 0.8)
FREE = Boundary.FREE


@dataclass
class Check:
    name: str
    achieved: float
    tolerance: float
    passed: bool
    value: float | None = None
    reference: float | None = None
    detail: dict = field(default_factory=dict)


@dataclass
class SuiteReport:
    suite: str
    checks: list
    elapsed: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_json_dict(self) -> dict:
        return {"suite": self.suite, "passed": self.passed, "elapsed_s": self.elapsed,
                "checks": [asdict(c) for c in self.checks]}


def _check(name, achieved, tol, value=None, reference=None, **detail) -> Check:
    achieved = float(achieved)
    return Check(name, achieved, tol, bool(achieved <= tol), value, reference, detail)


def _rel(x, y):
    return abs(math.expm1(x - y))


def torus(N: int) -> ReplicaLatticeSpec:
    return ReplicaLatticeSpec(2, 1, (N, N), 0)


def free_patch(extents, n=1, l=0, x0=0, cut_slice=None) -> ReplicaLatticeSpec:
    return ReplicaLatticeSpec(len(extents), n, tuple(extents), l, cut_offset=x0,
                              boundaries=(FREE,) * len(extents), cut_slice=0 if cut_slice is None else cut_slice)


# minimal open 3D lattices (fit under the enumeration cap)
MIN3D_SINGLE = free_patch((2, 3, 3))
MIN3D_REPLICA = free_patch((2, 3, 2), n=2, l=1, x0=1, cut_slice=0)


# identities


def torus_duality_2d(N: int, beta: float) -> dict:
    """Z(beta) against 2^{-1} [sinh 2 beta*]^{-|L|} (Z*_pp + Z*_pa + Z*_ap + Z*_aa)(beta*)."""
    g = build_replica_lattice(torus(N))
    bs = dual_coupling(beta)
    lhs = enumerate_spin_Z(g, beta).log_z
    dual = enumerate_sectors(g, bs)
    coeffs = DualityRelation(2).coefficients(N * N)
    rhs = log_prefactor(coeffs, beta) + dual.log_z
    return {"log_z": lhs, "rhs": rhs, "rel_err": _rel(rhs, lhs), "sector_constant": math.exp(lhs - rhs),
            "sectors": dual.sectors}


def suite_duality_2d(tol: float = 1e-10) -> SuiteReport:
    checks = []
    for N in (2, 3, 4):
        consts = []
        for beta in BETAS:
            r = torus_duality_2d(N, beta)
            consts.append(r["sector_constant"])
            checks.append(_check(f"torus {N}x{N} beta={beta}: four-sector relation", r["rel_err"], tol,
                                 r["rhs"], r["log_z"]))
        checks.append(_check(f"torus {N}x{N}: sector constant beta-independent",
                             max(consts) - min(consts), tol, consts[0], 1.0))
    for ext in ((3, 3), (3, 4)):
        g = build_replica_lattice(free_patch(ext))
        for beta in BETAS:
            r = duality_identity(g, beta)
            checks.append(_check(f"free patch {ext[0]}x{ext[1]} beta={beta}", r["rel_err"], tol,
                                 r["rhs"], r["log_z"]))
    g = build_replica_lattice(free_patch((3, 4), n=2, l=2, x0=1))
    for beta in BETAS:
        r = duality_identity(g, beta)
        checks.append(_check(f"free 2-replica patch 3x4 beta={beta}", r["rel_err"], tol, r["rhs"], r["log_z"]))
    return SuiteReport("duality-2d", checks)


def dual_renyi(spec: ReplicaLatticeSpec, beta_star: float) -> float:
    """S*_n from the dual theories (homology-sector sums) of the replica and single lattices."""
    n = spec.n_replicas
    zn = dual_sector_sum(complex_from_spec(spec), beta_star).log_z
    z1 = dual_sector_sum(complex_from_spec(spec.with_(n_replicas=1)), beta_star).log_z
    return (zn - n * z1) / (1 - n)


def suite_replica_2d(tol: float = 1e-10, replicas=(2, 3)) -> SuiteReport:
    checks = []
    for n in replicas:
        spec = ReplicaLatticeSpec(2, n, (3, 3), 1)
        for beta in BETAS:
            s = exact_renyi(spec, beta).renyi[n]
            sd = dual_renyi(spec, dual_coupling(beta))
            checks.append(_check(f"n={n} 3x3 beta={beta}: S*_n - S_n = ln 2", abs(sd - s - LN2), tol,
                                 sd - s, LN2))
        # branch spins of the enhanced-vertex lattice carry 4n bonds, and its spin model
        # is the trivial homology sector of the dual face theory
        ev = build_replica_lattice(spec.with_(variant=Variant.ENHANCED_VERTEX))
        deg = np.bincount(np.r_[ev.bond_a, ev.bond_b])[ev.site_shared]
        checks.append(Check(f"n={n} 3x3: enhanced-vertex branch degree = 4n", float(np.abs(deg - 4 * n).max()),
                            0.0, bool(np.all(deg == 4 * n)), float(deg.max()), float(4 * n)))
        K = complex_from_spec(spec)
        g = build_replica_lattice(spec)
        for beta in BETAS:
            bs = dual_coupling(beta)
            r = dual_sector_sum(K, bs)
            triv = r.sectors["0" * len(next(iter(r.sectors)))]
            zev = enumerate_spin_Z(ev, bs).log_z
            checks.append(_check(f"n={n} 3x3 beta*={bs:.4f}: Z_EV = trivial sector", _rel(zev, triv), tol, zev, triv))
            z = enumerate_spin_Z(g, beta).log_z
            rhs = -LN2 - n * 9 * log_sinh_2beta_star(beta) + r.log_z
            checks.append(_check(f"n={n} 3x3 beta={beta}: Z_n = 1/2 sinh(2beta*)^(-n|L|) sum_h Z*_h",
                                 _rel(z, rhs), tol, rhs, z))
    # the area-law term cancels: C*_2(l) = C_2(l) between slabs that both couple the replicas
    # (at l = 0 the replicas decouple and both entropies vanish, so the shift is absent there)
    beta = 0.44
    d, dd = [], []
    for l in (1, 2):
        spec = ReplicaLatticeSpec(2, 2, (3, 4), l)
        d.append(exact_renyi(spec, beta).renyi[2])
        dd.append(dual_renyi(spec, dual_coupling(beta)))
    checks.append(_check(f"n=2 3x4 beta={beta}: S*(2) - S*(1) = S(2) - S(1)", abs((dd[1] - dd[0]) - (d[1] - d[0])), tol,
                         dd[1] - dd[0], d[1] - d[0]))
    return SuiteReport("replica-2d", checks)


def gauge_tree_independence(spec: ReplicaLatticeSpec, beta_star: float, seed: int = 0) -> dict:
    gg = gauge_from_spec(spec)
    z0 = enumerate_gauge_Z(gg, beta_star).log_z
    order = np.random.default_rng(seed).permutation(gg.n_links)
    tree = spanning_tree(gg.n_gauge_sites, gg.link_ends, root=gg.n_gauge_sites - 1, order=order)
    z1 = enumerate_gauge_Z(gg, beta_star, tree=tree).log_z
    return {"log_z": z0, "log_z_other_tree": z1, "rel_err": _rel(z1, z0),
            "trees_differ": bool(set(tree.tolist()) != set(gg.maximal_tree.tolist()))}


def torus_duality_3d(extents, beta: float) -> dict:
    """Closed-form 3D torus prefactor; the sector constant is measured."""
    spec = ReplicaLatticeSpec(3, 1, tuple(extents), 0)
    g = build_replica_lattice(spec)
    bs = dual_coupling(beta)
    lhs = enumerate_spin_Z(g, beta).log_z
    K = complex_from_spec(spec)
    dual = dual_sector_sum(K, bs)
    V = int(np.prod(extents))
    coeffs = DualityRelation(3).coefficients(V, n_tree=V - 1)
    rhs = log_prefactor(coeffs, beta) + dual.log_z
    return {"log_z": lhs, "rhs": rhs, "sector_constant": math.exp(lhs - rhs), "n_sectors": len(dual.sectors)}


def suite_duality_3d(tol: float = 1e-10, tree_tol: float = 1e-12) -> SuiteReport:
    checks = []
    for name, spec in (("single 2x3x3 free", MIN3D_SINGLE), ("2-replica 2x3x2 free", MIN3D_REPLICA)):
        g = build_replica_lattice(spec)
        for beta in BETAS:
            r = duality_identity(g, beta)
            checks.append(_check(f"{name} beta={beta}: Ising <-> Z2 gauge", r["rel_err"], tol,
                                 r["rhs"], r["log_z"], n_sectors=r["n_sectors"]))
        r = gauge_tree_independence(spec, dual_coupling(0.44))
        checks.append(_check(f"{name}: gauge-fixing tree independence", r["rel_err"], tree_tol,
                             r["log_z_other_tree"], r["log_z"], trees_differ=r["trees_differ"]))
    consts = [torus_duality_3d((2, 2, 2), beta)["sector_constant"] for beta in BETAS]
    checks.append(_check("torus 2x2x2: closed-form prefactor, sector constant beta-independent",
                         max(consts) - min(consts), tol, consts[0], 0.125))
    checks.append(_check("torus 2x2x2: sector constant = 2^-3", abs(consts[0] - 0.125), tol, consts[0], 0.125))
    return SuiteReport("duality-3d", checks)


def geometry_constant_3d(spec: ReplicaLatticeSpec = MIN3D_REPLICA, betas=(0.3, 0.7, 2.0)) -> dict:
    """kappa = (S^Z2_n - S_n) - (|dA| - 1) ln 2, measured at several beta."""
    n = spec.n_replicas
    shifts = []
    for beta in betas:
        s = exact_renyi(spec, beta).renyi[n]
        shifts.append(dual_renyi(spec, dual_coupling(beta)) - s)
    nominal = (spec.boundary_sites - 1) * LN2
    return {"shifts": shifts, "nominal_shift": nominal, "kappa": shifts[0] - nominal,
            "spread": max(shifts) - min(shifts), "s_dual_strong": dual_renyi(spec, 0.0)}


def suite_limits() -> SuiteReport:
    checks = []
    spec = ReplicaLatticeSpec(2, 2, (3, 3), 1)
    s0 = exact_renyi(spec, 0.0).renyi[2]
    checks.append(_check("S_2(beta=0) = 0 on 3x3", abs(s0), 0.0, s0, 0.0))
    s3 = exact_renyi(spec, 3.0).renyi[2]
    checks.append(_check("S_2(beta=3) within 1e-3 of ln 2 on 3x3", abs(s3 - LN2), 1e-3, s3, LN2))
    sd = dual_renyi(spec, 0.0)
    checks.append(_check("2D dual strong coupling: S*_2(beta*=0) = ln 4", abs(sd - 2 * LN2), 1e-12, sd, 2 * LN2))
    g = geometry_constant_3d()
    k = g["kappa"] / LN2
    checks.append(_check("3D: S^Z2 - S beta-independent", g["spread"], 1e-10, g["shifts"][0], g["nominal_shift"]))
    checks.append(_check("3D: geometry constant kappa is an integer multiple of ln 2", abs(k - round(k)), 1e-10,
                         g["kappa"], g["nominal_shift"], kappa_over_ln2=k))
    sds = g["s_dual_strong"]
    checks.append(_check("3D dual strong coupling = S(beta->inf) + (|dA|-1) ln 2 + kappa",
                         abs(sds - (LN2 + g["nominal_shift"] + g["kappa"])), 1e-10, sds,
                         LN2 + g["nominal_shift"] + g["kappa"]))
    return SuiteReport("limits", checks)


# sampler


def _batch_error(x, n_batches: int = 50) -> float:
    m = x[: x.size - x.size % n_batches].reshape(n_batches, -1).mean(axis=1)
    return float(m.std(ddof=1) / math.sqrt(n_batches))


def suite_sw_observables(n_sweeps: int = 200_000, seed: int = 11, n_sigma: float = 3.0) -> SuiteReport:
    """<sum sigma sigma> and <|M|> against enumeration on the 3x3 torus."""
    g = build_replica_lattice(torus(3))
    checks = []
    codes = np.arange(512)
    spins = np.where((codes[:, None] >> np.arange(9)) & 1, -1, 1)
    e_all = (spins[:, g.bond_a] * spins[:, g.bond_b]).sum(axis=1)
    m_all = np.abs(spins.sum(axis=1))
    for i, beta in enumerate(BETAS):
        c = couplings_at(g, beta)
        p = exact_state_probabilities(c)
        tr = run_chain(np.ones(9, np.int8), c, RngStream(seed, i), n_sweeps + 1000)
        e, m = tr.energy[1000:], np.abs(tr.magnetization[1000:]).astype(float)
        for name, x, ref in (("energy", e, float(p @ e_all)), ("|M|", m, float(p @ m_all))):
            err = _batch_error(x)
            z = abs(x.mean() - ref) / err
            checks.append(_check(f"beta={beta}: <{name}> within {n_sigma} sigma", z, n_sigma, float(x.mean()), ref,
                                 error=err))
    return SuiteReport("sw-observables", checks)


def sw_stationarity_chi2(beta: float = 0.3, n_samples: int = 1_000_000, seed: int = 5) -> dict:
    """Exact samples -> one SW sweep -> chi^2 of the state histogram against the Boltzmann law."""
    g = build_replica_lattice(torus(3))
    c = couplings_at(g, beta)
    p = exact_state_probabilities(c)
    gen = RngStream(seed).generator()
    idx = gen.choice(p.size, size=n_samples, p=p)
    configs = np.where((idx[:, None] >> np.arange(9)) & 1, -1, 1).astype(np.int8)
    out = state_index(sw_apply_once(configs, c, gen))
    obs = np.bincount(out, minlength=p.size).astype(float)
    exp = p * n_samples
    small = exp < 5
    if small.any():
        obs = np.append(obs[~small], obs[small].sum())
        exp = np.append(exp[~small], exp[small].sum())
    chi2, pval = stats.chisquare(obs, exp)
    return {"chi2": float(chi2), "dof": int(obs.size - 1), "p_value": float(pval)}


def suite_sw_stationarity(alpha: float = 1e-3, betas=BETAS) -> SuiteReport:
    checks = []
    for beta in betas:
        r = sw_stationarity_chi2(beta)
        checks.append(Check(f"3x3 beta={beta}: chi^2 stationarity, p > 0.001", r["p_value"], alpha,
                            r["p_value"] > alpha, r["chi2"], float(r["dof"]), r))
    return SuiteReport("sw-stationarity", checks)


# estimator


def jarzynski_small(n_trajectories: int = 10_000, n_steps: int = 64, beta: float = 0.35,
                    seed: int = 1234, workers: int = 1) -> dict:
    """ln[Z_2(0)/Z_2(1)] on the 2-replica 3x3 torus: forward and reverse ensembles against enumeration."""
    g = build_switching_lattice(ReplicaLatticeSpec(2, 2, (3, 3), 1))
    exact = exact_log_ratio(g, beta)
    t0 = time.perf_counter()
    fwd = estimate_ratio(run_ensemble(g, beta, ProtocolSchedule.linear(n_steps, "forward"), seed,
                                      n_trajectories, workers=workers))
    rev = estimate_ratio(run_ensemble(g, beta, ProtocolSchedule.linear(n_steps, "reverse"), seed + 1,
                                      n_trajectories, workers=workers))
    elapsed = time.perf_counter() - t0
    rc = reverse_consistency(fwd, rev)
    return {"exact": exact, "forward": fwd.log_ratio, "forward_error": fwd.error,
            "reverse": rev.log_ratio, "reverse_error": rev.error,
            "n_sigma": abs(fwd.log_ratio - exact) / fwd.error, "rel_err": abs(fwd.log_ratio / exact - 1),
            "fwd_rev_sigma": rc["n_sigma"], "elapsed_s": elapsed}


def suite_jarzynski_small(**kw) -> SuiteReport:
    r = jarzynski_small(**kw)
    checks = [
        _check("forward within 3 sigma of exact", r["n_sigma"], 3.0, r["forward"], r["exact"], error=r["forward_error"]),
        _check("relative error <= 1%", r["rel_err"], 0.01, r["forward"], r["exact"]),
        _check("forward/reverse discrepancy < 3 sigma", r["fwd_rev_sigma"], 3.0, r["reverse"], -r["exact"]),
        _check("runtime < 300 s", r["elapsed_s"], 300.0),
    ]
    return SuiteReport("jarzynski-small", checks)


# analysis


def suite_scale_table() -> SuiteReport:
    checks = []
    for n, text in analysis._SCALE_ROWS:
        beta_c, aT = analysis.scale_lookup(n)
        ref = float(text.split("(")[0])
        checks.append(Check(f"N_tau,c={n} -> {text}", 0.0 if beta_c == ref else 1.0, 0.0,
                            beta_c == ref and aT == 1.0 / n, beta_c, ref))
    return SuiteReport("scale-table", checks)


def synthetic_fits(seed: int = 2024) -> dict:
    gen = np.random.default_rng(seed)
    out = {}
    x = np.linspace(0.9, 3.0, 14)
    A, alpha = 0.33, 0.36
    err = 0.01 * analysis.ansatz(x, A, alpha) + 1e-4
    y = analysis.ansatz(x, A, alpha) + err * gen.standard_normal(x.size)
    fr = analysis.fit_ansatz(x, y, err)
    out["ansatz"] = (fr, {"A": A, "alpha": alpha})
    x = np.linspace(0.2, 1.25, 12)
    B, c = 0.36, 0.48
    err = 0.01 * analysis.powerlaw(x, B, c)
    y = analysis.powerlaw(x, B, c) + err * gen.standard_normal(x.size)
    out["powerlaw"] = (analysis.fit_powerlaw(x, y, err), {"B": B, "c": c})
    M = 1.31
    L = np.array([2.0, 3.0, 4.0, 5.0, 6.0])
    groups, truth = {}, {"M": M}
    for i, (cg, Ag) in enumerate([(0.2, -0.5), (0.35, -0.8), (0.1, -0.3)]):
        e = np.full(L.size, 2e-3)
        groups[i] = (L, analysis.thermo_model(L, cg, Ag, M) + e * gen.standard_normal(L.size), e)
        truth[f"c_{i}"], truth[f"A_{i}"] = cg, Ag
    fr, _ = analysis.thermo_extrapolate(groups)
    out["thermo"] = (fr, truth)
    return out


def suite_fits_synthetic(n_sigma: float = 2.0) -> SuiteReport:
    checks = []
    for name, (fr, truth) in synthetic_fits().items():
        for k, v in truth.items():
            z = abs(fr.params[k] - v) / fr.errors[k]
            checks.append(_check(f"{fr.model}: {k} recovered within {n_sigma} sigma", z, n_sigma, fr.params[k], v,
                                 error=fr.errors[k]))
    worst = 0.0
    for b in (0.1, 0.5, 1.0, 2.0, 5.0, 10.0):
        q = analysis.ansatz_integral(b)
        k1 = analysis.ansatz(1.0, 1.0, b / 2.0)
        worst = max(worst, abs(k1 / q - 1.0))
    checks.append(_check("K_1 against quadrature (relative)", worst, 1e-8))
    a = np.array([1 / 8, 1 / 10, 1 / 12, 1 / 16])
    yb = 0.3 + 0.7 * a
    ym = 0.31 + 0.4 * a
    e = np.full(a.size, 1e-3)
    cr = analysis.continuum_extrapolate(a, yb, e, ym, e)
    checks.append(_check("continuum: exact on linear data", abs(cr.value - 0.31), 1e-12, cr.value, 0.31))
    checks.append(_check("continuum: syst = injected offset", abs(cr.syst - 0.01), 1e-12, cr.syst, 0.01))
    return SuiteReport("fits-synthetic", checks)


SUITES = {
    "duality-2d": suite_duality_2d,
    "replica-2d": suite_replica_2d,
    "duality-3d": suite_duality_3d,
    "limits": suite_limits,
    "sw-observables": suite_sw_observables,
    "sw-stationarity": suite_sw_stationarity,
    "jarzynski-small": suite_jarzynski_small,
    "scale-table": suite_scale_table,
    "fits-synthetic": suite_fits_synthetic,
}


def run_suite(name: str, **kw) -> SuiteReport:
    if name not in SUITES:
        raise KeyError(f"unknown suite {name!r}; available: {', '.join(SUITES)}")
    t0 = time.perf_counter()
    rep = SUITES[name](**kw)
    rep.elapsed = time.perf_counter() - t0
    return rep
