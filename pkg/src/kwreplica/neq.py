"""Non-equilibrium switching (Jarzynski) estimates of ln[Z_n(l)/Z_n(l+a)] and c-function points.

A trajectory starts in equilibrium at the first lambda of the schedule,
then alternates: change lambda, add the action difference of the current
configuration to the work W, and perform Swendsen-Wang sweeps at the new
lambda.  Jarzynski's equality gives <exp(-W)> = Z(lambda_end)/Z(lambda_start).
"""

from __future__ import annotations

import hashlib
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace

import numba
import numpy as np

from .lattice import BondGraph, ReplicaLatticeSpec
from .model import Direction, ProtocolSchedule, couplings_at
from .sampler import (RngStream, activation_probabilities, integrated_autocorrelation_time,
                      run_chain, _sw_step)

EQUIL_FLOOR = 100
EQUIL_FACTOR = 10.0
PILOT_SWEEPS = 20000


@dataclass
class WorkRecord:
    seed: int
    stream: int
    direction: str
    W: float
    n_steps: int
    beta: float
    geometry_hash: str
    final_config_hash: str = ""
    increments: list | None = None

    def to_json_dict(self) -> dict:
        d = {"seed": self.seed, "stream": self.stream, "direction": self.direction, "W": self.W,
             "n_steps": self.n_steps, "beta": self.beta, "geometry_hash": self.geometry_hash,
             "final_config_hash": self.final_config_hash}
        if self.increments is not None:
            d["increments"] = list(self.increments)
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "WorkRecord":
        return cls(seed=int(d["seed"]), stream=int(d.get("stream", 0)), direction=d["direction"],
                   W=float(d["W"]), n_steps=int(d["n_steps"]), beta=float(d["beta"]),
                   geometry_hash=d["geometry_hash"], final_config_hash=d.get("final_config_hash", ""),
                   increments=d.get("increments"))


@dataclass
class RatioEstimate:
    """ln[Z(lambda_end)/Z(lambda_start)] from one protocol direction."""

    n_trajectories: int
    mean_exp: float
    log_ratio: float
    error: float
    direction: str
    beta: float
    n_steps: int
    geometry_hash: str
    mean_work: float = 0.0
    work_std: float = 0.0
    n_bootstrap: int = 0
    reverse_log_ratio: float | None = None
    reverse_error: float | None = None

    def forward_log_ratio(self) -> float:
        """ln[Z_n(l)/Z_n(l+a)] regardless of which direction produced the estimate."""
        return self.log_ratio if self.direction == Direction.FORWARD.value else -self.log_ratio


@numba.njit(cache=True)
def _trajectory(spins, a, b, esign, J0, J1, switched, lambdas, n_equil, sweeps_per_step, gen, incr):
    n_b = a.size
    prob = np.empty(n_b)
    lam = lambdas[0]
    for k in range(n_b):
        prob[k] = -np.expm1(-2.0 * (J0[k] + lam * (J1[k] - J0[k])) * esign[k])
    parent = np.empty(spins.size, np.int64)
    flip = np.zeros(spins.size, np.int8)
    for _ in range(n_equil):
        _sw_step(spins, a, b, esign, prob, parent, flip, gen)
    W = 0.0
    comp = 0.0
    for s in range(lambdas.size - 1):
        dl = lambdas[s + 1] - lambdas[s]
        dS = 0.0
        for j in range(switched.size):
            k = switched[j]
            dS -= dl * (J1[k] - J0[k]) * esign[k] * spins[a[k]] * spins[b[k]]
        incr[s] = dS
        # compensated accumulation
        y = dS - comp
        t = W + y
        comp = (t - W) - y
        W = t
        lam = lambdas[s + 1]
        for j in range(switched.size):
            k = switched[j]
            prob[k] = -np.expm1(-2.0 * (J0[k] + lam * (J1[k] - J0[k])) * esign[k])
        for _ in range(sweeps_per_step):
            _sw_step(spins, a, b, esign, prob, parent, flip, gen)
    return W


def config_hash(spins) -> str:
    return hashlib.sha1(np.ascontiguousarray(spins, dtype=np.int8).tobytes()).hexdigest()[:16]


def _protocol_arrays(graph: BondGraph, beta: float):
    c0 = couplings_at(graph, beta, 0.0)
    c1 = couplings_at(graph, beta, 1.0)
    activation_probabilities(c0)
    activation_probabilities(c1)
    switched = np.flatnonzero(c0.J != c1.J).astype(np.int64)
    return c0, c1, switched


def equilibration_sweeps(graph: BondGraph, beta: float, schedule: ProtocolSchedule,
                         seed: int = 0, pilot_sweeps: int = PILOT_SWEEPS) -> dict:
    """10 x tau_int of the energy at the starting lambda, floor 100 sweeps."""
    if schedule.equilibration_sweeps is not None:
        return {"equilibration_sweeps": int(schedule.equilibration_sweeps), "tau_int": None}
    c = couplings_at(graph, beta, schedule.lambdas[0])
    start = np.ones(graph.n_sites, np.int8)
    tr = run_chain(start, c, RngStream(seed, 2**62), pilot_sweeps)
    tau = integrated_autocorrelation_time(tr.energy[pilot_sweeps // 10:])
    return {"equilibration_sweeps": int(max(EQUIL_FLOOR, math.ceil(EQUIL_FACTOR * tau))), "tau_int": tau}


def run_trajectory(graph: BondGraph, beta: float, schedule: ProtocolSchedule, seed,
                   keep_increments: bool = False, _arrays=None) -> WorkRecord:
    """One switching trajectory; seed is an RngStream or (master_seed, index)."""
    stream = seed if isinstance(seed, RngStream) else RngStream(*np.atleast_1d(seed).tolist())
    if schedule.equilibration_sweeps is None:
        schedule = replace(schedule, equilibration_sweeps=equilibration_sweeps(
            graph, beta, schedule, stream.master_seed)["equilibration_sweeps"])
    c0, c1, switched = _arrays if _arrays is not None else _protocol_arrays(graph, beta)
    gen = stream.generator()
    spins = np.where(gen.random(graph.n_sites) < 0.5, -1, 1).astype(np.int8)
    incr = np.zeros(schedule.n_steps)
    lambdas = np.asarray(schedule.lambdas, dtype=float)
    W = _trajectory(spins, graph.bond_a, graph.bond_b, c0.sign.astype(np.int8), c0.J, c1.J, switched,
                    lambdas, int(schedule.equilibration_sweeps), int(schedule.sweeps_per_step), gen, incr)
    return WorkRecord(seed=int(stream.master_seed), stream=int(stream.stream_index),
                      direction=schedule.direction.value, W=float(W), n_steps=schedule.n_steps,
                      beta=float(beta), geometry_hash=graph.geometry_hash(),
                      final_config_hash=config_hash(spins),
                      increments=incr.tolist() if keep_increments else None)


def _run_chunk(args):
    graph, beta, schedule, master_seed, indices, keep = args
    arrays = _protocol_arrays(graph, beta)
    return [run_trajectory(graph, beta, schedule, RngStream(master_seed, i), keep, arrays) for i in indices]


def run_ensemble(graph: BondGraph, beta: float, schedule: ProtocolSchedule, master_seed: int,
                 n_trajectories: int, start: int = 0, workers: int = 1,
                 keep_increments: bool = False, chunk: int = 256) -> list:
    """Trajectories with stream indices start .. start+n-1, returned in index order.

    The stream index of a trajectory never depends on the worker that ran it,
    so the result is identical for any pool size.
    """
    if schedule.equilibration_sweeps is None:
        schedule = replace(schedule, equilibration_sweeps=equilibration_sweeps(
            graph, beta, schedule, master_seed)["equilibration_sweeps"])
    idx = list(range(start, start + n_trajectories))
    chunks = [(graph, beta, schedule, master_seed, idx[i:i + chunk], keep_increments)
              for i in range(0, len(idx), chunk)]
    if workers <= 1 or len(chunks) <= 1:
        out = [r for c in chunks for r in _run_chunk(c)]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            out = [r for part in pool.map(_run_chunk, chunks) for r in part]
    out.sort(key=lambda r: r.stream)
    return out


def _logmeanexp(x: np.ndarray, axis=None):
    m = np.max(x, axis=axis, keepdims=True)
    s = np.mean(np.exp(x - m), axis=axis, keepdims=True)
    return np.squeeze(np.log(s) + m, axis=axis)


def estimate_ratio(records, n_boot: int = 1000, seed: int = 0) -> RatioEstimate:
    """ln <exp(-W)> with a bootstrap error over trajectories."""
    records = list(records)
    if not records:
        raise ValueError("no work records")
    if len(records) < 2:
        raise ValueError("need at least two trajectories for an error estimate")
    key = {(r.direction, r.n_steps, r.beta, r.geometry_hash) for r in records}
    if len(key) > 1:
        raise ValueError(f"records mix protocols: {sorted(key)}")
    if n_boot < 1000:
        raise ValueError("use at least 1000 bootstrap resamples")
    W = np.array([r.W for r in records], dtype=float)
    x = -W
    lr = float(_logmeanexp(x))
    gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    boots = np.empty(n_boot)
    per = max(1, 4_000_000 // W.size)
    for i in range(0, n_boot, per):
        m = min(per, n_boot - i)
        idx = gen.integers(0, W.size, size=(m, W.size))
        boots[i:i + m] = _logmeanexp(x[idx], axis=1)
    err = float(np.std(boots, ddof=1)) if np.ptp(W) > 0 else 0.0
    r0 = records[0]
    return RatioEstimate(n_trajectories=W.size, mean_exp=float(np.exp(lr)), log_ratio=lr, error=err,
                         direction=r0.direction, beta=r0.beta, n_steps=r0.n_steps,
                         geometry_hash=r0.geometry_hash, mean_work=float(W.mean()),
                         work_std=float(W.std(ddof=1)), n_bootstrap=n_boot)


def reverse_consistency(forward: RatioEstimate, reverse: RatioEstimate, n_sigma: float = 3.0) -> dict:
    """Forward estimates ln Z1/Z0, reverse ln Z0/Z1: their sum should vanish."""
    disc = abs(forward.log_ratio + reverse.log_ratio)
    err = math.hypot(forward.error, reverse.error)
    flagged = disc > n_sigma * err if err > 0 else disc > 0
    return {"discrepancy": disc, "error": err, "n_sigma": (disc / err) if err > 0 else (0.0 if disc == 0 else math.inf),
            "flagged": bool(flagged), "forward": forward.log_ratio, "reverse": reverse.log_ratio}


def combine_directions(forward: RatioEstimate, reverse: RatioEstimate) -> RatioEstimate:
    return replace(forward, reverse_log_ratio=reverse.log_ratio, reverse_error=reverse.error)


@dataclass
class CFunctionPoint:
    """One entropic c-function measurement from the pair (l, l+a).

    value uses the backward convention (prefactor at abscissa l), value_mid
    the mid-point one (abscissa l + a/2).  Lengths in lattice units.
    """

    beta: float
    n: int
    n_tau: int
    n_s: int
    l: float
    value: float
    error: float
    value_mid: float
    error_mid: float
    dimension: int = 2
    boundary_sites: int = 2
    a: float = 1.0
    n_tau_c: int | None = None
    a_m_g: float | None = None
    normalized: bool = False
    volume: int | None = None

    @property
    def x_backward(self) -> float:
        return self.l

    @property
    def x_mid(self) -> float:
        return self.l + self.a / 2

    @property
    def l_tc(self) -> float | None:
        return None if self.n_tau_c is None else self.l / self.n_tau_c

    @property
    def l_tc_mid(self) -> float | None:
        return None if self.n_tau_c is None else self.x_mid / self.n_tau_c

    @property
    def l_mg(self) -> float | None:
        return None if self.a_m_g is None else self.l * self.a_m_g

    @property
    def l_mg_mid(self) -> float | None:
        return None if self.a_m_g is None else self.x_mid * self.a_m_g

    def to_row(self) -> dict:
        d = asdict(self)
        d.update(l_tc=self.l_tc, l_tc_mid=self.l_tc_mid, l_mg=self.l_mg, l_mg_mid=self.l_mg_mid)
        return d


CFUNCTION_FIELDS = ["beta", "n", "n_tau", "n_s", "l", "value", "error", "value_mid", "error_mid",
                    "dimension", "boundary_sites", "a", "n_tau_c", "a_m_g", "normalized", "volume"]


def c_function_point(ratio: RatioEstimate, spec: ReplicaLatticeSpec, scale=None, a_m_g=None,
                     a: float = 1.0) -> CFunctionPoint:
    """(l^{D-1}/|dA|) (1/(n-1)) (1/a) ln[Z_n(l)/Z_n(l+a)] for spec.slab_length = l.

    scale is an N_tau,c value (or None) for the l T_c conversion.
    """
    n = spec.n_replicas
    if n < 2:
        raise ValueError("c-function points need n >= 2 (the n = 1 limit is out of scope)")
    dA = spec.boundary_sites
    if dA < 1:
        # l = 0: use the entangling surface of the wider slab of the pair
        dA = spec.with_(slab_length=spec.slab_length + 1).boundary_sites
    if dA < 1:
        raise ValueError("the slab has no entangling surface")
    D = spec.dimension
    l = float(spec.slab_length)
    d = ratio.forward_log_ratio() / ((n - 1) * a)
    e = ratio.error / ((n - 1) * a)
    pb = l ** (D - 1) / dA
    pm = (l + a / 2) ** (D - 1) / dA
    volume = spec.extents[1] * (spec.transverse if D == 3 else 1)
    return CFunctionPoint(beta=ratio.beta, n=n, n_tau=spec.extents[0], n_s=spec.extents[1], l=l,
                          value=pb * d, error=pb * e, value_mid=pm * d, error_mid=pm * e,
                          dimension=D, boundary_sites=dA, a=a, n_tau_c=scale, a_m_g=a_m_g,
                          volume=volume)
