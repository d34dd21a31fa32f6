"""Swendsen-Wang cluster updates and single-site Metropolis for Ising couplings.

Random numbers come from numpy Philox generators, one stream per chain,
derived from (master_seed, stream_index).  The kernels are numba-compiled
and consume the generator directly, so a chain is bit-reproducible from its
stream alone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .model import CouplingField, check_config

PHILOX = "philox4x64-10"


@dataclass(frozen=True)
class RngStream:
    """Counter-based stream: Philox4x64 (256-bit counter) keyed by SeedSequence(master_seed, spawn_key=(index,))."""

    master_seed: int
    stream_index: int = 0
    algorithm: str = PHILOX

    def generator(self) -> np.random.Generator:
        if self.algorithm != PHILOX:
            raise ValueError(f"unknown rng algorithm {self.algorithm!r}")
        ss = np.random.SeedSequence(int(self.master_seed), spawn_key=(int(self.stream_index),))
        return np.random.Generator(np.random.Philox(ss))

    @property
    def state(self) -> dict:
        return self.generator().bit_generator.state


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngStream):
        return rng.generator()
    raise TypeError(f"expected an RngStream or numpy Generator, got {type(rng).__name__}")


class NegativeCouplingError(ValueError):
    pass


def activation_probabilities(couplings: CouplingField) -> np.ndarray:
    """p_b = 1 - exp(-2 J_b s_b); rejects antiferromagnetic effective couplings."""
    eff = couplings.J * couplings.sign
    if np.any(eff < 0):
        bad = int(np.flatnonzero(eff < 0)[0])
        raise NegativeCouplingError(
            f"bond {bad} has effective coupling {eff[bad]:.6g} < 0; cluster updates need ferromagnetic "
            "couplings (seams are handled exactly by the oracle)")
    return -np.expm1(-2.0 * eff)


@numba.njit(cache=True)
def _find(parent, i):
    root = i
    while parent[root] != root:
        root = parent[root]
    while parent[i] != root:
        nxt = parent[i]
        parent[i] = root
        i = nxt
    return root


@numba.njit(cache=True)
def _bond_clusters(spins, a, b, esign, prob, parent, gen):
    for i in range(spins.size):
        parent[i] = i
    for k in range(a.size):
        p = prob[k]
        if p <= 0.0:
            continue
        if spins[a[k]] * spins[b[k]] * esign[k] > 0:
            if gen.random() < p:
                ra = _find(parent, a[k])
                rb = _find(parent, b[k])
                if ra < rb:
                    parent[rb] = ra
                elif rb < ra:
                    parent[ra] = rb


@numba.njit(cache=True)
def _sw_step(spins, a, b, esign, prob, parent, flip, gen):
    _bond_clusters(spins, a, b, esign, prob, parent, gen)
    # roots carry the smallest index of their cluster, so they are seen first
    for i in range(spins.size):
        r = _find(parent, i)
        if r == i:
            flip[i] = 1 if gen.random() < 0.5 else 0
        if flip[r]:
            spins[i] = -spins[i]


@numba.njit(cache=True)
def _metropolis_step(spins, nb_ptr, nb_site, nb_j, gen):
    # the proposed value is drawn uniformly from {+1, -1} (a flip with probability 1/2);
    # always proposing a flip would make a beta = 0 sweep a deterministic parity change
    for i in range(spins.size):
        if gen.random() < 0.5:
            continue
        h = 0.0
        for k in range(nb_ptr[i], nb_ptr[i + 1]):
            h += nb_j[k] * spins[nb_site[k]]
        dS = 2.0 * spins[i] * h
        if dS <= 0.0 or gen.random() < np.exp(-dS):
            spins[i] = -spins[i]


@numba.njit(cache=True)
def _bond_sum(spins, a, b, w):
    s = 0.0
    for k in range(a.size):
        s += w[k] * spins[a[k]] * spins[b[k]]
    return s


@numba.njit(cache=True)
def _sw_chain(spins, a, b, esign, prob, w, gen, n_sweeps, energy, mag):
    parent = np.empty(spins.size, np.int64)
    flip = np.zeros(spins.size, np.int8)
    for t in range(n_sweeps):
        _sw_step(spins, a, b, esign, prob, parent, flip, gen)
        energy[t] = _bond_sum(spins, a, b, w)
        m = 0
        for i in range(spins.size):
            m += spins[i]
        mag[t] = m


@numba.njit(cache=True)
def _metropolis_chain(spins, nb_ptr, nb_site, nb_j, a, b, w, gen, n_sweeps, energy, mag):
    for t in range(n_sweeps):
        _metropolis_step(spins, nb_ptr, nb_site, nb_j, gen)
        energy[t] = _bond_sum(spins, a, b, w)
        m = 0
        for i in range(spins.size):
            m += spins[i]
        mag[t] = m


@numba.njit(cache=True)
def _sw_one_each(configs, a, b, esign, prob, gen):
    n = configs.shape[1]
    parent = np.empty(n, np.int64)
    flip = np.zeros(n, np.int8)
    for m in range(configs.shape[0]):
        _sw_step(configs[m], a, b, esign, prob, parent, flip, gen)


def _neighbors(couplings: CouplingField):
    """CSR site -> (neighbour, J*sign), skipping self-loops."""
    a, b = couplings.bond_a, couplings.bond_b
    eff = couplings.J * couplings.sign
    keep = a != b
    src = np.concatenate([a[keep], b[keep]])
    dst = np.concatenate([b[keep], a[keep]])
    jj = np.concatenate([eff[keep], eff[keep]])
    order = np.argsort(src, kind="stable")
    ptr = np.zeros(couplings.n_sites + 1, dtype=np.int64)
    ptr[1:] = np.cumsum(np.bincount(src, minlength=couplings.n_sites))
    return ptr, dst[order].astype(np.int64), jj[order].astype(np.float64)


def _spins(config, couplings):
    return np.array(check_config(config, couplings.n_sites), dtype=np.int8)


def sw_sweep(config, couplings: CouplingField, rng) -> np.ndarray:
    """One Swendsen-Wang update; returns a new configuration."""
    prob = activation_probabilities(couplings)
    spins = _spins(config, couplings)
    parent = np.empty(spins.size, np.int64)
    flip = np.zeros(spins.size, np.int8)
    _sw_step(spins, couplings.bond_a, couplings.bond_b, couplings.sign.astype(np.int8), prob,
             parent, flip, as_generator(rng))
    return spins


def metropolis_sweep(config, couplings: CouplingField, rng) -> np.ndarray:
    """Sequential single-site Metropolis over all sites; handles signed couplings.

    Each site proposes a value drawn uniformly from {+1, -1}, accepted with
    min(1, exp(-dS)).  At beta = 0 one sweep therefore yields uniform spins.
    """
    spins = _spins(config, couplings)
    ptr, site, jj = _neighbors(couplings)
    _metropolis_step(spins, ptr, site, jj, as_generator(rng))
    return spins


def cluster_decomposition(config, couplings: CouplingField, rng) -> np.ndarray:
    """Cluster label (smallest site index of the cluster) for every site."""
    prob = activation_probabilities(couplings)
    spins = _spins(config, couplings)
    parent = np.empty(spins.size, np.int64)
    _bond_clusters(spins, couplings.bond_a, couplings.bond_b, couplings.sign.astype(np.int8),
                   prob, parent, as_generator(rng))
    return np.array([_find(parent, i) for i in range(spins.size)], dtype=np.int64)


@dataclass
class ChainTrace:
    config: np.ndarray
    energy: np.ndarray
    magnetization: np.ndarray


def run_chain(config, couplings: CouplingField, rng, n_sweeps: int, method: str = "sw",
              weights=None) -> ChainTrace:
    """n_sweeps updates; records sum_b w_b s_b sigma sigma (default w = 1) and magnetisation."""
    spins = _spins(config, couplings)
    gen = as_generator(rng)
    w = couplings.sign.astype(np.float64) if weights is None else np.asarray(weights, float) * couplings.sign
    energy = np.empty(n_sweeps)
    mag = np.empty(n_sweeps, dtype=np.int64)
    if method == "sw":
        prob = activation_probabilities(couplings)
        _sw_chain(spins, couplings.bond_a, couplings.bond_b, couplings.sign.astype(np.int8), prob,
                  w, gen, n_sweeps, energy, mag)
    elif method == "metropolis":
        ptr, site, jj = _neighbors(couplings)
        _metropolis_chain(spins, ptr, site, jj, couplings.bond_a, couplings.bond_b, w, gen,
                          n_sweeps, energy, mag)
    else:
        raise ValueError(f"unknown method {method!r}")
    return ChainTrace(config=spins, energy=energy, magnetization=mag)


def sw_apply_once(configs: np.ndarray, couplings: CouplingField, rng) -> np.ndarray:
    """Apply one independent SW sweep to every row of configs (in place copy returned)."""
    prob = activation_probabilities(couplings)
    out = np.array(configs, dtype=np.int8, copy=True)
    _sw_one_each(out, couplings.bond_a, couplings.bond_b, couplings.sign.astype(np.int8), prob,
                 as_generator(rng))
    return out


def integrated_autocorrelation_time(x, c: float = 6.0) -> float:
    """Sokal's self-consistent window estimate of tau_int (tau_int = 1/2 for uncorrelated data)."""
    x = np.asarray(x, dtype=float)
    x = x - x.mean()
    n = x.size
    var = x.var()
    if n < 4 or var == 0.0:
        return 0.5
    f = np.fft.rfft(x, 2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n] / (var * n)
    tau = 0.5
    for w in range(1, n):
        tau += acf[w]
        if w >= c * tau:
            break
    return max(tau, 0.5)


def state_index(configs: np.ndarray) -> np.ndarray:
    """Integer code of +-1 configurations (bit i set when site i is -1)."""
    bits = (np.asarray(configs) < 0).astype(np.int64)
    return bits @ (1 << np.arange(bits.shape[1], dtype=np.int64))


def exact_state_probabilities(couplings: CouplingField) -> np.ndarray:
    """Boltzmann probability of every configuration (brute force, n_sites <= 20)."""
    n = couplings.n_sites
    if n > 20:
        raise ValueError("exact state table limited to 20 sites")
    codes = np.arange(1 << n, dtype=np.int64)
    spins = np.where((codes[:, None] >> np.arange(n)) & 1, -1.0, 1.0)
    logw = (spins[:, couplings.bond_a] * spins[:, couplings.bond_b]) @ (couplings.J * couplings.sign)
    logw -= logw.max()
    p = np.exp(logw)
    return p / p.sum()
