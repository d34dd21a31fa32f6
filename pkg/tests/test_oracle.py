import itertools
import math

import numpy as np
import pytest

from kwreplica.cells import complex_from_spec, gauge_from_spec
from kwreplica.duality import dual_coupling, log_sinh_2beta_star
from kwreplica.lattice import GaugeReplicaGraph, ReplicaLatticeSpec, Variant, build_replica_lattice
from kwreplica.oracle import (EnumerationCapError, density_of_states, dual_sector_sum, duality_identity,
                              enumerate_gauge_Z, enumerate_sectors, enumerate_spin_Z, exact_renyi, ising_system)
from kwreplica.verify import MIN3D_REPLICA, MIN3D_SINGLE, gauge_tree_independence

LN2 = math.log(2.0)


def torus(nt, ns):
    return build_replica_lattice(ReplicaLatticeSpec(2, 1, (nt, ns), 0))


def transfer_log_z(nt, ns, beta, twisted=False):
    """Column transfer matrix of the nt x ns torus (columns are periodic rings of nt sites)."""
    cols = np.array(list(itertools.product((1, -1), repeat=nt)))
    ring = np.zeros(len(cols))
    for t in range(nt):
        ring += cols[:, t] * cols[:, (t + 1) % nt]
    T = np.exp(beta * (ring[:, None] / 2 + ring[None, :] / 2 + cols @ cols.T))
    if not twisted:
        return math.log(np.sum(np.linalg.eigvalsh(T) ** ns))
    # a seam between the last and first column: trace with the global flip
    flip = (len(cols) - 1) - np.arange(len(cols))
    return math.log(np.trace(np.linalg.matrix_power(T, ns)[:, flip]))


# enumerate_spin_Z


def test_single_site():
    assert enumerate_spin_Z((1, np.zeros((0, 2))), 0.7).z == pytest.approx(2.0, rel=1e-15)


@pytest.mark.parametrize("L", [3, 5, 8, 13])
@pytest.mark.parametrize("beta", [0.1, 0.44, 1.3])
def test_ring_closed_form(L, beta):
    ends = [(i, (i + 1) % L) for i in range(L)]
    z = enumerate_spin_Z((L, ends), beta).log_z
    ref = math.log((2 * math.cosh(beta)) ** L + (2 * math.sinh(beta)) ** L)
    assert z == pytest.approx(ref, rel=1e-12)


def test_2x2_torus_transfer_matrix():
    assert enumerate_spin_Z(torus(2, 2), 0.3).log_z == pytest.approx(transfer_log_z(2, 2, 0.3), rel=1e-12)


@pytest.mark.parametrize("L", [2, 3, 5, 8, 11])
@pytest.mark.parametrize("beta", [0.2, 0.44, 0.8])
def test_2xL_transfer_matrix(L, beta):
    assert enumerate_spin_Z(torus(2, L), beta).log_z == pytest.approx(transfer_log_z(2, L, beta), rel=1e-12)


def test_3x4_transfer_matrix():
    assert enumerate_spin_Z(torus(3, 4), 0.5).log_z == pytest.approx(transfer_log_z(3, 4, 0.5), rel=1e-12)


def test_block_partition_does_not_change_counts():
    g = torus(3, 4)
    sys = ising_system(g.n_sites, np.stack([g.bond_a, g.bond_b], 1), np.full(g.n_bonds, 0.3))
    h = [density_of_states(sys, blocks_log2=k).counts for k in (0, 2, 5, 9)]
    assert all(np.array_equal(h[0], x) for x in h[1:])
    # one spin is held fixed; the multiplicity restores the global flip
    assert sys.n_free == 11 and h[0].sum() == 2 ** 11
    assert sys.log_multiplicity == pytest.approx(math.log(2))


def test_enumeration_cap():
    g = torus(3, 10)
    with pytest.raises(EnumerationCapError, match=r"2\^29.*estimated"):
        enumerate_spin_Z(g, 0.3)


# gauge enumeration


def square_plaquette():
    ends = np.array([[0, 1], [1, 2], [2, 3], [3, 0]])
    return GaugeReplicaGraph(n_gauge_sites=4, link_ends=ends, link_shared=np.zeros(4, bool),
                             plaquette_ptr=np.array([0, 4]), plaquette_links=np.arange(4),
                             plaquette_signs=np.ones(4, np.int64), plaquette_central=np.zeros(1, bool),
                             maximal_tree=np.array([0, 1, 2]))


@pytest.mark.parametrize("bs", [0.0, 0.3, 1.1])
def test_single_plaquette_by_hand(bs):
    by_hand = sum(math.exp(bs * u1 * u2 * u3 * u4) for u1, u2, u3, u4 in itertools.product((1, -1), repeat=4))
    assert by_hand == pytest.approx(16 * math.cosh(bs))
    r = enumerate_gauge_Z(square_plaquette(), bs)
    assert r.log_z == pytest.approx(math.log(by_hand), rel=1e-14)
    assert r.meta["n_free_links"] == 1


def test_gauge_beta_star_zero_counts_links():
    gg = gauge_from_spec(MIN3D_SINGLE)
    assert enumerate_gauge_Z(gg, 0.0).log_z == pytest.approx(gg.n_links * LN2, rel=1e-14)


@pytest.mark.parametrize("spec", [MIN3D_SINGLE, MIN3D_REPLICA], ids=["single", "replica"])
@pytest.mark.parametrize("beta", [0.2, 0.44, 0.8])
def test_minimal_3d_both_sides(spec, beta):
    r = duality_identity(build_replica_lattice(spec), beta)
    assert r["rel_err"] < 1e-10


@pytest.mark.parametrize("spec", [MIN3D_SINGLE, MIN3D_REPLICA], ids=["single", "replica"])
def test_gauge_tree_independence(spec):
    for seed in range(3):
        r = gauge_tree_independence(spec, dual_coupling(0.44), seed=seed)
        assert r["trees_differ"]
        assert r["rel_err"] < 1e-12


# sectors


def test_sectors_equal_at_beta_zero():
    r = enumerate_sectors(torus(3, 3), 0.0)
    vals = list(r.sectors.values())
    assert set(r.sectors) == {"pp", "pa", "ap", "aa"}
    assert max(vals) - min(vals) == 0.0
    assert r.log_z == pytest.approx(9 * LN2 + math.log(4))


def test_antiperiodic_suppressed_in_ordered_phase():
    r = enumerate_sectors(torus(4, 4), 0.8)
    s = r.sectors
    assert s["pp"] == pytest.approx(transfer_log_z(4, 4, 0.8), rel=1e-12)
    seam = transfer_log_z(4, 4, 0.8, twisted=True)
    # square torus: a seam in either direction gives the same sum
    for k in ("pa", "ap"):
        assert s[k] == pytest.approx(seam, rel=1e-12)
        assert s[k] - s["pp"] < -4.0
    assert s["aa"] < s["pa"]


@pytest.mark.parametrize("N", [2, 3, 4])
def test_sector_sum_constant_is_beta_independent(N):
    g = torus(N, N)
    consts = []
    for beta in (0.2, 0.4, 0.6):
        lhs = enumerate_spin_Z(g, beta).log_z + LN2 + N * N * log_sinh_2beta_star(beta)
        consts.append(lhs - enumerate_sectors(g, dual_coupling(beta)).log_z)
    assert max(consts) - min(consts) < 1e-10
    assert consts[0] == pytest.approx(0.0, abs=1e-10)


def test_sector_closure_matches_duality_total():
    g = torus(3, 3)
    r = duality_identity(g, 0.44)
    assert r["n_sectors"] == 4
    assert r["rel_err"] < 1e-12


# Renyi entropies


def test_renyi_beta_zero():
    assert exact_renyi(ReplicaLatticeSpec(2, 2, (3, 3), 1), 0.0).renyi[2] == 0.0


def test_renyi_strong_coupling():
    s = exact_renyi(ReplicaLatticeSpec(2, 2, (3, 3), 1), 3.0).renyi[2]
    assert abs(s - LN2) < 1e-3


def test_renyi_reference_value_beta_035():
    r = exact_renyi(ReplicaLatticeSpec(2, 2, (3, 3), 1), 0.35)
    assert 0 < r.renyi[2] < LN2
    assert r.meta["n"] == 2


def test_renyi_needs_two_replicas():
    with pytest.raises(ValueError):
        exact_renyi(ReplicaLatticeSpec(2, 1, (3, 3), 1), 0.3)


# replica duality with branch spins


@pytest.mark.parametrize("n", [2, 3])
@pytest.mark.parametrize("beta", [0.2, 0.44, 0.8])
def test_replica_duality_enhanced_vertex(n, beta):
    spec = ReplicaLatticeSpec(2, n, (3, 3), 1)
    bs = dual_coupling(beta)
    K = complex_from_spec(spec)
    dual = dual_sector_sum(K, bs)
    zn = enumerate_spin_Z(build_replica_lattice(spec), beta).log_z
    rhs = -LN2 - n * 9 * log_sinh_2beta_star(beta) + dual.log_z
    assert abs(math.expm1(rhs - zn)) < 1e-10
    # the trivial sector is the Ising model on the enhanced-vertex lattice
    ev = build_replica_lattice(spec.with_(variant=Variant.ENHANCED_VERTEX))
    assert np.all(ev.degrees()[ev.branch_sites] == 4 * n)
    trivial = dual.sectors["0" * len(next(iter(dual.sectors)))]
    assert enumerate_spin_Z(ev, bs).log_z == pytest.approx(trivial, rel=1e-13)
