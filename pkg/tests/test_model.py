import math

import mpmath
import numpy as np
import pytest

from kwreplica.lattice import BondClass, ReplicaLatticeSpec, build_replica_lattice, build_switching_lattice, endpoint_graph
from kwreplica.model import (ProtocolSchedule, action, bessel_weight, clock_fourier_coeffs, coupling_field,
                             couplings_at, log_bessel_weight)
from kwreplica.oracle import enumerate_spin_Z


def test_action_all_up():
    g = build_replica_lattice(ReplicaLatticeSpec(2, 2, (3, 4), 2))
    c = couplings_at(g, 0.37)
    assert action(np.ones(g.n_sites, np.int8), c) == pytest.approx(-0.37 * g.n_bonds, rel=1e-15)


def test_action_zero_coupling():
    g = build_replica_lattice(ReplicaLatticeSpec(2, 1, (3, 3), 0))
    rng = np.random.default_rng(0)
    for _ in range(5):
        s = np.where(rng.random(g.n_sites) < 0.5, -1, 1)
        assert action(s, couplings_at(g, 0.0)) == 0.0


def test_action_2x2_one_flip_by_hand():
    # 2x2 torus: every site has two distinct neighbours, each joined by two bonds.
    # Flipping site 0 makes the 4 bonds touching it unsatisfied, the other 4 satisfied.
    g = build_replica_lattice(ReplicaLatticeSpec(2, 1, (2, 2), 0))
    assert g.n_bonds == 8
    s = np.ones(4, np.int8)
    s[0] = -1
    assert action(s, couplings_at(g, 0.3)) == pytest.approx(-0.3 * (4 - 4), abs=1e-15)
    # slice tau=0 down: the four spatial bonds are satisfied, the four temporal ones are not
    s2 = np.array([-1, -1, 1, 1], np.int8)
    assert action(s2, couplings_at(g, 0.3)) == pytest.approx(-0.3 * (4 - 4), abs=1e-15)
    # checkerboard: all eight bonds unsatisfied
    s3 = np.array([-1, 1, 1, -1], np.int8)
    assert action(s3, couplings_at(g, 0.3)) == pytest.approx(0.3 * 8)


def test_action_size_mismatch():
    g = build_replica_lattice(ReplicaLatticeSpec(2, 1, (3, 3), 0))
    with pytest.raises(ValueError):
        action(np.ones(8), couplings_at(g, 0.3))


def test_couplings_at_switch_rule():
    g = build_switching_lattice(ReplicaLatticeSpec(2, 2, (3, 4), 2))
    off = g.bond_class == BondClass.SWITCH_OFF
    on = g.bond_class == BondClass.SWITCH_ON
    rest = ~(off | on)
    c0 = couplings_at(g, 0.4, 0.0)
    assert np.all(c0.J[off] == 0.4) and np.all(c0.J[on] == 0.0) and np.all(c0.J[rest] == 0.4)
    c1 = couplings_at(g, 0.4, 1.0)
    assert np.all(c1.J[off] == 0.0) and np.all(c1.J[on] == 0.4) and np.all(c1.J[rest] == 0.4)
    ch = couplings_at(g, 0.4, 0.5)
    assert np.allclose(ch.J[off | on], 0.2, rtol=0, atol=1e-16)
    for lam in np.linspace(0, 1, 7):
        assert np.all(couplings_at(g, 0.4, lam).J >= 0)


@pytest.mark.parametrize("lam", [-0.1, 1.5])
def test_couplings_at_rejects_lambda(lam):
    g = build_switching_lattice(ReplicaLatticeSpec(2, 2, (3, 4), 2))
    with pytest.raises(ValueError):
        couplings_at(g, 0.4, lam)


def test_seams_flip_signs():
    g = build_replica_lattice(ReplicaLatticeSpec(2, 1, (3, 3), 0))
    c = couplings_at(g, 0.4, seams=[0, 3])
    assert list(np.flatnonzero(c.sign < 0)) == [0, 3]


@pytest.mark.parametrize("beta", [0.2, 0.5])
def test_interpolation_endpoints_match_slab_graphs(beta):
    spec = ReplicaLatticeSpec(2, 2, (3, 3), 2)
    g = build_switching_lattice(spec)
    z0 = enumerate_spin_Z(g, couplings=couplings_at(g, beta, 0.0)).log_z
    z1 = enumerate_spin_Z(g, couplings=couplings_at(g, beta, 1.0)).log_z
    assert z0 == pytest.approx(enumerate_spin_Z(build_replica_lattice(spec), beta).log_z, rel=1e-13)
    assert z1 == pytest.approx(enumerate_spin_Z(build_replica_lattice(spec.with_(slab_length=1)), beta).log_z,
                               rel=1e-13)
    assert z0 == pytest.approx(enumerate_spin_Z(endpoint_graph(g, 0), beta).log_z, rel=1e-13)


def test_frustration_gauge_invariance():
    rng = np.random.default_rng(11)
    g = build_replica_lattice(ReplicaLatticeSpec(2, 2, (3, 4), 2))
    c = couplings_at(g, 0.7, seams=rng.random(g.n_bonds) < 0.3)
    for _ in range(20):
        s = np.where(rng.random(g.n_sites) < 0.5, -1, 1).astype(np.int8)
        i = int(rng.integers(g.n_sites))
        touch = (g.bond_a == i) | (g.bond_b == i)
        sign = c.sign.copy()
        sign[touch] *= -1
        c2 = coupling_field(g.n_sites, np.stack([g.bond_a, g.bond_b], 1), c.J, sign)
        s2 = s.copy()
        s2[i] *= -1
        assert action(s2, c2) == pytest.approx(action(s, c), abs=1e-13)


def test_schedule_linear_and_reverse():
    s = ProtocolSchedule.linear(4)
    assert s.lambdas == (0.0, 0.25, 0.5, 0.75, 1.0)
    r = s.reversed()
    assert r.lambdas == (1.0, 0.75, 0.5, 0.25, 0.0)
    assert r.direction.value == "reverse"
    with pytest.raises(ValueError):
        ProtocolSchedule(2, (0.0, 0.7, 0.5, 1.0))
    with pytest.raises(ValueError):
        ProtocolSchedule(2, (0.0, 0.7, 0.6))
    with pytest.raises(ValueError):
        ProtocolSchedule(2, (0.1, 0.7, 1.0))


# character coefficients


@pytest.mark.parametrize("beta", [0.0, 0.3, 1.7])
def test_clock_n2(beta):
    c = clock_fourier_coeffs(2, beta)
    assert c[0] == pytest.approx(math.cosh(beta), rel=1e-14)
    assert c[1] == pytest.approx(math.sinh(beta), rel=1e-14, abs=1e-300)


@pytest.mark.parametrize("N", [2, 3, 4, 7])
def test_clock_beta_zero(N):
    c = clock_fourier_coeffs(N, 0.0)
    assert c[0] == pytest.approx(1.0)
    assert np.all(np.abs(c[1:]) < 1e-15)


def test_clock_n4_high_precision():
    mpmath.mp.dps = 50
    N, beta = 4, mpmath.mpf("0.7")
    ref = []
    for k in range(N):
        s = mpmath.mpf(0)
        for q in range(N):
            s += mpmath.exp(beta * mpmath.cos(2 * mpmath.pi * q / N)) * mpmath.cos(2 * mpmath.pi * k * q / N)
        ref.append(s / N)
    c = clock_fourier_coeffs(4, 0.7)
    for k in range(N):
        assert c[k] == pytest.approx(float(ref[k]), rel=1e-14)


@pytest.mark.parametrize("N", [2, 3, 4])
@pytest.mark.parametrize("beta", [0.05, 0.5, 2.0, 8.0])
def test_clock_coefficients_positive(N, beta):
    assert np.all(clock_fourier_coeffs(N, beta) > 0)


def test_clock_rejects_n1():
    with pytest.raises(ValueError):
        clock_fourier_coeffs(1, 0.3)


def test_bessel_at_zero_and_symmetry():
    assert bessel_weight(0, 0.0) == 1.0
    for nu in (1, 2, -3):
        assert bessel_weight(nu, 0.0) == 0.0
    for nu in range(1, 6):
        for beta in (0.3, 4.0):
            assert bessel_weight(nu, beta) == bessel_weight(-nu, beta)


@pytest.mark.parametrize("nu,beta", [(1, 2.0), (0, 0.5), (3, 7.5), (5, 1.2)])
def test_bessel_against_integral(nu, beta):
    mpmath.mp.dps = 30
    q = mpmath.quad(lambda x: mpmath.exp(beta * mpmath.cos(x)) * mpmath.cos(nu * x), [0, mpmath.pi])
    assert bessel_weight(nu, beta) == pytest.approx(float(q / mpmath.pi), rel=1e-12)


def test_bessel_recurrence():
    for beta in np.geomspace(0.1, 50, 25):
        for nu in range(1, 8):
            lhs = bessel_weight(nu - 1, beta) - bessel_weight(nu + 1, beta)
            rhs = 2 * nu / beta * bessel_weight(nu, beta)
            assert lhs == pytest.approx(rhs, rel=1e-10)


def test_log_bessel_large_beta():
    assert math.isfinite(log_bessel_weight(2, 2000.0))
    assert log_bessel_weight(1, 3.0) == pytest.approx(math.log(bessel_weight(1, 3.0)), rel=1e-14)
    with pytest.raises(ValueError):
        bessel_weight(1, -1.0)
