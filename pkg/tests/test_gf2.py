import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from kwreplica import gf2


def dense_rank(vectors, ncols):
    m = np.array([[(v >> c) & 1 for c in range(ncols)] for v in vectors], dtype=np.uint8).reshape(-1, ncols)
    r = 0
    for c in range(ncols):
        piv = [i for i in range(r, m.shape[0]) if m[i, c]]
        if not piv:
            continue
        m[[r, piv[0]]] = m[[piv[0], r]]
        for i in range(m.shape[0]):
            if i != r and m[i, c]:
                m[i] ^= m[r]
        r += 1
    return r


vecs = st.lists(st.integers(0, 2 ** 12 - 1), max_size=10)


@settings(max_examples=200, deadline=None)
@given(vecs)
def test_rank_matches_dense_elimination(v):
    assert gf2.rank(v) == dense_rank(v, 12)


@settings(max_examples=200, deadline=None)
@given(vecs)
def test_nullspace(rows):
    ns = gf2.nullspace(rows, 12)
    assert len(ns) == 12 - dense_rank(rows, 12)
    assert gf2.rank(ns) == len(ns)
    for x in ns:
        for r in rows:
            assert bin(x & r).count("1") % 2 == 0


@settings(max_examples=100, deadline=None)
@given(vecs, vecs)
def test_complement_basis(sub, extra):
    space = sub + extra
    reps = gf2.complement_basis(sub, space)
    assert len(reps) == gf2.rank(space) - gf2.rank(sub)
    assert gf2.rank(sub + reps) == gf2.rank(space)


@settings(max_examples=100, deadline=None)
@given(vecs)
def test_pivot_positions_bijective(v):
    basis = gf2.echelon(v)
    piv = gf2.pivot_positions(list(basis.values()))
    mask = gf2.pack(piv)
    # distinct span elements have distinct pivot projections
    span = {0}
    for b in basis.values():
        span |= {s ^ b for s in span}
    assert len({s & mask for s in span}) == len(span)


def test_in_span_and_reduce():
    b = gf2.echelon([0b011, 0b110])
    assert gf2.in_span(0b101, b)
    assert not gf2.in_span(0b001, b)
    assert gf2.reduce(0, b) == 0


def test_bits_pack_roundtrip():
    assert gf2.bits(gf2.pack([0, 5, 63, 200])) == [0, 5, 63, 200]
    assert gf2.pack([3, 3]) == 0
