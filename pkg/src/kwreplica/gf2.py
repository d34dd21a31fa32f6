"""Linear algebra over GF(2) with vectors packed into Python ints."""

from __future__ import annotations


def echelon(vectors) -> dict:
    """Echelon basis {leading bit: vector} of the span of vectors."""
    basis = {}
    for v in vectors:
        v = int(v)
        while v:
            lead = v.bit_length() - 1
            if lead in basis:
                v ^= basis[lead]
            else:
                basis[lead] = v
                break
    return basis


def rank(vectors) -> int:
    return len(echelon(vectors))


def reduce(v: int, basis: dict) -> int:
    while v:
        lead = v.bit_length() - 1
        if lead not in basis:
            return v
        v ^= basis[lead]
    return 0


def in_span(v: int, basis: dict) -> bool:
    return reduce(v, basis) == 0


def nullspace(rows, ncols: int) -> list:
    """Basis of {x : r . x = 0 for every row r}; x has ncols bits."""
    reduced = []
    for r in rows:
        r = int(r)
        for c, pr in reduced:
            if (r >> c) & 1:
                r ^= pr
        if not r:
            continue
        c = r.bit_length() - 1
        reduced = [(c2, pr2 ^ r) if (pr2 >> c) & 1 else (c2, pr2) for c2, pr2 in reduced]
        reduced.append((c, r))
    pivots = {c for c, _ in reduced}
    basis = []
    for f in range(ncols):
        if f in pivots:
            continue
        x = 1 << f
        for c, pr in reduced:
            if (pr >> f) & 1:
                x |= 1 << c
        basis.append(x)
    return basis


def pivot_positions(basis) -> list:
    """Positions P such that projecting span(basis) onto P is a bijection."""
    return sorted(echelon(basis).keys())


def complement_basis(subspace, space) -> list:
    """Representatives of space / subspace, one per generator of the quotient."""
    ech = echelon(subspace)
    reps = []
    for v in space:
        w = reduce(int(v), ech)
        if w:
            ech[w.bit_length() - 1] = w
            reps.append(int(v))
    return reps


def bits(v: int) -> list:
    out = []
    while v:
        low = v & -v
        out.append(low.bit_length() - 1)
        v ^= low
    return out


def pack(indices) -> int:
    v = 0
    for i in indices:
        v ^= 1 << int(i)
    return v
