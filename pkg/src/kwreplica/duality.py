"""Kramers-Wannier duality: coupling map, partition-function prefactors and entropy shifts.

A prefactor relation reads Z(beta) = 2^a [sinh 2 beta*]^b Z_dual(beta*), where
the exponents a, b are exact integers or half-integers.  They are kept as
Fractions and only turned into floats in log space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

from .lattice import GeometryError, Variant

LN2 = math.log(2.0)
BETA_SELF_DUAL = 0.5 * math.log1p(math.sqrt(2.0))


def dual_coupling(beta: float) -> float:
    """beta* = -1/2 ln tanh beta; an involution on (0, inf)."""
    beta = float(beta)
    if not beta > 0.0 or not math.isfinite(beta):
        raise ValueError(f"dual coupling needs beta > 0, got {beta}")
    if beta < 0.5:
        return -0.5 * math.log(math.tanh(beta))
    # tanh(beta) - 1 = -2 / (e^{2 beta} + 1), kept accurate for large beta
    return -0.5 * math.log1p(-2.0 / (math.exp(min(2.0 * beta, 700.0)) + 1.0))


def log_sinh_2beta_star(beta: float) -> float:
    """ln sinh(2 beta*) = -ln sinh(2 beta)."""
    return -math.log(math.sinh(2.0 * float(beta)))


@dataclass(frozen=True)
class DualityRelation:
    """Which relation: dimension D, replica count n and geometry variant.

    coefficients(...) returns the exponent pair (a, b) of
    Z(beta) = 2^a [sinh 2 beta*]^b Z_dual(beta*) for the given counts:
    n_sites = |Lambda| (sites per replica), n_tree = N_g (maximal-tree links
    per replica), boundary_sites = |dA|.
    """

    dimension: int
    n_replicas: int = 1
    variant: Variant = Variant.STANDARD_CUT

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.dimension not in (2, 3):
            raise GeometryError("duality relations exist for D = 2 and D = 3")
        if self.n_replicas < 1:
            raise GeometryError("n_replicas must be >= 1")
        if self.dimension == 2 and self.variant == Variant.CENTRAL_PLAQUETTE:
            raise GeometryError("the central-plaquette relation is three-dimensional")

    def coefficients(self, n_sites: int, n_tree: int | None = None,
                     boundary_sites: int | None = None) -> tuple:
        L, n = Fraction(int(n_sites)), self.n_replicas
        if L <= 0:
            raise GeometryError("n_sites must be positive")
        if self.dimension == 2:
            if n_tree:
                raise GeometryError("the 2D relation has no maximal-tree count")
            return Fraction(-1), -n * L
        if n_tree is None:
            raise GeometryError("the 3D relation needs N_g (maximal-tree links)")
        Ng = Fraction(int(n_tree))
        if n == 1:
            return -L / 2 - Ng, -3 * L / 2
        if boundary_sites is None or boundary_sites < 1:
            raise GeometryError("the 3D replica relation needs |dA| >= 1")
        dA = Fraction(int(boundary_sites))
        if self.variant == Variant.CENTRAL_PLAQUETTE:
            return (Fraction(n - 1, 2) * dA - L * n / 2 - Ng * n,
                    -Fraction(3, 2) * L * n + Fraction(n - 1, 2) * dA)
        return (n - 1) * (dA - 1) - L * n / 2 - Ng * n, -Fraction(3, 2) * L * n

    def entropy_shift(self, boundary_sites: int | None = None) -> float:
        """S_dual - S_direct for n >= 2."""
        if self.dimension == 2:
            return LN2
        if boundary_sites is None:
            raise GeometryError("the 3D entropy shift needs |dA|")
        return (boundary_sites - 1) * LN2


def general_coefficients(n_vertices: int, n_edges: int, kernel_dim: int) -> tuple:
    """Exponents (a, b) for an arbitrary closed cell complex.

    Z(beta) = 2^V (cosh beta e^{-beta*})^E / 2^k sum_h Z*_h(beta*), and
    cosh beta e^{-beta*} = (2 sinh 2 beta*)^{-1/2}.
    """
    E = Fraction(int(n_edges))
    return Fraction(int(n_vertices) - int(kernel_dim)) - E / 2, -E / 2


def log_prefactor(coeffs: tuple, beta: float) -> float:
    a, b = coeffs
    return float(a) * LN2 + float(b) * log_sinh_2beta_star(beta)


def partition_prefactor(relation: DualityRelation, beta: float, n_sites: int,
                        n_tree: int | None = None, boundary_sites: int | None = None,
                        log: bool = False) -> float:
    """Multiplicative constant C with Z(beta) = C * Z_dual(beta*)."""
    coeffs = relation.coefficients(n_sites, n_tree, boundary_sites)
    val = log_prefactor(coeffs, beta)
    return val if log else math.exp(val)


def renyi_shift_2d(s_direct: float) -> float:
    return s_direct + LN2


def renyi_shift_3d(s_direct: float, boundary_sites: int) -> float:
    if boundary_sites < 1:
        raise ValueError("boundary_sites must be >= 1")
    return s_direct + (boundary_sites - 1) * LN2


def shift_table(dimension: int, n: int, boundary_sites: int = 0) -> list:
    """Rows (relation, quantity, value) summarising the entropy shifts."""
    rows = []
    if dimension == 2:
        rows.append(("2d", f"S*_{n} - S_{n}", LN2))
        rows.append(("2d", "S_n(beta->inf)", LN2))
        rows.append(("2d", "S*_n(beta*=0)", 2 * LN2))
    else:
        rows.append(("3d", f"S^Z2_{n} - S_{n}", (boundary_sites - 1) * LN2))
        rows.append(("3d", "S^Z2_n(beta direct=0)", (boundary_sites - 1) * LN2))
    return rows
