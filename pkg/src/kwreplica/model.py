"""Ising action on a bond graph, the lambda-interpolated couplings, and character coefficients."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .lattice import BondClass, BondGraph


class Direction(str, enum.Enum):
    FORWARD = "forward"
    REVERSE = "reverse"


@dataclass(frozen=True, eq=False)
class CouplingField:
    """Per-bond coupling J_b >= 0 (units of 1/T) and sign s_b = +-1 on a fixed bond list."""

    J: np.ndarray
    sign: np.ndarray
    bond_a: np.ndarray
    bond_b: np.ndarray
    n_sites: int

    @property
    def effective(self) -> np.ndarray:
        return self.J * self.sign

    def __len__(self):
        return int(self.J.size)


def check_config(config, n_sites: int) -> np.ndarray:
    config = np.asarray(config)
    if config.shape != (n_sites,):
        raise ValueError(f"config has shape {config.shape}, expected {n_sites} distinct sites")
    return config


def random_config(graph: BondGraph, rng) -> np.ndarray:
    return np.where(rng.random(graph.n_sites) < 0.5, -1, 1).astype(np.int8)


def action(config, couplings: CouplingField) -> float:
    """S = -sum_b J_b s_b sigma_a sigma_b; the Boltzmann weight is exp(-S)."""
    config = check_config(config, couplings.n_sites)
    s = config.astype(np.float64)
    return float(-np.sum(couplings.J * couplings.sign * s[couplings.bond_a] * s[couplings.bond_b]))


def coupling_field(n_sites: int, ends, J, sign=None) -> CouplingField:
    """Coupling field on an explicit bond list (hand-made graphs, tests)."""
    ends = np.asarray(ends, dtype=np.int64).reshape(-1, 2)
    J = np.array(np.broadcast_to(np.asarray(J, dtype=float), (ends.shape[0],)))
    sign = np.ones(ends.shape[0], np.int8) if sign is None else np.asarray(sign, dtype=np.int8)
    return CouplingField(J=J, sign=sign, bond_a=ends[:, 0].copy(), bond_b=ends[:, 1].copy(),
                         n_sites=int(n_sites))


def seam_mask(graph: BondGraph, seams) -> np.ndarray:
    mask = np.zeros(graph.n_bonds, bool)
    if seams is None:
        return mask
    seams = np.asarray(seams)
    if seams.dtype == bool:
        if seams.size != graph.n_bonds:
            raise ValueError("seam mask length must equal the bond count")
        return seams.copy()
    mask[seams.astype(np.int64)] = True
    return mask


def class_weights(graph: BondGraph, lam: float) -> np.ndarray:
    """Relative weight of each bond at lambda: 1 - lambda on SwitchOff, lambda on SwitchOn, else 1."""
    w = np.ones(graph.n_bonds)
    w[graph.bond_class == BondClass.SWITCH_OFF] = 1.0 - lam
    w[graph.bond_class == BondClass.SWITCH_ON] = lam
    return w


def couplings_at(graph: BondGraph, beta: float, lam: float = 0.0, seams=None) -> CouplingField:
    """Couplings along the protocol: linear in lambda on switched bonds.

    Boundary signs of the graph (antiperiodic seams) are always included;
    `seams` flips further bonds (frustration insertions).
    """
    lam = float(lam)
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    J = float(beta) * class_weights(graph, lam)
    sign = graph.bond_sign.astype(np.int8).copy()
    sign[seam_mask(graph, seams)] *= -1
    return CouplingField(J=J, sign=sign, bond_a=graph.bond_a, bond_b=graph.bond_b,
                         n_sites=graph.n_sites)


@dataclass(frozen=True)
class ProtocolSchedule:
    """lambda grid of a switching protocol.

    Forward runs lambda 0 -> 1 (slab l+a -> l), reverse 1 -> 0.
    equilibration_sweeps = None means "derive from the integrated
    autocorrelation time at the starting point".
    """

    n_steps: int
    lambdas: tuple
    sweeps_per_step: int = 1
    equilibration_sweeps: int | None = None
    direction: Direction = Direction.FORWARD

    def __post_init__(self):
        object.__setattr__(self, "direction", Direction(self.direction))
        lam = np.asarray(self.lambdas, dtype=float)
        object.__setattr__(self, "lambdas", tuple(float(x) for x in lam))
        if self.n_steps < 1:
            raise ValueError("n_steps must be positive")
        if lam.size != self.n_steps + 1:
            raise ValueError(f"need n_steps + 1 = {self.n_steps + 1} lambda values, got {lam.size}")
        start, end = (0.0, 1.0) if self.direction == Direction.FORWARD else (1.0, 0.0)
        if lam[0] != start or lam[-1] != end:
            raise ValueError(f"{self.direction.value} schedule must run from {start} to {end}")
        d = np.diff(lam)
        if not (np.all(d > 0) if self.direction == Direction.FORWARD else np.all(d < 0)):
            raise ValueError("lambda grid must be strictly monotone")
        if self.sweeps_per_step < 0:
            raise ValueError("sweeps_per_step must be >= 0")
        if self.equilibration_sweeps is not None and self.equilibration_sweeps < 0:
            raise ValueError("equilibration_sweeps must be >= 0")

    @classmethod
    def linear(cls, n_steps: int, direction=Direction.FORWARD, sweeps_per_step: int = 1,
               equilibration_sweeps: int | None = None) -> "ProtocolSchedule":
        lam = np.linspace(0.0, 1.0, n_steps + 1)
        if Direction(direction) == Direction.REVERSE:
            lam = lam[::-1]
        return cls(n_steps, tuple(lam), sweeps_per_step, equilibration_sweeps, direction)

    def reversed(self) -> "ProtocolSchedule":
        other = Direction.REVERSE if self.direction == Direction.FORWARD else Direction.FORWARD
        return ProtocolSchedule(self.n_steps, tuple(self.lambdas[::-1]), self.sweeps_per_step,
                                self.equilibration_sweeps, other)


def clock_fourier_coeffs(N: int, beta: float, tol: float = 1e-12) -> np.ndarray:
    """C_k = (1/N) sum_q exp(beta cos(2 pi q/N)) exp(-2 pi i k q/N), k = 0..N-1."""
    if N < 2:
        raise ValueError("clock models need N >= 2")
    q = np.arange(N)
    w = np.exp(beta * np.cos(2 * np.pi * q / N))
    phase = np.exp(-2j * np.pi * np.outer(q, q) / N)
    c = phase @ w / N
    scale = max(1.0, float(np.max(np.abs(c))))
    if np.max(np.abs(c.imag)) > tol * scale:
        raise ArithmeticError("clock coefficients acquired an imaginary part")
    # the exact sum is real: use the cosine form to avoid rounding noise
    cos = np.cos(2 * np.pi * np.outer(q, q) / N)
    return cos @ w / N


def bessel_weight(nu: int, beta: float) -> float:
    """I_nu(beta) for integer nu and beta >= 0."""
    if beta < 0:
        raise ValueError("bessel_weight needs beta >= 0")
    if int(nu) != nu:
        raise ValueError("only integer orders are supported")
    return float(special.iv(abs(int(nu)), beta))


def log_bessel_weight(nu: int, beta: float) -> float:
    """ln I_nu(beta), stable for large beta."""
    if beta < 0:
        raise ValueError("bessel_weight needs beta >= 0")
    if beta == 0:
        return 0.0 if nu == 0 else -math.inf
    return float(math.log(special.ive(abs(int(nu)), beta)) + beta)
