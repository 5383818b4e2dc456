"""Exact pair-condensate dark states, defect-decorated variants and correlators."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .fock import (
    DegenerateOperatorError,
    FockSpace,
    LatticeOperator,
    OperatorSum,
    StateVector,
    as_matrix,
    pair_jump,
    site_operators,
)


class CutoffOverflowError(ValueError):
    """The requested state needs occupations above the Fock cutoff."""


def pair_creation_block(d: int) -> np.ndarray:
    """Single-site a^dag2 (n+1)^-1: entries <n+2|.|n> = sqrt((n+2)/(n+1))."""
    if d < 3:
        raise DegenerateOperatorError("pair creation needs n_max >= 2")
    m = np.zeros((d, d))
    for n in range(d - 2):
        m[n + 2, n] = np.sqrt((n + 2) / (n + 1))
    return m


def defect_creation_block(d: int) -> np.ndarray:
    """Single-site a^dag (n+1)^-1: entries <n+1|.|n> = 1/sqrt(n+1)."""
    m = np.zeros((d, d))
    for n in range(d - 1):
        m[n + 1, n] = 1.0 / np.sqrt(n + 1)
    return m


def pair_creation_operator(space: FockSpace) -> OperatorSum:
    block = pair_creation_block(space.d)
    return OperatorSum(space, tuple(LatticeOperator(space, (j,), block, f"B_{j}")
                                    for j in range(space.L)), "A^dag")


@dataclass(frozen=True)
class DarkStateSpec:
    """``n_pairs`` condensed pairs plus single-photon defects at ``defects``."""

    L: int
    n_pairs: int
    n_max: int
    defects: tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "defects", tuple(int(s) for s in self.defects))
        if self.L < 2:
            raise ValueError(f"dark states need L >= 2, got {self.L}")
        if self.n_pairs < 0:
            raise ValueError(f"n_pairs must be >= 0, got {self.n_pairs}")
        if len(set(self.defects)) != len(self.defects):
            raise ValueError(f"defect sites must be distinct: {self.defects}")
        if len(self.defects) % 2:
            raise ValueError("defects come in pairs (even count required)")
        if any(not 0 <= s < self.L for s in self.defects):
            raise ValueError(f"defect site out of range: {self.defects}")
        # All pairs may pile onto one site, possibly a defect site.
        need = 2 * self.n_pairs + (1 if self.defects else 0)
        if need > self.n_max:
            raise CutoffOverflowError(
                f"n_max={self.n_max} cannot hold {self.n_pairs} pairs exactly (need >= {need})")

    @property
    def space(self) -> FockSpace:
        return FockSpace(self.L, self.n_max)

    @property
    def n_photons(self) -> int:
        return 2 * self.n_pairs + len(self.defects)


def dark_state(spec: DarkStateSpec) -> StateVector:
    space = spec.space
    psi = np.zeros(space.dim, dtype=complex)
    psi[0] = 1.0
    a_pair = pair_creation_operator(space).matrix
    for _ in range(spec.n_pairs):
        psi = a_pair @ psi
    blk = defect_creation_block(space.d)
    for s in spec.defects:
        psi = LatticeOperator(space, (s,), blk).matrix @ psi
    nrm = np.linalg.norm(psi)
    if nrm == 0.0:
        raise CutoffOverflowError("state vanished under the cutoff")
    return StateVector(psi / nrm, space)


def dark_residual(state: StateVector | np.ndarray, space: FockSpace) -> float:
    psi = np.asarray(state)
    return max(float(np.linalg.norm(pair_jump(j, space).matrix @ psi))
               for j in range(len(space.bonds)))


def correlator_operator(space: FockSpace, i: int, j: int, order: str = "single"):
    """a^dag_i a_j (``single``) or a^dag2_i a^2_j (``pair``) as a LatticeOperator."""
    space.check_site(i)
    space.check_site(j)
    s = site_operators(space.d)
    if order == "single":
        lo, hi = s["adag"], s["a"]
    elif order == "pair":
        lo, hi = s["adag2"], s["a2"]
    else:
        raise ValueError(f"order must be 'single' or 'pair', got {order!r}")
    if i == j:
        return LatticeOperator(space, (i,), lo @ hi, f"{order}_{i}{i}", True)
    if i < j:
        return LatticeOperator(space, (i, j), np.kron(lo, hi), f"{order}_{i}{j}")
    return LatticeOperator(space, (j, i), np.kron(hi, lo), f"{order}_{i}{j}")


def expectation(state: StateVector | np.ndarray, op) -> complex:
    psi = np.asarray(state)
    mat = as_matrix(op)
    return complex(np.vdot(psi, mat @ psi) / np.vdot(psi, psi))


def correlator(state: StateVector, i: int, j: int, order: str = "single") -> complex:
    return expectation(state, correlator_operator(state.space, i, j, order))


def single_occupation_projector(space: FockSpace, j: int) -> sp.csr_matrix:
    p1 = np.zeros((space.d, space.d))
    p1[1, 1] = 1.0
    return LatticeOperator(space, (j,), p1).matrix
