"""Truncated Fock-space operator algebra on a 1D bosonic lattice.

Basis ordering: site 0 is the slowest-varying tensor factor, so the basis
index of occupations ``(n_0, ..., n_{L-1})`` is ``sum_j n_j d**(L-1-j)``.
Operators are built directly in the truncated space (``a`` has entries
``sqrt(n)`` for ``n <= n_max`` and nothing above), never by projecting an
infinite-dimensional operator.

Every :class:`LatticeOperator` keeps a small dense ``local`` matrix on its
support; the full sparse ``D x D`` matrix is only assembled on demand. This
lets the MPS backend use the same operator objects on chains whose full
Hilbert space would never fit in memory.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp


class InvalidDimensionError(ValueError):
    pass


class DegenerateOperatorError(ValueError):
    pass


class SiteRangeError(IndexError):
    pass


@dataclass(frozen=True)
class FockSpace:
    """L bosonic modes, each truncated at ``n_max`` photons."""

    L: int
    n_max: int
    periodic: bool = False

    def __post_init__(self):
        if self.L < 1:
            raise InvalidDimensionError(f"L must be >= 1, got {self.L}")
        if self.n_max < 1:
            raise InvalidDimensionError(f"n_max must be >= 1, got {self.n_max}")

    @property
    def d(self) -> int:
        return self.n_max + 1

    @property
    def dim(self) -> int:
        return self.d**self.L

    def index(self, occupations: Sequence[int]) -> int:
        occ = self._check_occupations(occupations)
        idx = 0
        for n in occ:
            idx = idx * self.d + n
        return idx

    def occupations(self, index: int) -> tuple[int, ...]:
        if not 0 <= index < self.dim:
            raise SiteRangeError(f"basis index {index} outside [0, {self.dim})")
        digits = []
        for _ in range(self.L):
            index, n = divmod(index, self.d)
            digits.append(n)
        return tuple(reversed(digits))

    @cached_property
    def digits(self) -> np.ndarray:
        """(dim, L) table of site occupations for every basis index."""
        idx = np.arange(self.dim)
        out = np.empty((self.dim, self.L), dtype=np.int64)
        for j in range(self.L - 1, -1, -1):
            idx, out[:, j] = np.divmod(idx, self.d)
        return out

    def basis_state(self, occupations: Sequence[int]) -> "StateVector":
        psi = np.zeros(self.dim, dtype=complex)
        psi[self.index(occupations)] = 1.0
        return StateVector(psi, self)

    def sector(self, n_total: int, parities: Sequence[int] | None = None) -> np.ndarray:
        """Basis indices with total photon number ``n_total``.

        ``parities`` optionally fixes the local parity (+1 even, -1 odd) of
        every site as well.
        """
        dig = self.digits
        mask = dig.sum(axis=1) == n_total
        if parities is not None:
            par = np.asarray(parities)
            if par.shape != (self.L,):
                raise ValueError("parities must have one entry per site")
            mask &= np.all(np.where(dig % 2 == 0, 1, -1) == par, axis=1)
        return np.flatnonzero(mask)

    def check_site(self, j: int) -> int:
        if not 0 <= j < self.L:
            raise SiteRangeError(f"site {j} outside [0, {self.L})")
        return int(j)

    def check_bond(self, j: int) -> tuple[int, int]:
        n_bonds = self.L if (self.periodic and self.L > 2) else self.L - 1
        if not 0 <= j < n_bonds:
            raise SiteRangeError(f"bond {j} outside [0, {n_bonds})")
        return j, (j + 1) % self.L

    @property
    def bonds(self) -> list[tuple[int, int]]:
        n_bonds = self.L if (self.periodic and self.L > 2) else self.L - 1
        return [self.check_bond(j) for j in range(n_bonds)]

    def _check_occupations(self, occupations: Sequence[int]) -> tuple[int, ...]:
        occ = tuple(int(n) for n in occupations)
        if len(occ) != self.L:
            raise ValueError(f"expected {self.L} occupations, got {len(occ)}")
        if any(n < 0 or n > self.n_max for n in occ):
            raise InvalidDimensionError(f"occupation outside [0, {self.n_max}]: {occ}")
        return occ


@dataclass
class StateVector:
    amplitudes: np.ndarray
    space: FockSpace

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def normalized(self) -> "StateVector":
        return StateVector(self.amplitudes / self.norm(), self.space)

    def __array__(self, dtype=None, copy=None):
        return self.amplitudes if dtype is None else self.amplitudes.astype(dtype)


@dataclass(frozen=True)
class SiteOperator:
    matrix: np.ndarray
    label: str = ""


def annihilation_matrix(d: int) -> SiteOperator:
    if d < 2:
        raise InvalidDimensionError(f"local dimension must be >= 2, got {d}")
    return SiteOperator(np.diag(np.sqrt(np.arange(1, d, dtype=float)), 1), "a")


def site_operators(d: int) -> dict[str, np.ndarray]:
    """Dense single-site matrices used throughout the package."""
    a = annihilation_matrix(d).matrix
    n = np.diag(np.arange(d, dtype=float))
    return {
        "a": a,
        "adag": a.T.copy(),
        "n": n,
        "P": np.diag((-1.0) ** np.arange(d)),
        "a2": a @ a,
        "adag2": (a @ a).T.copy(),
        "id": np.eye(d),
    }


def embed_local(local: np.ndarray, sites: Sequence[int], n_sites: int, d: int) -> sp.csr_matrix:
    """Sparse matrix of ``local`` (acting on ``sites``, in that order) on n_sites modes."""
    sites = list(sites)
    k = len(sites)
    local = np.asarray(local)
    if local.shape != (d**k, d**k):
        raise InvalidDimensionError(f"local operator shape {local.shape} != {(d**k, d**k)}")
    dim = d**n_sites
    weights = d ** (n_sites - 1 - np.arange(n_sites))
    loc_digits = np.array(np.unravel_index(np.arange(d**k), (d,) * k)).T if k else np.zeros((1, 0), int)
    offsets = loc_digits @ weights[sites] if k else np.zeros(1, dtype=np.int64)
    # Basis indices whose digits on the support are all zero.
    rest = np.arange(dim)
    for s in sites:
        rest = rest[(rest // weights[s]) % d == 0]
    r_loc, c_loc = np.nonzero(local)
    vals = local[r_loc, c_loc]
    rows = (rest[:, None] + offsets[r_loc][None, :]).ravel()
    cols = (rest[:, None] + offsets[c_loc][None, :]).ravel()
    data = np.broadcast_to(vals, (rest.size, vals.size)).ravel()
    mat = sp.csr_matrix((data.astype(complex), (rows, cols)), shape=(dim, dim))
    mat.sum_duplicates()
    mat.sort_indices()
    mat.eliminate_zeros()
    return mat


def _lift(local: np.ndarray, sites: Sequence[int], union: Sequence[int], d: int) -> np.ndarray:
    pos = [list(union).index(s) for s in sites]
    return embed_local(local, pos, len(union), d).toarray()


@dataclass(frozen=True, eq=False)
class LatticeOperator:
    """Operator acting non-trivially on ``support`` (sorted site indices).

    ``local`` is the dense matrix on the support sites, ordered as in
    ``support``.
    """

    space: FockSpace
    support: tuple[int, ...]
    local: np.ndarray
    label: str = ""
    hermitian: bool = False

    def __post_init__(self):
        support = tuple(int(s) for s in self.support)
        if list(support) != sorted(set(support)):
            raise ValueError(f"support must be sorted and unique: {support}")
        for s in support:
            self.space.check_site(s)
        object.__setattr__(self, "support", support)
        loc = np.asarray(self.local, dtype=complex)
        object.__setattr__(self, "local", loc)
        if self.hermitian and np.abs(loc - loc.conj().T).max(initial=0.0) > 1e-12:
            raise ValueError(f"operator {self.label!r} flagged hermitian but is not")

    @cached_property
    def matrix(self) -> sp.csr_matrix:
        return embed_local(self.local, self.support, self.space.L, self.space.d)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.space.dim, self.space.dim)

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def dag(self) -> "LatticeOperator":
        return LatticeOperator(self.space, self.support, self.local.conj().T,
                               f"({self.label})^dag", self.hermitian)

    def on(self, union: Sequence[int]) -> np.ndarray:
        """Local matrix extended by identities to the sorted site list ``union``."""
        return _lift(self.local, self.support, union, self.space.d)

    def _combine(self, other: "LatticeOperator", fn, label: str) -> "LatticeOperator":
        if other.space != self.space:
            raise InvalidDimensionError("operators live on different spaces")
        union = tuple(sorted(set(self.support) | set(other.support)))
        return LatticeOperator(self.space, union, fn(self.on(union), other.on(union)), label)

    def __add__(self, other: "LatticeOperator") -> "LatticeOperator":
        return self._combine(other, np.add, f"{self.label}+{other.label}")

    def __sub__(self, other: "LatticeOperator") -> "LatticeOperator":
        return self._combine(other, np.subtract, f"{self.label}-{other.label}")

    def __mul__(self, c: complex) -> "LatticeOperator":
        herm = self.hermitian and np.isreal(c)
        return LatticeOperator(self.space, self.support, c * self.local, self.label, bool(herm))

    __rmul__ = __mul__

    def __matmul__(self, other):
        if isinstance(other, LatticeOperator):
            return self._combine(other, np.matmul, f"{self.label}*{other.label}")
        if isinstance(other, StateVector):
            return StateVector(self.matrix @ other.amplitudes, other.space)
        return self.matrix @ other


@dataclass(frozen=True, eq=False)
class OperatorSum:
    """Sum of local terms; used for lattice-wide Hamiltonians."""

    space: FockSpace
    terms: tuple[LatticeOperator, ...] = field(default_factory=tuple)
    label: str = ""

    @property
    def support(self) -> tuple[int, ...]:
        return tuple(sorted(set().union(*[t.support for t in self.terms]))) if self.terms else ()

    @property
    def hermitian(self) -> bool:
        return all(t.hermitian for t in self.terms)

    @cached_property
    def matrix(self) -> sp.csr_matrix:
        mat = sp.csr_matrix((self.space.dim, self.space.dim), dtype=complex)
        for t in self.terms:
            mat = mat + t.matrix
        mat.sort_indices()
        return mat

    @property
    def shape(self) -> tuple[int, int]:
        return (self.space.dim, self.space.dim)

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def __matmul__(self, other):
        if isinstance(other, StateVector):
            return StateVector(self.matrix @ other.amplitudes, other.space)
        return self.matrix @ other


def embed(op: SiteOperator | np.ndarray, site: int, space: FockSpace) -> LatticeOperator:
    mat = op.matrix if isinstance(op, SiteOperator) else np.asarray(op)
    label = op.label if isinstance(op, SiteOperator) else ""
    if mat.shape != (space.d, space.d):
        raise InvalidDimensionError(f"site operator shape {mat.shape} != ({space.d}, {space.d})")
    space.check_site(site)
    herm = bool(np.abs(mat - mat.conj().T).max(initial=0.0) < 1e-14)
    return LatticeOperator(space, (site,), mat, f"{label}_{site}", herm)


def site_op(name: str, site: int, space: FockSpace) -> LatticeOperator:
    """Embed a named single-site operator ('a', 'adag', 'n', 'P', 'a2', 'adag2')."""
    return embed(SiteOperator(site_operators(space.d)[name], name), site, space)


def _bond_op(local: np.ndarray, i: int, j: int, space: FockSpace, label: str,
             hermitian: bool = False) -> LatticeOperator:
    """Two-site operator given with site order (i, j), re-ordered to sorted support."""
    if i > j:
        d = space.d
        local = local.reshape(d, d, d, d).transpose(1, 0, 3, 2).reshape(d * d, d * d)
        i, j = j, i
    return LatticeOperator(space, (i, j), local, label, hermitian)


# ---------------------------------------------------------------------------
# Two-site local matrices (site order: first factor = left site)

def pair_jump_local(d: int) -> np.ndarray:
    if d < 3:
        raise DegenerateOperatorError("pair jump needs n_max >= 2 (a^2 vanishes otherwise)")
    s = site_operators(d)
    id_ = s["id"]
    create = np.kron(s["adag2"], id_) + np.kron(id_, s["adag2"])
    annihilate = np.kron(s["a2"], id_) - np.kron(id_, s["a2"])
    return create @ annihilate


def hop_local(d: int) -> np.ndarray:
    """a^dag_left a_right."""
    s = site_operators(d)
    return np.kron(s["adag"], s["a"])


def heal_bond_local(d: int) -> np.ndarray:
    """a^dag_k a_j (1 - P_j)/2 in (j, k) site order: hop out of an odd site j."""
    s = site_operators(d)
    odd = (s["id"] - s["P"]) / 2
    return np.kron(s["a"] @ odd, s["adag"])


def pair_jump(j: int, space: FockSpace) -> LatticeOperator:
    i, k = space.check_bond(j)
    return _bond_op(pair_jump_local(space.d), i, k, space, f"l_{j}")


def heal_jump(j: int, space: FockSpace, gamma: float = 1.0) -> LatticeOperator:
    """Parity-conditioned hop out of site j to both neighbours (open chain drops missing ones)."""
    space.check_site(j)
    terms = []
    for k in (j + 1, j - 1):
        if space.periodic:
            k %= space.L
        elif not 0 <= k < space.L:
            continue
        if k == j:
            continue
        terms.append(_bond_op(gamma * heal_bond_local(space.d), j, k, space, ""))
    op = terms[0]
    for t in terms[1:]:
        op = op + t
    return LatticeOperator(space, op.support, op.local, f"c_{j}")


def heal_bond_channels(space: FockSpace, gamma: float) -> list[tuple[LatticeOperator, float]]:
    """Healing split into independent bond-local hop channels.

    Each channel is ``a^dag_k a_j (1-P_j)/2`` for a neighbour ``k`` of ``j``;
    with the rate coefficient ``gamma/4`` an isolated odd-parity site hops
    each way at physical rate ``gamma/2`` under the factor-2 dissipator.
    """
    out = []
    for j in range(space.L):
        for k in (j - 1, j + 1):
            if space.periodic:
                k %= space.L
            elif not 0 <= k < space.L:
                continue
            if k == j:
                continue
            out.append((_bond_op(heal_bond_local(space.d), j, k, space, f"h_{j}->{k}"),
                        gamma / 4.0))
    return out


def heal_jump_hardcore(j: int, space: FockSpace) -> LatticeOperator:
    i, k = space.check_bond(j)
    if space.n_max != 2:
        warnings.warn("hard-core healing jump is intended for n_max = 2", stacklevel=2)
    s = site_operators(space.d)
    proj = s["n"] @ (s["n"] - 2 * s["id"])
    hop = np.kron(s["adag"], s["a"]) + np.kron(s["a"], s["adag"])
    local = hop @ np.kron(proj, s["id"])
    return _bond_op(local, i, k, space, f"c'_{j}")


def hop_noise_jump(j: int, space: FockSpace, reverse: bool = False) -> LatticeOperator:
    """Incoherent hop a^dag_j a_{j+1} (``reverse`` gives a^dag_{j+1} a_j)."""
    i, k = space.check_bond(j)
    local = hop_local(space.d)
    if reverse:
        return _bond_op(local, k, i, space, f"l'_{j}^rev")
    return _bond_op(local, i, k, space, f"l'_{j}")


def hamiltonian_terms(kind: str, strength: float, space: FockSpace) -> OperatorSum:
    """Lattice-wide on-site Hamiltonian: ``kerr`` U a^dag2 a^2 or ``penalty`` -V0 n(n-2)."""
    s = site_operators(space.d)
    if kind == "kerr":
        local = strength * s["adag2"] @ s["a2"]
    elif kind == "penalty":
        local = -strength * s["n"] @ (s["n"] - 2 * s["id"])
    else:
        raise ValueError(f"unknown Hamiltonian kind {kind!r}")
    terms = tuple(LatticeOperator(space, (j,), local, f"{kind}_{j}", True) for j in range(space.L))
    return OperatorSum(space, terms, kind)


def number_total(space: FockSpace) -> OperatorSum:
    s = site_operators(space.d)
    return OperatorSum(space, tuple(LatticeOperator(space, (j,), s["n"], f"n_{j}", True)
                                    for j in range(space.L)), "N")


def pair_jumps(space: FockSpace, kappa: float = 1.0) -> list[tuple[LatticeOperator, float]]:
    return [(pair_jump(j, space), kappa) for j in range(len(space.bonds))]


def hop_noise_channels(space: FockSpace, rate: float, both_directions: bool = True
                       ) -> list[tuple[LatticeOperator, float]]:
    out = []
    for j in range(len(space.bonds)):
        out.append((hop_noise_jump(j, space), rate))
        if both_directions:
            out.append((hop_noise_jump(j, space, reverse=True), rate))
    return out


def as_matrix(op, basis: np.ndarray | None = None):
    """Sparse/dense matrix of an operator, optionally restricted to ``basis`` indices."""
    mat = op.matrix if isinstance(op, (LatticeOperator, OperatorSum)) else op
    if basis is not None and mat.shape[0] != len(basis):
        mat = sp.csr_matrix(mat)[basis][:, basis]
    return mat


def commutator_norm(x, y) -> float:
    """Max-norm of [x, y] for sparse or dense operators."""
    xm, ym = as_matrix(x), as_matrix(y)
    c = xm @ ym - ym @ xm
    if sp.issparse(c):
        return float(abs(c).max()) if c.nnz else 0.0
    return float(np.abs(c).max())


def product_state(occupations: Iterable[int], space: FockSpace) -> StateVector:
    return space.basis_state(list(occupations))
