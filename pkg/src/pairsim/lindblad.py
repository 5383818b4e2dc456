"""Exact density-matrix evolution under the factor-2 Lindblad equation.

    d rho/dt = -i[H, rho] + sum_k kappa_k (2 L rho L^dag - L^dag L rho - rho L^dag L)

This is the small-system oracle for the trajectory and MPS backends.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.integrate import solve_ivp

from .fock import FockSpace, LatticeOperator, OperatorSum, StateVector, as_matrix

log = logging.getLogger(__name__)


class DimensionMismatchError(ValueError):
    pass


class StiffnessError(RuntimeError):
    pass


class DimensionTooLargeError(ValueError):
    pass


def _full_dim(op) -> int:
    return op.shape[0]


@dataclass
class LindbladModel:
    """Hamiltonian plus (jump operator, rate) pairs on one Hilbert space.

    Operators may be :class:`LatticeOperator`/:class:`OperatorSum` objects or
    plain sparse/dense matrices. ``basis`` restricts the model to a subset of
    basis states (a conserved sector); operators are sliced lazily.
    """

    H: object | None = None
    jumps: list = field(default_factory=list)
    space: FockSpace | None = None
    basis: np.ndarray | None = None

    def __post_init__(self):
        self.jumps = [(op, float(rate)) for op, rate in self.jumps]
        for _, rate in self.jumps:
            if rate < 0:
                raise ValueError(f"jump rates must be non-negative, got {rate}")
        ops = ([self.H] if self.H is not None else []) + [op for op, _ in self.jumps]
        if self.space is None:
            for op in ops:
                if isinstance(op, (LatticeOperator, OperatorSum)):
                    self.space = op.space
                    break
        dims = {_full_dim(op) for op in ops}
        if len(dims) > 1:
            raise DimensionMismatchError(f"operators have different dimensions: {dims}")
        self._full = dims.pop() if dims else (self.space.dim if self.space else None)
        if self.H is not None:
            h = self.H_matrix
            dev = abs(h - h.conj().T).max() if sp.issparse(h) else np.abs(h - h.conj().T).max()
            if dev > 1e-10:
                raise ValueError("Hamiltonian is not Hermitian")

    @property
    def dim(self) -> int:
        if self.basis is not None:
            return len(self.basis)
        if self._full is None:
            raise DimensionMismatchError("model has no operators and no space")
        return self._full

    def project(self, op) -> sp.csr_matrix:
        return sp.csr_matrix(as_matrix(op, self.basis), dtype=complex)

    @property
    def H_matrix(self) -> sp.csr_matrix:
        if self.H is None:
            return sp.csr_matrix((self.dim, self.dim), dtype=complex)
        return self.project(self.H)

    @property
    def jump_matrices(self) -> list[tuple[sp.csr_matrix, float]]:
        return [(self.project(op), rate) for op, rate in self.jumps]

    def restrict(self, basis: np.ndarray) -> "LindbladModel":
        """Same model on the subspace spanned by ``basis`` (full-space indices)."""
        basis = np.asarray(basis)
        if basis.size == 0:
            raise ValueError("empty basis")
        full = self._full
        mask = np.ones(full, dtype=bool)
        mask[basis] = False
        ops = ([self.H] if self.H is not None else []) + [op for op, _ in self.jumps]
        for op in ops:
            m = sp.csr_matrix(as_matrix(op))
            leak = m[mask][:, basis]
            if leak.nnz and abs(leak).max() > 1e-12:
                raise ValueError("model does not conserve the requested sector")
        return LindbladModel(self.H, self.jumps, self.space, basis)

    def in_sector(self, n_total: int, parities: Sequence[int] | None = None) -> "LindbladModel":
        if self.space is None:
            raise ValueError("sector restriction needs a FockSpace")
        return self.restrict(self.space.sector(n_total, parities))

    def reduce(self, psi: np.ndarray | StateVector) -> np.ndarray:
        """Full-space vector -> amplitudes on this model's basis."""
        v = np.asarray(psi, dtype=complex)
        if self.basis is None or v.shape[0] == len(self.basis):
            return v
        out = v[self.basis]
        if not np.isclose(np.linalg.norm(out), np.linalg.norm(v), rtol=0, atol=1e-10):
            raise ValueError("state has weight outside the model sector")
        return out

    def lift(self, v: np.ndarray) -> np.ndarray:
        if self.basis is None:
            return v
        out = np.zeros(self._full, dtype=complex)
        out[self.basis] = v
        return out


@dataclass
class DensityMatrix:
    matrix: np.ndarray
    space: FockSpace | None = None
    basis: np.ndarray | None = None

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=complex)

    @classmethod
    def from_state(cls, psi, space: FockSpace | None = None, basis=None) -> "DensityMatrix":
        v = np.asarray(psi, dtype=complex)
        v = v / np.linalg.norm(v)
        if space is None and isinstance(psi, StateVector):
            space = psi.space
        return cls(np.outer(v, v.conj()), space, basis)

    @property
    def trace(self) -> complex:
        return complex(np.trace(self.matrix))

    def purity(self) -> float:
        return float(np.real(np.vdot(self.matrix, self.matrix)))

    def full_matrix(self) -> np.ndarray:
        if self.basis is None:
            return self.matrix
        dim = self.space.dim
        out = np.zeros((dim, dim), dtype=complex)
        out[np.ix_(self.basis, self.basis)] = self.matrix
        return out


def _as_rho(rho) -> np.ndarray:
    return rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho, dtype=complex)


def _generator_parts(model: LindbladModel):
    jumps = [(m, r) for m, r in model.jump_matrices if r > 0]
    k = sp.csr_matrix((model.dim, model.dim), dtype=complex)
    for m, r in jumps:
        k = k + r * (m.conj().T @ m)
    h_eff = model.H_matrix - 1j * k
    return sp.csr_matrix(h_eff), jumps


def liouvillian_apply(model: LindbladModel, rho) -> np.ndarray:
    r = _as_rho(rho)
    if r.shape != (model.dim, model.dim):
        raise DimensionMismatchError(f"rho shape {r.shape} vs model dim {model.dim}")
    h_eff, jumps = _generator_parts(model)
    return _rhs(h_eff, jumps, r)


def _rhs(h_eff, jumps, r: np.ndarray) -> np.ndarray:
    # rho H_eff^dag computed as (H_eff rho^dag)^dag to keep the sparse factor on the left.
    out = -1j * (h_eff @ r - (h_eff @ r.conj().T).conj().T)
    for m, rate in jumps:
        x = m @ r
        out = out + 2 * rate * (m @ x.conj().T).conj().T
    return out


def _clamp(r: np.ndarray, warn_tol: float = 1e-9) -> np.ndarray:
    r = 0.5 * (r + r.conj().T)
    w, v = np.linalg.eigh(r)
    if w[0] >= -1e-12:
        return r
    if w[0] < -warn_tol:
        log.warning("clamping negative eigenvalue %.3e of evolved density matrix", w[0])
    w = np.clip(w, 0.0, None)
    r = (v * w) @ v.conj().T
    return r / np.trace(r).real


def evolve(model: LindbladModel, rho0, t_grid: Sequence[float], rtol: float = 1e-8,
           atol: float = 1e-12, method: str = "DOP853") -> list[DensityMatrix]:
    """Integrate the master equation and return rho at every time of ``t_grid``."""
    if not 0 < rtol <= 1e-3:
        raise ValueError(f"rtol must lie in (0, 1e-3], got {rtol}")
    t = np.asarray(t_grid, dtype=float)
    if np.any(np.diff(t) <= 0):
        raise ValueError("t_grid must be strictly increasing")
    r0 = _as_rho(rho0)
    if r0.shape != (model.dim, model.dim):
        raise DimensionMismatchError(f"rho0 shape {r0.shape} vs model dim {model.dim}")
    h_eff, jumps = _generator_parts(model)
    dim = model.dim

    def f(_, y):
        return _rhs(h_eff, jumps, y.reshape(dim, dim)).ravel()

    sol = solve_ivp(f, (t[0], t[-1]), r0.ravel(), method=method, t_eval=t, rtol=rtol, atol=atol)
    if sol.status != 0:
        raise StiffnessError(f"integration failed: {sol.message}")
    space = model.space
    # integration error of order rtol shows up as small negative eigenvalues
    warn_tol = max(1e-9, 1e3 * rtol)
    return [DensityMatrix(_clamp(y.reshape(dim, dim), warn_tol), space, model.basis)
            for y in sol.y.T]


def liouvillian_matrix(model: LindbladModel) -> np.ndarray:
    """Dense superoperator acting on row-major vec(rho)."""
    dim = model.dim
    eye = np.eye(dim)
    h = model.H_matrix.toarray()
    sup = -1j * (np.kron(h, eye) - np.kron(eye, h.T))
    for m, rate in model.jump_matrices:
        m = m.toarray()
        mm = m.conj().T @ m
        sup += rate * (2 * np.kron(m, m.conj()) - np.kron(mm, eye) - np.kron(eye, mm.T))
    return sup


def steady_state(model: LindbladModel, max_dim: int = 64, tol: float = 1e-10):
    """Null space of the Liouvillian.

    Returns a single trace-normalised :class:`DensityMatrix` when the null
    space is one-dimensional, otherwise a list of basis matrices.
    """
    dim = model.dim
    if dim > max_dim:
        raise DimensionTooLargeError(f"dense Liouvillian for dim {dim} > {max_dim}; restrict the sector")
    ns = sla.null_space(liouvillian_matrix(model), rcond=tol)
    mats = [ns[:, k].reshape(dim, dim) for k in range(ns.shape[1])]
    if len(mats) == 1:
        r = mats[0]
        r = r / np.trace(r)
        r = 0.5 * (r + r.conj().T)
        return DensityMatrix(r, model.space, model.basis)
    return [DensityMatrix(m, model.space, model.basis) for m in mats]


def observables(rho, ops, basis: np.ndarray | None = None) -> list[complex]:
    if isinstance(rho, DensityMatrix) and basis is None:
        basis = rho.basis
    r = _as_rho(rho)
    out = []
    for op in ops:
        m = as_matrix(op, basis)
        if m.shape != r.shape:
            raise DimensionMismatchError(f"operator shape {m.shape} vs rho {r.shape}")
        out.append(complex(np.sum((m @ r).diagonal()) if sp.issparse(m) else np.trace(m @ r)))
    return out


def partial_trace(rho, keep: Sequence[int], dims: Sequence[int] | None = None) -> DensityMatrix:
    """Reduced density matrix on the subsystems ``keep`` (kept in sorted order)."""
    if isinstance(rho, DensityMatrix):
        space = rho.space
        r = rho.full_matrix() if rho.basis is not None else rho.matrix
    else:
        space, r = None, np.asarray(rho, dtype=complex)
    if dims is None:
        if space is None:
            raise ValueError("dims required when rho carries no FockSpace")
        dims = [space.d] * space.L
    dims = list(dims)
    n = len(dims)
    if int(np.prod(dims)) != r.shape[0]:
        raise DimensionMismatchError(f"dims {dims} do not match rho of size {r.shape[0]}")
    keep = sorted(keep)
    t = r.reshape(dims + dims)
    letters = "abcdefghijklmnopqrstuvwxyz"
    rows = list(letters[:n])
    cols = list(letters[n:2 * n])
    for k in range(n):
        if k not in keep:
            cols[k] = rows[k]
    out = "".join(rows[k] for k in keep) + "".join(cols[k] for k in keep)
    red = np.einsum("".join(rows) + "".join(cols) + "->" + out, t)
    dk = int(np.prod([dims[k] for k in keep]))
    return DensityMatrix(red.reshape(dk, dk))


def fidelity(rho, sigma) -> float:
    """Uhlmann fidelity; for a pure ``sigma`` given as a vector it is <psi|rho|psi>."""
    r = _as_rho(rho)
    s_arr = np.asarray(sigma.matrix if isinstance(sigma, DensityMatrix) else sigma, dtype=complex)
    if s_arr.ndim == 1:
        v = s_arr / np.linalg.norm(s_arr)
        return float(np.real(np.vdot(v, r @ v)))
    if s_arr.shape != r.shape:
        raise DimensionMismatchError("fidelity of matrices with different shapes")
    sq = sla.sqrtm(r)
    val = np.trace(sla.sqrtm(sq @ s_arr @ sq))
    return float(np.real(val) ** 2)


def trace_distance(rho, sigma) -> float:
    r, s = _as_rho(rho), _as_rho(sigma)
    if r.shape != s.shape:
        raise DimensionMismatchError("trace distance of matrices with different shapes")
    diff = r - s
    return float(0.5 * np.abs(np.linalg.eigvalsh(0.5 * (diff + diff.conj().T))).sum())
