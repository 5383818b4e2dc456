"""Matrix-product-state backend: two-site gates, non-Hermitian TEBD and jumps.

Tensors are stored as ``(left bond, physical, right bond)`` arrays. The state
is kept in mixed-canonical form around ``center``: sites to the left are left
isometries, sites to the right are right isometries, so the norm of the whole
state is the norm of the center tensor. States are not renormalised by
non-unitary gates; trajectories rely on the decaying norm to time their jumps.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from .fock import (
    FockSpace,
    InvalidDimensionError,
    LatticeOperator,
    OperatorSum,
    SiteRangeError,
    StateVector,
    site_operators,
)

log = logging.getLogger(__name__)


class NoChannelError(RuntimeError):
    """A jump was triggered but every channel has zero weight."""


def select_channel(weights: Sequence[float], u: float) -> int:
    """Index ``k`` with probability ``weights[k] / sum(weights)`` given uniform ``u``."""
    w = np.asarray(weights, dtype=float)
    cum = np.cumsum(w)
    if cum.size == 0 or not cum[-1] > 0:
        raise NoChannelError("jump triggered but all jump amplitudes vanish")
    k = int(np.searchsorted(cum, u * cum[-1], side="right"))
    return min(k, cum.size - 1)


def _real_if_possible(a) -> np.ndarray:
    """Drop an identically zero imaginary part; real tensors halve the SVD cost."""
    a = np.asarray(a)
    if not np.iscomplexobj(a):
        return a.astype(float)
    if not np.any(a.imag):
        return np.ascontiguousarray(a.real)
    return a.astype(complex)


def _svd(m: np.ndarray):
    """Thin SVD that skips identically zero rows and columns.

    Conserved local parities leave whole blocks of ``m`` exactly zero; pruning
    them is exact and shrinks the factorization.
    """
    rows = np.flatnonzero(np.any(m != 0, axis=1))
    cols = np.flatnonzero(np.any(m != 0, axis=0))
    if rows.size == 0 or (rows.size == m.shape[0] and cols.size == m.shape[1]):
        rows, cols = np.arange(m.shape[0]), np.arange(m.shape[1])
    sub = m[np.ix_(rows, cols)]
    try:
        us, s, vhs = np.linalg.svd(sub, full_matrices=False)
    except np.linalg.LinAlgError:
        us, s, vhs = sla.svd(sub, full_matrices=False, lapack_driver="gesvd")
    if rows.size == m.shape[0] and cols.size == m.shape[1]:
        return us, s, vhs
    u = np.zeros((m.shape[0], s.size), dtype=us.dtype)
    u[rows] = us
    vh = np.zeros((s.size, m.shape[1]), dtype=vhs.dtype)
    vh[:, cols] = vhs
    return u, s, vh


@dataclass(frozen=True, eq=False)
class TwoSiteGate:
    """A ``d^2 x d^2`` matrix acting on sites ``(bond, bond + 1)``."""

    matrix: np.ndarray
    bond: int
    label: str = ""
    unitary: bool = field(init=False)

    def __post_init__(self):
        m = _real_if_possible(self.matrix)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise InvalidDimensionError(f"gate must be square, got shape {m.shape}")
        d = int(round(np.sqrt(m.shape[0])))
        if d * d != m.shape[0]:
            raise InvalidDimensionError(f"gate size {m.shape[0]} is not a square d^2")
        object.__setattr__(self, "matrix", m)
        uni = np.allclose(m.conj().T @ m, np.eye(m.shape[0]), atol=1e-12)
        object.__setattr__(self, "unitary", bool(uni))

    @property
    def d(self) -> int:
        return int(round(np.sqrt(self.matrix.shape[0])))


@dataclass
class MPSState:
    tensors: list[np.ndarray]
    chi_max: int = 64
    svd_cutoff: float = 1e-10
    center: int = 0
    cumulative_truncation: float = 0.0

    def __post_init__(self):
        self.tensors = [_real_if_possible(t) for t in self.tensors]
        if not self.tensors:
            raise ValueError("an MPS needs at least one site")
        if self.tensors[0].shape[0] != 1 or self.tensors[-1].shape[2] != 1:
            raise ValueError("boundary bonds must have dimension 1")
        for a, b in zip(self.tensors, self.tensors[1:]):
            if a.shape[2] != b.shape[0]:
                raise ValueError("bond dimensions of neighbouring tensors disagree")
        if not 0 <= self.center < self.L:
            raise SiteRangeError(f"canonical center {self.center} outside the chain")

    @property
    def L(self) -> int:
        return len(self.tensors)

    @property
    def d(self) -> int:
        return self.tensors[0].shape[1]

    @property
    def bond_dims(self) -> list[int]:
        return [t.shape[2] for t in self.tensors[:-1]]

    def copy(self) -> "MPSState":
        return MPSState([t.copy() for t in self.tensors], self.chi_max, self.svd_cutoff,
                        self.center, self.cumulative_truncation)

    def norm(self) -> float:
        return float(np.linalg.norm(self.tensors[self.center]))

    def normalize(self) -> "MPSState":
        nrm = self.norm()
        if nrm == 0.0:
            raise ZeroDivisionError("cannot normalise a zero MPS")
        self.tensors[self.center] = self.tensors[self.center] / nrm
        return self

    def move_center(self, k: int) -> "MPSState":
        if not 0 <= k < self.L:
            raise SiteRangeError(f"site {k} outside [0, {self.L})")
        t = self.tensors
        while self.center < k:
            c = self.center
            a, s, b = t[c].shape
            q, r = np.linalg.qr(t[c].reshape(a * s, b))
            t[c] = q.reshape(a, s, q.shape[1])
            t[c + 1] = np.tensordot(r, t[c + 1], axes=(1, 0))
            self.center += 1
        while self.center > k:
            c = self.center
            a, s, b = t[c].shape
            q, r = np.linalg.qr(t[c].reshape(a, s * b).T)
            t[c] = q.T.reshape(q.shape[1], s, b)
            t[c - 1] = np.tensordot(t[c - 1], r.T, axes=(2, 0))
            self.center -= 1
        return self

    def check_canonical(self, tol: float = 1e-10) -> bool:
        for c, a in enumerate(self.tensors):
            if c < self.center:
                m = np.tensordot(a.conj(), a, axes=([0, 1], [0, 1]))
            elif c > self.center:
                m = np.tensordot(a.conj(), a, axes=([1, 2], [1, 2]))
            else:
                continue
            if np.abs(m - np.eye(m.shape[0])).max() > tol:
                return False
        return True

    # -- gates -------------------------------------------------------------

    def apply_two_site(self, gate: TwoSiteGate, chi_max: int | None = None,
                       svd_cutoff: float | None = None, direction: str = "right") -> "MPSState":
        """Contract ``gate`` into bond ``gate.bond`` and split it again by SVD.

        Singular values are dropped while the discarded fraction of the squared
        norm stays below ``svd_cutoff`` and at most ``chi_max`` are kept. The
        center ends on the right site for ``direction='right'``, else the left.
        """
        j = gate.bond
        if not 0 <= j < self.L - 1:
            raise SiteRangeError(f"bond {j} outside [0, {self.L - 1})")
        d = self.d
        if gate.d != d:
            raise InvalidDimensionError(f"gate local dimension {gate.d} != {d}")
        chi_max = self.chi_max if chi_max is None else chi_max
        svd_cutoff = self.svd_cutoff if svd_cutoff is None else svd_cutoff
        self.move_center(j if self.center <= j else j + 1)
        a, b = self.tensors[j], self.tensors[j + 1]
        chi_l, chi_r = a.shape[0], b.shape[2]
        theta = np.tensordot(a, b, axes=(2, 0))  # (l, s, t, r)
        g = gate.matrix.reshape(d, d, d, d)
        theta = np.tensordot(g, theta, axes=([2, 3], [1, 2])).transpose(2, 0, 1, 3)
        u, s, vh = _svd(theta.reshape(chi_l * d, d * chi_r))
        total = float(np.sum(s**2))
        keep = len(s)
        if total > 0.0:
            # tail[k] = weight discarded if only the first k values are kept
            tail = np.concatenate([np.cumsum((s**2)[::-1])[::-1], [0.0]]) / total
            keep = int(np.argmax(tail <= svd_cutoff))
        keep = max(1, min(keep, chi_max))
        discarded = float(np.sum(s[keep:] ** 2) / total) if total > 0.0 else 0.0
        self.cumulative_truncation += discarded
        u, s, vh = u[:, :keep], s[:keep], vh[:keep]
        if gate.unitary and discarded > 0.0:
            s = s * np.sqrt(total / np.sum(s**2))
        if direction == "right":
            self.tensors[j] = u.reshape(chi_l, d, keep)
            self.tensors[j + 1] = (s[:, None] * vh).reshape(keep, d, chi_r)
            self.center = j + 1
        else:
            self.tensors[j] = (u * s).reshape(chi_l, d, keep)
            self.tensors[j + 1] = vh.reshape(keep, d, chi_r)
            self.center = j
        return self

    def apply_one_site(self, op: np.ndarray, j: int) -> "MPSState":
        self.move_center(j)
        self.tensors[j] = np.tensordot(op, self.tensors[j], axes=(1, 1)).transpose(1, 0, 2)
        return self

    # -- measurement -------------------------------------------------------

    def expect_one_site(self, op: np.ndarray, j: int) -> complex:
        self.move_center(j)
        a = self.tensors[j]
        n2 = np.vdot(a, a).real
        return complex(np.vdot(a, np.tensordot(op, a, axes=(1, 1)).transpose(1, 0, 2)) / n2)

    def expect_two_site(self, local: np.ndarray, j: int) -> complex:
        """<O> for a ``d^2 x d^2`` operator on sites (j, j+1)."""
        self.move_center(j if self.center <= j else j + 1)
        d = self.d
        theta = np.tensordot(self.tensors[j], self.tensors[j + 1], axes=(2, 0))
        g = np.asarray(local).reshape(d, d, d, d)
        gt = np.tensordot(g, theta, axes=([2, 3], [1, 2])).transpose(2, 0, 1, 3)
        return complex(np.vdot(theta, gt) / np.vdot(theta, theta).real)

    def correlator_row(self, i: int, op_i: np.ndarray, op_j: np.ndarray,
                       j_max: int | None = None) -> np.ndarray:
        """``<op_i(i) op_j(j)>`` for every ``j`` in ``i+1 .. j_max`` in one sweep."""
        j_max = self.L - 1 if j_max is None else j_max
        if not 0 <= i < j_max < self.L:
            raise SiteRangeError(f"need 0 <= i < j_max < L, got i={i}, j_max={j_max}")
        self.move_center(i)
        n2 = self.norm() ** 2
        a = self.tensors[i]
        # env[b, b'] = sum conj(A[x, s, b]) O[s, s'] A[x, s', b']
        env = np.einsum("xsb,st,xtc->bc", a.conj(), op_i, a)
        out = np.empty(j_max - i, dtype=complex)
        for k in range(i + 1, j_max + 1):
            a = self.tensors[k]
            oa = np.tensordot(op_j, a, axes=(1, 1)).transpose(1, 0, 2)
            out[k - i - 1] = np.einsum("bc,bsr,csr->", env, a.conj(), oa)
            env = np.einsum("bc,bsr,csq->rq", env, a.conj(), a)
        return out / n2

    def to_dense(self) -> np.ndarray:
        psi = self.tensors[0]
        for t in self.tensors[1:]:
            psi = np.tensordot(psi, t, axes=(psi.ndim - 1, 0))
        return psi.reshape(-1)


def from_product_state(occupations: Sequence[int], space: FockSpace, chi_max: int = 64,
                       svd_cutoff: float = 1e-10) -> MPSState:
    if len(occupations) != space.L:
        raise ValueError(f"expected {space.L} occupations, got {len(occupations)}")
    tensors = []
    for n in occupations:
        if not 0 <= n <= space.n_max:
            raise InvalidDimensionError(f"occupation {n} outside [0, {space.n_max}]")
        t = np.zeros((1, space.d, 1))
        t[0, n, 0] = 1.0
        tensors.append(t)
    return MPSState(tensors, chi_max, svd_cutoff, 0)


def from_dense(psi, space: FockSpace, chi_max: int = 64, svd_cutoff: float = 1e-10) -> MPSState:
    """Exact (up to ``svd_cutoff``/``chi_max``) MPS of a dense vector; center on the last site."""
    v = np.asarray(psi, dtype=complex)
    if v.shape != (space.dim,):
        raise InvalidDimensionError(f"vector of length {v.shape} for dim {space.dim}")
    d, L = space.d, space.L
    tensors = []
    rest = v.reshape(1, -1)
    trunc = 0.0
    for _ in range(L - 1):
        chi = rest.shape[0]
        m = rest.reshape(chi * d, -1)
        u, s, vh = np.linalg.svd(m, full_matrices=False)
        total = float(np.sum(s**2))
        keep = len(s)
        if total > 0.0:
            tail = np.concatenate([np.cumsum((s**2)[::-1])[::-1], [0.0]]) / total
            keep = int(np.argmax(tail <= svd_cutoff))
        keep = max(1, min(keep, chi_max))
        if total > 0.0:
            trunc += float(np.sum(s[keep:] ** 2) / total)
        tensors.append(u[:, :keep].reshape(chi, d, keep))
        rest = s[:keep, None] * vh[:keep]
    tensors.append(rest.reshape(rest.shape[0], d, 1))
    return MPSState(tensors, chi_max, svd_cutoff, L - 1, trunc)


# ---------------------------------------------------------------------------
# Bond decomposition of H_eff and the Trotter plan

def _bond_local(op, space: FockSpace) -> tuple[int, np.ndarray]:
    """(bond, d^2 x d^2 matrix) of an operator supported on one or two adjacent sites."""
    if not isinstance(op, LatticeOperator):
        raise TypeError("bond decomposition needs LatticeOperator terms")
    sup = op.support
    n_bonds = space.L - 1
    if n_bonds < 1:
        raise ValueError("bond decomposition needs L >= 2")
    if len(sup) == 1:
        j = min(sup[0], n_bonds - 1)
    elif len(sup) == 2 and sup[1] == sup[0] + 1:
        j = sup[0]
    else:
        raise ValueError(f"operator {op.label!r} with support {sup} is not bond-local")
    return j, op.on((j, j + 1))


def _terms(op) -> list[LatticeOperator]:
    if op is None:
        return []
    if isinstance(op, OperatorSum):
        return list(op.terms)
    return [op]


@dataclass
class TrotterPlan:
    """Second-order even/odd/even gate layers of ``exp(-i H_eff dt)`` plus bond-local jumps."""

    space: FockSpace
    dt: float
    layers: list[list[TwoSiteGate]]
    channels: list[tuple[int, np.ndarray, float]]

    @property
    def channel_weight_ops(self) -> list[np.ndarray]:
        return [m.conj().T @ m for _, m, _ in self.channels]


def bond_heff_locals(model) -> list[np.ndarray]:
    """Per-bond pieces of H_eff = H - i sum_k kappa_k l_k^dag l_k (on-site terms go to one bond)."""
    space = model.space
    if space is None or model.basis is not None:
        raise ValueError("bond decomposition needs an unrestricted lattice model")
    if space.periodic:
        raise ValueError("Trotter layers are defined for open chains only")
    d = space.d
    locs = [np.zeros((d * d, d * d), dtype=complex) for _ in range(space.L - 1)]
    for term in _terms(model.H):
        j, m = _bond_local(term, space)
        locs[j] += m
    for op, rate in model.jumps:
        j, m = _bond_local(op, space)
        locs[j] += -1j * rate * (m.conj().T @ m)
    return locs


def build_trotter_plan(model, dt: float) -> TrotterPlan:
    space = model.space
    locs = bond_heff_locals(model)
    n_bonds = len(locs)
    even = [j for j in range(0, n_bonds, 2)]
    odd = [j for j in range(1, n_bonds, 2)]

    def layer(bonds, tau, label):
        return [TwoSiteGate(sla.expm(-1j * tau * locs[j]), j, f"{label}_{j}") for j in bonds]

    layers = [layer(even, dt / 2, "even"), layer(odd, dt, "odd")[::-1], layer(even, dt / 2, "even")]
    layers = [lay for lay in layers if lay]
    channels = [(*_bond_local(op, space), rate) for op, rate in model.jumps]
    return TrotterPlan(space, dt, layers, channels)


def _apply_layer(state: MPSState, gates: Sequence[TwoSiteGate]) -> None:
    """Apply mutually disjoint gates, sweeping away from the current center."""
    gates = sorted(gates, key=lambda g: g.bond)
    if abs(state.center - gates[0].bond) <= abs(state.center - gates[-1].bond - 1):
        for gate in gates:
            state.apply_two_site(gate, direction="right")
    else:
        for gate in reversed(gates):
            state.apply_two_site(gate, direction="left")


def trotter_step(state: MPSState, plan: TrotterPlan) -> MPSState:
    for lay in plan.layers:
        _apply_layer(state, lay)
    return state


def _layer_norm_sq(state: MPSState, gates: Sequence[TwoSiteGate]) -> float:
    """||G psi||^2 for a product G of disjoint two-site gates, by one transfer sweep."""
    d = state.d
    ops = {g.bond: (g.matrix.conj().T @ g.matrix).reshape(d, d, d, d) for g in gates}
    t = state.tensors
    env = np.ones((1, 1))
    site = 0
    while site < state.L:
        if site in ops:
            theta = np.tensordot(t[site], t[site + 1], axes=(2, 0))
            gt = np.tensordot(ops[site], theta, axes=([2, 3], [1, 2])).transpose(2, 0, 1, 3)
            env = np.tensordot(theta.conj(), np.tensordot(env, gt, axes=(1, 0)),
                               axes=([0, 1, 2], [0, 1, 2]))
            site += 2
        else:
            a = t[site]
            env = np.tensordot(a.conj(), np.tensordot(env, a, axes=(1, 0)), axes=([0, 1], [0, 1]))
            site += 1
    return float(env[0, 0].real)


class TebdIntegrator:
    """Repeated Trotter steps with the trailing half layer held back.

    For an even/odd/even plan the last half layer of one step and the first of
    the next multiply to a single full layer, so it is only applied on demand:
    :meth:`step` returns the squared norm the completed step would have, and
    :meth:`materialize` applies the deferred layer (needed before jumps and
    measurements). Results agree with :func:`trotter_step` up to rounding.
    """

    def __init__(self, state: MPSState, plan: TrotterPlan):
        self.state, self.plan = state, plan
        self.pending = False
        lay = plan.layers
        self.fusable = (len(lay) == 3
                        and [g.bond for g in lay[0]] == [g.bond for g in lay[2]]
                        and all(np.array_equal(a.matrix, b.matrix) for a, b in zip(lay[0], lay[2])))
        if self.fusable:
            self.fused = [TwoSiteGate(a.matrix @ b.matrix, a.bond, a.label + "_fused")
                          for a, b in zip(lay[0], lay[2])]

    def step(self) -> float:
        if not self.fusable:
            trotter_step(self.state, self.plan)
            return self.state.norm() ** 2
        _apply_layer(self.state, self.fused if self.pending else self.plan.layers[0])
        _apply_layer(self.state, self.plan.layers[1])
        self.pending = True
        return _layer_norm_sq(self.state, self.plan.layers[2])

    def materialize(self) -> MPSState:
        if self.pending:
            _apply_layer(self.state, self.plan.layers[2])
            self.pending = False
        return self.state


def jump_weights(state: MPSState, plan: TrotterPlan) -> np.ndarray:
    """kappa_k ||l_k psi||^2 for every channel (unnormalised psi)."""
    n2 = state.norm() ** 2
    return np.array([rate * state.expect_two_site(m.conj().T @ m, j).real * n2
                     for j, m, rate in plan.channels])


def apply_jump(state: MPSState, plan: TrotterPlan, k: int) -> MPSState:
    j, m, _ = plan.channels[k]
    state.apply_two_site(TwoSiteGate(m, j, f"jump_{k}"))
    return state.normalize()


def tebd_trajectory_step(state: MPSState, plan: TrotterPlan, rng: np.random.Generator,
                         threshold: float) -> tuple[MPSState, int | None, float]:
    """One Trotter step of ``exp(-i H_eff dt)`` followed by the norm-threshold jump test.

    Returns the state, the index of the channel that fired (or None) and the
    threshold to use from now on.
    """
    trotter_step(state, plan)
    if state.norm() ** 2 >= threshold:
        return state, None, threshold
    k = select_channel(jump_weights(state, plan), rng.random())
    apply_jump(state, plan, k)
    return state, k, rng.random()


# ---------------------------------------------------------------------------
# Observables

def _site_pair_ops(d: int, order: str) -> tuple[np.ndarray, np.ndarray]:
    s = site_operators(d)
    if order == "single":
        return s["adag"], s["a"]
    if order == "pair":
        return s["adag2"], s["a2"]
    raise ValueError(f"order must be 'single' or 'pair', got {order!r}")


def correlator(state: MPSState, i: int, j: int, order: str = "single") -> complex:
    """<a^dag_i a_j> or <a^dag2_i a^2_j> by transfer contraction."""
    for s in (i, j):
        if not 0 <= s < state.L:
            raise SiteRangeError(f"site {s} outside [0, {state.L})")
    cre, ann = _site_pair_ops(state.d, order)
    if i == j:
        return state.expect_one_site(cre @ ann, i)
    if i < j:
        return complex(state.correlator_row(i, cre, ann, j)[-1])
    return complex(state.correlator_row(j, ann, cre, i)[-1])


def correlation_matrix(state: MPSState, order: str = "single") -> np.ndarray:
    """Hermitian matrix ``C[i, j] = <cre_i ann_j>`` from one transfer sweep per row."""
    cre, ann = _site_pair_ops(state.d, order)
    L = state.L
    c = np.empty((L, L), dtype=complex)
    for i in range(L):
        c[i, i] = state.expect_one_site(cre @ ann, i)
        if i < L - 1:
            c[i, i + 1:] = state.correlator_row(i, cre, ann)
            c[i + 1:, i] = c[i, i + 1:].conj()
    return c


def measure(state: MPSState, kind: str, sites: Sequence[int] = ()) -> complex:
    """Expectation of a named observable: single, pair, n, parity, number_total, defect_density."""
    s = site_operators(state.d)
    if kind in ("single", "pair"):
        i, j = sites
        return correlator(state, i, j, kind)
    if kind in ("n", "parity"):
        (j,) = sites
        if not 0 <= j < state.L:
            raise SiteRangeError(f"site {j} outside [0, {state.L})")
        return state.expect_one_site(s["n"] if kind == "n" else s["P"], j)
    if kind == "number_total":
        return sum(state.expect_one_site(s["n"], j) for j in range(state.L))
    if kind == "defect_density":
        odd = (s["id"] - s["P"]) / 2
        return sum(state.expect_one_site(odd, j) for j in range(state.L)) / state.L
    raise ValueError(f"unknown observable kind {kind!r}")


def overlap_dense(state: MPSState, psi: np.ndarray | StateVector) -> complex:
    return complex(np.vdot(np.asarray(psi), state.to_dense()))
