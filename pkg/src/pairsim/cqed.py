"""Two-cavity circuit-QED building block and its reduction to a pair jump.

Tensor factors, in this order: cavity L, cavity R (each ``n_max + 1``
levels), the anharmonic oscillator ``(g, e, f)`` and, optionally, the
auxiliary two-level system ``(0, 1)``. The rotating-frame Hamiltonian is

    H = V_kerr + delta1 |e><e| + delta2 |1><1|
        + [g1 T_- |e><g| + g2 T_+^dag |f><e| + g3 T_+ |1><0| + h.c.]

with ``T_pm = a_L^2 pm a_R^2`` and the decay ``|g><f|`` (coefficient
``kappa_f``, factor-2 dissipator). For ``|delta| >> |g|`` the generator

    S = -(g1/delta1) T_- |e><g| + (g2/delta1) T_+^dag |f><e|
        - (g3/delta2) T_+ |1><0| - h.c.

removes the couplings at first order and leaves ``H0 + [V, S]/2``, whose
``{f, g}`` block is ``-(1/delta1)`` times the outer product of
``g2 T_+^dag`` and ``g1 T_-``. Eliminating ``|f>`` for large ``kappa_f``
then gives the jump ``T_+^dag T_-`` (the two-site pair jump) with
coefficient ``|g1 g2/delta1|^2 / kappa_f``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from .fock import FockSpace, pair_jump, site_operators
from .lindblad import DensityMatrix, LindbladModel, evolve, partial_trace, trace_distance

log = logging.getLogger(__name__)

G, E, F = 0, 1, 2


class HierarchyWarning(UserWarning):
    pass


class DimensionBudgetError(ValueError):
    pass


@dataclass(frozen=True)
class CqedParams:
    n_max: int = 2
    g1: complex = 1.0
    g2: complex = 1.0
    g3: complex = 0.0
    delta1: float = 20.0
    delta2: float = 20.0
    chi: float = 0.0
    chi_a_an: float = 0.0
    chi_a_t: float = 0.0
    kappa_f: float = 1.0
    include_tls: bool = False
    kappa_tls: float = 0.0

    def __post_init__(self):
        if self.n_max < 2:
            raise ValueError("pair processes need n_max >= 2")
        if not self.kappa_f > 0:
            raise ValueError(f"kappa_f must be positive, got {self.kappa_f}")
        if self.kappa_tls < 0:
            raise ValueError(f"kappa_tls must be >= 0, got {self.kappa_tls}")
        if self.delta1 == 0 or (self.include_tls and self.delta2 == 0):
            raise ValueError("detunings must be non-zero")

    def hierarchy(self) -> dict[str, float]:
        """delta/g and kappa_f delta/g^2 ratios (large is good)."""
        g = max(abs(self.g1), abs(self.g2))
        if g == 0:
            out = {"delta1/g": np.inf, "kappa_f*delta1/g^2": np.inf}
        else:
            out = {"delta1/g": abs(self.delta1) / g,
                   "kappa_f*delta1/g^2": self.kappa_f * abs(self.delta1) / g**2}
        if self.include_tls and self.g3 != 0:
            out["delta2/g3"] = abs(self.delta2) / abs(self.g3)
        return out


@dataclass(frozen=True)
class CompositeSpace:
    n_max: int
    include_tls: bool = False

    @property
    def dims(self) -> list[int]:
        d = self.n_max + 1
        return [d, d, 3] + ([2] if self.include_tls else [])

    @property
    def dim(self) -> int:
        return int(np.prod(self.dims))

    def embed(self, factors: dict[int, np.ndarray]) -> np.ndarray:
        out = np.ones((1, 1))
        for k, d in enumerate(self.dims):
            out = np.kron(out, factors.get(k, np.eye(d)))
        return out

    def cavity(self, op: np.ndarray) -> np.ndarray:
        """A two-cavity operator (on the L x R product) lifted to the full space."""
        rest = int(np.prod(self.dims[2:]))
        return np.kron(op, np.eye(rest))


def _ket(k: int, d: int) -> np.ndarray:
    v = np.zeros(d)
    v[k] = 1.0
    return v


def _proj(i: int, j: int, d: int) -> np.ndarray:
    return np.outer(_ket(i, d), _ket(j, d))


def cavity_operators(n_max: int) -> dict[str, np.ndarray]:
    """T_-, T_+, total number and sum of a^dag2 a^2 on the two-cavity space."""
    s = site_operators(n_max + 1)
    i = s["id"]
    a2l, a2r = np.kron(s["a2"], i), np.kron(i, s["a2"])
    return {
        "T-": a2l - a2r,
        "T+": a2l + a2r,
        "N": np.kron(s["n"], i) + np.kron(i, s["n"]),
        "K": np.kron(s["adag2"] @ s["a2"], i) + np.kron(i, s["adag2"] @ s["a2"]),
    }


def _pieces(p: CqedParams):
    """(space, H0, V, S) with H0 the diagonal/Kerr part and V the couplings."""
    cs = CompositeSpace(p.n_max, p.include_tls)
    c = cavity_operators(p.n_max)
    h0 = cs.cavity(-p.chi * c["K"])
    h0 = h0 + p.delta1 * cs.embed({2: _proj(E, E, 3)})
    h0 = h0 - p.chi_a_an * cs.cavity(c["N"]) @ cs.embed({2: _proj(E, E, 3) + 2 * _proj(F, F, 3)})
    x1 = p.g1 * cs.cavity(c["T-"]) @ cs.embed({2: _proj(E, G, 3)})
    x2 = p.g2 * cs.cavity(c["T+"].conj().T) @ cs.embed({2: _proj(F, E, 3)})
    s = -(x1 / p.delta1) + (x2 / p.delta1)
    v = x1 + x2
    if p.include_tls:
        h0 = h0 + p.delta2 * cs.embed({3: _proj(1, 1, 2)})
        h0 = h0 - p.chi_a_t * cs.cavity(c["N"]) @ cs.embed({3: _proj(1, 1, 2)})
        x3 = p.g3 * cs.cavity(c["T+"]) @ cs.embed({3: _proj(1, 0, 2)})
        v = v + x3
        s = s - x3 / p.delta2
    v = v + v.conj().T
    s = s - s.conj().T
    return cs, h0.astype(complex), v.astype(complex), s.astype(complex)


def build_full_model(p: CqedParams) -> LindbladModel:
    cs, h0, v, _ = _pieces(p)
    jumps = [(cs.embed({2: _proj(G, F, 3)}).astype(complex), p.kappa_f)]
    if p.include_tls and p.kappa_tls > 0:
        jumps.append((cs.embed({3: _proj(0, 1, 2)}).astype(complex), p.kappa_tls))
    return LindbladModel(h0 + v, jumps)


def _low_block(p: CqedParams, m: np.ndarray, row: int, col: int) -> np.ndarray:
    """Cavity operator <row| m |col> of the oscillator, with the TLS in |0>."""
    cs = CompositeSpace(p.n_max, p.include_tls)
    d = (p.n_max + 1) ** 2
    t = m.reshape(d, *cs.dims[2:], d, *cs.dims[2:])
    if p.include_tls:
        return t[:, row, 0, :, col, 0]
    return t[:, row, :, col]


def predicted_block(p: CqedParams) -> np.ndarray:
    """Closed-form {f, g} block of the second-order effective Hamiltonian.

    Returned as a ``2 D x 2 D`` matrix in the (f, g) ordering, D the
    two-cavity dimension; includes the cavity Kerr terms and, when the TLS is
    present, its ``-(|g3|^2/delta2) T_+^dag T_+`` shift.
    """
    c = cavity_operators(p.n_max)
    tm, tp = c["T-"], c["T+"]
    base = -p.chi * c["K"]
    if p.include_tls:
        base = base - abs(p.g3) ** 2 / p.delta2 * tp.conj().T @ tp
    ff = base - 2 * p.chi_a_an * c["N"] - abs(p.g2) ** 2 / p.delta1 * tp.conj().T @ tp
    gg = base - abs(p.g1) ** 2 / p.delta1 * tm.conj().T @ tm
    fg = -(p.g1 * p.g2 / p.delta1) * tp.conj().T @ tm
    return np.block([[ff, fg], [fg.conj().T, gg]])


@dataclass(frozen=True)
class SWReport:
    deviation: float
    second_order_deviation: float
    hierarchy: dict
    block: np.ndarray


def schrieffer_wolff_check(p: CqedParams) -> SWReport:
    """Transform H with ``exp(-S)`` exactly and compare its {f, g} block with the closed form.

    ``deviation`` is the max-norm residual of the exact transform;
    ``second_order_deviation`` compares the closed form with ``H0 + [V, S]/2``
    computed from the same matrices and should vanish to rounding.
    """
    h = p.hierarchy()
    if h["delta1/g"] < 10:
        warnings.warn(f"weak hierarchy: |delta1|/g = {h['delta1/g']:.3g} < 10", HierarchyWarning,
                      stacklevel=2)
    _, h0, v, s = _pieces(p)
    u = sla.expm(s)
    ht = sla.expm(-s) @ (h0 + v) @ u
    second = h0 + 0.5 * (v @ s - s @ v)

    def fg_block(m):
        return np.block([[_low_block(p, m, F, F), _low_block(p, m, F, G)],
                         [_low_block(p, m, G, F), _low_block(p, m, G, G)]])

    target = predicted_block(p)
    block = fg_block(ht)
    return SWReport(float(np.abs(block - target).max()),
                    float(np.abs(fg_block(second) - target).max()), h, block)


def effective_jump_from_full(p: CqedParams) -> np.ndarray:
    """The cavity operator multiplying |f><g| in H0 + [V, S]/2, computed from the full matrices."""
    _, h0, v, s = _pieces(p)
    second = h0 + 0.5 * (v @ s - s @ v)
    return _low_block(p, second, F, G)


def scale_matched_distance(a: np.ndarray, b: np.ndarray) -> tuple[float, complex]:
    """min_c max|a - c b| with c the least-squares scale; returns (residual, c)."""
    b_flat = b.ravel()
    c = np.vdot(b_flat, a.ravel()) / np.vdot(b_flat, b_flat)
    return float(np.abs(a - c * b).max()), complex(c)


def effective_rate(p: CqedParams) -> float:
    """Coefficient of the eliminated pair jump in the factor-2 dissipator."""
    return abs(p.g1 * p.g2 / p.delta1) ** 2 / p.kappa_f


def effective_hamiltonian(p: CqedParams) -> np.ndarray:
    c = cavity_operators(p.n_max)
    h = -p.chi * c["K"] - abs(p.g1) ** 2 / p.delta1 * c["T-"].conj().T @ c["T-"]
    if p.include_tls:
        h = h - abs(p.g3) ** 2 / p.delta2 * c["T+"].conj().T @ c["T+"]
    return h.astype(complex)


def build_effective_model(p: CqedParams) -> LindbladModel:
    """Two-cavity model with the |e>, |f> (and TLS) levels eliminated."""
    space = FockSpace(2, p.n_max)
    jumps = []
    rate = effective_rate(p)
    if rate > 0:
        jumps.append((pair_jump(0, space), rate))
    h = effective_hamiltonian(p)
    return LindbladModel(h if np.abs(h).max() > 0 else None, jumps, space)


def kerr_cancelling_params(chi: float, g1: complex = 1.0, g2: complex = 1.0, g3: complex = 1.0,
                           **kw) -> CqedParams:
    """Parameters with |g1|^2/delta1 = |g3|^2/delta2 = -chi/2, where all Kerr terms cancel."""
    if not chi > 0:
        raise ValueError("Kerr cancellation needs chi > 0")
    d1 = -2 * abs(g1) ** 2 / chi
    d2 = -2 * abs(g3) ** 2 / chi
    return CqedParams(g1=g1, g2=g2, g3=g3, delta1=d1, delta2=d2, chi=chi, include_tls=True, **kw)


@dataclass(frozen=True)
class ReductionResult:
    times: np.ndarray
    distances: np.ndarray
    excited_population: np.ndarray

    @property
    def max_distance(self) -> float:
        return float(self.distances.max())


def reduction_error(p: CqedParams, t_grid: Sequence[float], rho0_cavities, max_dim: int = 400,
                    rtol: float = 1e-9, atol: float = 1e-12) -> ReductionResult:
    """Trace distance between full (traced to cavities) and effective cavity dynamics."""
    cs = CompositeSpace(p.n_max, p.include_tls)
    if cs.dim > max_dim:
        raise DimensionBudgetError(f"full dimension {cs.dim} exceeds {max_dim}")
    r0 = np.asarray(rho0_cavities.matrix if isinstance(rho0_cavities, DensityMatrix) else rho0_cavities,
                    dtype=complex)
    if r0.ndim == 1:
        r0 = np.outer(r0, r0.conj()) / np.vdot(r0, r0).real
    anc = _proj(G, G, 3)
    if p.include_tls:
        anc = np.kron(anc, _proj(0, 0, 2))
    full0 = np.kron(r0, anc)
    t = np.asarray(t_grid, dtype=float)
    full = evolve(build_full_model(p), full0, t, rtol=rtol, atol=atol)
    eff = evolve(build_effective_model(p), r0, t, rtol=rtol, atol=atol)
    excited = cs.embed({2: _proj(E, E, 3) + _proj(F, F, 3)})
    dist = np.array([trace_distance(partial_trace(rf, [0, 1], cs.dims), re)
                     for rf, re in zip(full, eff)])
    pop = np.array([np.real(np.trace(excited @ rf.matrix)) for rf in full])
    return ReductionResult(t, dist, pop)
