"""Figures of merit: fidelity, entanglement, quadrature fluctuations, Wigner maps.

Quadrature convention: X_phi = (O e^{+i phi} + O^dag e^{-i phi}) / 2 and
Y_phi = X_{phi + pi/2}. With this sign a positive two-photon pump
q (O^dag^2 + O^2) squeezes the phi = -pi/4 quadrature of the pumped mode,
which fixes the measurement axes used by the synchronization scenarios.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import eval_genlaguerre, gammaln

from . import hilbert as hs
from .errors import NumericValidityError, SpaceMismatchError, SpaceShapeError

_EIG_FLOOR = -1e-10


def _clamped_sqrt(w: np.ndarray, context: str) -> np.ndarray:
    if w.min() < _EIG_FLOOR:
        raise NumericValidityError(
            f"{context}: eigenvalue {w.min():.3e} below the {_EIG_FLOOR} floor"
        )
    return np.sqrt(np.clip(w, 0.0, None))


def fidelity(a: hs.QState, b: hs.QState) -> float:
    """Uhlmann fidelity Tr sqrt(sqrt(r1) r2 sqrt(r1)), symmetric in its arguments."""
    if a.space.dims != b.space.dims:
        raise SpaceMismatchError(
            f"states live on different spaces: {a.space.dims} vs {b.space.dims}"
        )
    if a.kind == hs.VECTOR and b.kind == hs.VECTOR:
        return min(1.0, abs(complex(np.vdot(a.data, b.data))))
    if a.kind == hs.VECTOR or b.kind == hs.VECTOR:
        psi, rho = (a, b) if a.kind == hs.VECTOR else (b, a)
        val = float(np.real(np.vdot(psi.data, rho.data @ psi.data)))
        if val < _EIG_FLOOR:
            raise NumericValidityError(f"<psi|rho|psi> = {val:.3e} is negative")
        return min(1.0, math.sqrt(max(val, 0.0)))
    w, v = np.linalg.eigh(a.data)
    sq = (v * _clamped_sqrt(w, "fidelity sqrt(rho1)")) @ v.conj().T
    m = sq @ b.data @ sq
    lam = np.linalg.eigvalsh(0.5 * (m + m.conj().T))
    return min(1.0, float(np.sum(_clamped_sqrt(lam, "fidelity spectrum"))))


def fidelity_on_mode(state: hs.QState, mode: int | str, reference: hs.QState) -> float:
    """Fidelity between one reduced mode of `state` and a single-mode reference."""
    idx = state.space.index(mode) if isinstance(mode, str) else mode
    reduced = hs.partial_trace(state, [idx])
    if len(reference.space.parts) != 1:
        raise SpaceShapeError("reference must live on a single mode")
    return fidelity(reduced, reference)


def negativity(rho: hs.QState, part: int = 0) -> float:
    """Entanglement negativity of a bipartite density matrix."""
    if len(rho.space.parts) != 2:
        raise SpaceShapeError(
            f"negativity needs a two-subsystem state, got {len(rho.space.parts)} parts"
        )
    pt = hs.partial_transpose(rho.to_density(), part)
    lam = hs.eig_hermitian(pt)
    return float(np.sum((np.abs(lam) - lam) / 2.0))


def _contangle(rho: hs.QState, part: int) -> float:
    """Squared log2 trace norm of the partial transpose."""
    pt = hs.partial_transpose(rho.to_density(), part)
    return float(np.log2(hs.trace_norm(pt)) ** 2)


@dataclass(frozen=True)
class ContangleResult:
    minimum: float
    residual_by_root: dict
    joint_by_root: dict
    pair: dict


def residual_contangle(rho: hs.QState) -> ContangleResult:
    """Minimum residual contangle of a three-subsystem state.

    For each root A the residual is E(A|BC) - E(A|B) - E(A|C); the minimum
    over the root choice is returned, with the per-root breakdown attached.
    Small negative residuals are reported as computed, never clamped.
    """
    if len(rho.space.parts) != 3:
        raise SpaceShapeError(
            f"residual contangle needs a three-subsystem state, got {len(rho.space.parts)}"
        )
    rho = rho.to_density()
    labels = rho.space.labels
    residual = {}
    joint = {}
    pair = {}
    for root in range(3):
        others = [i for i in range(3) if i != root]
        e_joint = _contangle(rho, root)
        e_pairs = []
        for other in others:
            keep = tuple(sorted((root, other)))
            reduced = hs.partial_trace(rho, keep)
            e = _contangle(reduced, keep.index(root))
            pair[(labels[root], labels[other])] = e
            e_pairs.append(e)
        joint[labels[root]] = e_joint
        residual[labels[root]] = e_joint - sum(e_pairs)
    return ContangleResult(
        minimum=min(residual.values()),
        residual_by_root=residual,
        joint_by_root=joint,
        pair=pair,
    )


@dataclass(frozen=True)
class QuadratureSpec:
    mode: int | str
    phase: float = 0.0
    which: str = "X"

    def __post_init__(self):
        if self.which not in ("X", "Y"):
            raise ValueError("quadrature must be 'X' or 'Y'")


def _single_mode(state: hs.QState, mode: int | str) -> hs.QState:
    if len(state.space.parts) == 1:
        reduced = state
        part = state.space.parts[0]
    else:
        idx = state.space.index(mode) if isinstance(mode, str) else int(mode)
        part = state.space.parts[idx]
        reduced = hs.partial_trace(state, [idx])
    if part.kind != hs.BOSON:
        raise ValueError(f"quadratures are defined for bosonic modes, not {part.label!r}")
    return reduced


def quadrature_operator(truncation: int, phase: float, which: str = "X") -> np.ndarray:
    o = hs.destroy(truncation).to_dense()
    if which == "X":
        return (o * np.exp(1j * phase) + o.conj().T * np.exp(-1j * phase)) / 2.0
    return (o * np.exp(1j * phase) - o.conj().T * np.exp(-1j * phase)) / 2.0j


def quadrature_variance(state: hs.QState, spec: QuadratureSpec) -> float:
    """<Q^2> - <Q>^2 of a phase-rotated quadrature on one reduced mode."""
    reduced = _single_mode(state, spec.mode)
    q = quadrature_operator(reduced.dim, spec.phase, spec.which)
    rho = reduced.to_density().data
    m1 = float(np.real(np.trace(q @ rho)))
    m2 = float(np.real(np.trace(q @ q @ rho)))
    return m2 - m1 * m1


# ---------------------------------------------------------------------------
# Wigner function


@dataclass(frozen=True)
class WignerSpec:
    x_range: tuple[float, float] = (-4.0, 4.0)
    p_range: tuple[float, float] = (-4.0, 4.0)
    resolution: int = 128


@dataclass
class WignerGrid:
    x: np.ndarray
    p: np.ndarray
    values: np.ndarray  # shape (len(p), len(x))

    def integral(self) -> float:
        dx = self.x[1] - self.x[0] if len(self.x) > 1 else 1.0
        dp = self.p[1] - self.p[0] if len(self.p) > 1 else 1.0
        return float(np.sum(self.values) * dx * dp)


_kernel_cache: dict = {}
_KERNEL_CACHE_MAX = 4


def _displacement_elements(beta: np.ndarray, dim: int) -> np.ndarray:
    """<m|D(beta)|n> for a grid of displacements; shape (grid, dim, dim)."""
    absb2 = np.abs(beta) ** 2
    out = np.empty(beta.shape + (dim, dim), dtype=np.complex128)
    lg = gammaln(np.arange(dim + 1) + 1.0)  # log n!
    for m in range(dim):
        for n in range(dim):
            k, d = (m, n) if m >= n else (n, m)
            # k = max, d = min; order of the associated Laguerre polynomial
            diff = k - d
            pref = math.exp(0.5 * (lg[d] - lg[k]))
            lag = eval_genlaguerre(d, diff, absb2)
            if m >= n:
                val = pref * beta**diff * lag
            else:
                val = pref * (-np.conj(beta)) ** diff * lag
            out[..., m, n] = val * np.exp(-0.5 * absb2)
    return out


def _wigner_kernel(dim: int, x: np.ndarray, p: np.ndarray) -> np.ndarray:
    key = (dim, x.tobytes(), p.tobytes())
    if key in _kernel_cache:
        return _kernel_cache[key]
    xx, pp = np.meshgrid(x, p)
    alpha = (xx + 1j * pp) / math.sqrt(2.0)
    d = _displacement_elements(2.0 * alpha, dim)
    parity = (-1.0) ** np.arange(dim)
    kernel = d * parity[np.newaxis, np.newaxis, np.newaxis, :] / math.pi
    if len(_kernel_cache) >= _KERNEL_CACHE_MAX:
        _kernel_cache.pop(next(iter(_kernel_cache)))
    _kernel_cache[key] = kernel
    return kernel


def wigner(state: hs.QState, spec: WignerSpec = WignerSpec()) -> WignerGrid:
    """Wigner quasi-probability map of a single-mode state.

    Grid coordinates are scaled so the vacuum peaks at 1/pi and the map
    integrates to one over the plane.
    """
    if len(state.space.parts) != 1:
        raise SpaceShapeError("wigner needs a single-mode state; reduce first")
    rho = state.to_density().data
    dim = state.dim
    x = np.linspace(*spec.x_range, spec.resolution)
    p = np.linspace(*spec.p_range, spec.resolution)
    kernel = _wigner_kernel(dim, x, p)
    vals = np.einsum("pqmn,nm->pq", kernel, rho)
    resid = float(np.max(np.abs(vals.imag)))
    if resid > 1e-9:
        raise NumericValidityError(f"Wigner imaginary residue {resid:.3e} exceeds 1e-9")
    return WignerGrid(x, p, vals.real)


# ---------------------------------------------------------------------------
# basis populations


def population(state: hs.QState, label: Sequence[int]) -> float:
    """Probability of one product basis ket |n_a1, n_a2, n_c1, n_b, n_c2>."""
    idx = state.space.basis_index(label)
    if state.kind == hs.VECTOR:
        return float(np.abs(state.data[idx]) ** 2)
    return float(np.real(state.data[idx, idx]))


def occupation_marginal(state: hs.QState, mode: int | str, n: int) -> float:
    """Total population of all basis states with the given occupation on one mode."""
    idx = state.space.index(mode) if isinstance(mode, str) else int(mode)
    dims = state.space.dims
    if not (0 <= n < dims[idx]):
        raise ValueError(f"occupation {n} out of range for mode {mode!r}")
    if state.kind == hs.VECTOR:
        t = state.data.reshape(dims)
        sl = np.take(t, n, axis=idx)
        return float(np.sum(np.abs(sl) ** 2))
    diag = np.real(np.diagonal(state.data)).reshape(dims)
    return float(np.sum(np.take(diag, n, axis=idx)))
