"""Tensor-product Hilbert spaces and sparse operator algebra.

Subsystems are laid out in a fixed order; the full-space index of a basis
ket |n_0, n_1, ...> is the row-major (big-endian) mixed-radix encoding of
the per-subsystem quantum numbers, i.e. the first subsystem varies slowest.
Operators are stored sparse (CSR), states dense.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import (
    NumericValidityError,
    SpaceMismatchError,
    SpaceShapeError,
    WrongKindError,
)

ATOM = "atom"
BOSON = "boson"

VECTOR = "vector"
DENSITY = "density"

#: construction-time validation tolerances
NORM_TOL = 1e-9
TRACE_TOL = 1e-9
HERM_TOL = 1e-9
POSITIVITY_TOL = -1e-8


@dataclass(frozen=True)
class SubsystemSpec:
    """One tensor factor: an atom with `dim` levels or a boson truncated to `dim` Fock states."""

    kind: str
    dim: int
    label: str

    def __post_init__(self):
        if self.kind not in (ATOM, BOSON):
            raise ValueError(f"unknown subsystem kind {self.kind!r}")
        if self.dim < 2:
            raise ValueError(f"subsystem {self.label!r} needs dim >= 2, got {self.dim}")


def atom(levels: int, label: str) -> SubsystemSpec:
    return SubsystemSpec(ATOM, levels, label)


def boson(truncation: int, label: str) -> SubsystemSpec:
    return SubsystemSpec(BOSON, truncation, label)


@dataclass(frozen=True)
class CompositeSpace:
    """Ordered tensor product of subsystems."""

    parts: tuple[SubsystemSpec, ...]

    def __post_init__(self):
        labels = [p.label for p in self.parts]
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate subsystem labels: {labels}")
        if not self.parts:
            raise ValueError("space needs at least one subsystem")

    @property
    def dim(self) -> int:
        return math.prod(p.dim for p in self.parts)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(p.dim for p in self.parts)

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(p.label for p in self.parts)

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise KeyError(f"no subsystem labeled {label!r} in {self.labels}") from None

    def subspace(self, keep: Sequence[int]) -> "CompositeSpace":
        return CompositeSpace(tuple(self.parts[i] for i in keep))

    def basis_index(self, occupations: Sequence[int]) -> int:
        """Row-major flat index of the basis ket with the given quantum numbers."""
        if len(occupations) != len(self.parts):
            raise ValueError(f"expected {len(self.parts)} occupation numbers")
        idx = 0
        for n, part in zip(occupations, self.parts):
            if not (0 <= n < part.dim):
                raise ValueError(f"occupation {n} out of range for {part.label!r} (dim {part.dim})")
            idx = idx * part.dim + n
        return idx


def single_mode_space(spec: SubsystemSpec) -> CompositeSpace:
    return CompositeSpace((spec,))


@dataclass(frozen=True)
class QOperator:
    """Sparse operator tagged with the space it acts on."""

    space: CompositeSpace
    mat: sp.csr_matrix

    def __post_init__(self):
        if self.mat.shape != (self.space.dim, self.space.dim):
            raise ValueError(
                f"matrix shape {self.mat.shape} does not match space dim {self.space.dim}"
            )

    def _check_space(self, other: "QOperator"):
        if self.space != other.space:
            raise SpaceMismatchError(
                f"operator spaces differ: {self.space.labels} vs {other.space.labels}"
            )

    def __add__(self, other: "QOperator") -> "QOperator":
        self._check_space(other)
        return QOperator(self.space, (self.mat + other.mat).tocsr())

    def __sub__(self, other: "QOperator") -> "QOperator":
        self._check_space(other)
        return QOperator(self.space, (self.mat - other.mat).tocsr())

    def __mul__(self, scalar: complex) -> "QOperator":
        return QOperator(self.space, (self.mat * scalar).tocsr())

    __rmul__ = __mul__

    def __neg__(self) -> "QOperator":
        return self * (-1.0)

    def __matmul__(self, other: "QOperator") -> "QOperator":
        self._check_space(other)
        return QOperator(self.space, (self.mat @ other.mat).tocsr())

    def dag(self) -> "QOperator":
        return QOperator(self.space, self.mat.conjugate().transpose().tocsr())

    def to_dense(self) -> np.ndarray:
        return np.asarray(self.mat.todense())

    def hermiticity_defect(self) -> float:
        d = self.mat - self.mat.conjugate().transpose()
        return float(abs(d).max()) if d.nnz else 0.0

    def is_hermitian(self, tol: float = 1e-12) -> bool:
        return self.hermiticity_defect() <= tol


@dataclass(frozen=True)
class QState:
    """State vector or density matrix on a composite space."""

    space: CompositeSpace
    kind: str
    data: np.ndarray

    @property
    def dim(self) -> int:
        return self.space.dim

    def norm(self) -> float:
        return float(np.linalg.norm(self.data))

    def trace(self) -> complex:
        if self.kind != DENSITY:
            raise WrongKindError("trace is defined for density matrices")
        return complex(np.trace(self.data))

    def to_density(self) -> "QState":
        if self.kind == DENSITY:
            return self
        rho = np.outer(self.data, self.data.conj())
        return QState(self.space, DENSITY, rho)

    def min_eigenvalue(self) -> float:
        """Smallest eigenvalue of the density matrix (positivity probe)."""
        if self.kind != DENSITY:
            raise WrongKindError("positivity is defined for density matrices")
        return float(np.linalg.eigvalsh(self.data)[0])


def vector_state(space: CompositeSpace, data: np.ndarray, norm_tol: float = NORM_TOL) -> QState:
    data = np.asarray(data, dtype=np.complex128).reshape(-1)
    if data.shape != (space.dim,):
        raise ValueError(f"vector length {data.shape} does not match dim {space.dim}")
    n = np.linalg.norm(data)
    if abs(n - 1.0) > norm_tol:
        raise NumericValidityError(f"state vector norm {n!r} deviates from 1 beyond {norm_tol}")
    return QState(space, VECTOR, data)


def density_state(
    space: CompositeSpace,
    data: np.ndarray,
    trace_tol: float = TRACE_TOL,
    herm_tol: float = HERM_TOL,
    positivity_floor: float | None = POSITIVITY_TOL,
) -> QState:
    """Validated density matrix. Pass positivity_floor=None to skip the eigen check."""
    data = np.asarray(data, dtype=np.complex128)
    if data.shape != (space.dim, space.dim):
        raise ValueError(f"matrix shape {data.shape} does not match dim {space.dim}")
    tr = np.trace(data)
    if abs(tr - 1.0) > trace_tol:
        raise NumericValidityError(f"density trace {tr!r} deviates from 1 beyond {trace_tol}")
    asym = np.max(np.abs(data - data.conj().T))
    if asym > herm_tol:
        raise NumericValidityError(f"density hermiticity defect {asym:.3e} exceeds {herm_tol}")
    if positivity_floor is not None:
        lam_min = float(np.linalg.eigvalsh(data)[0])
        if lam_min < positivity_floor:
            raise NumericValidityError(
                f"density minimum eigenvalue {lam_min:.3e} below {positivity_floor}"
            )
    return QState(space, DENSITY, data)


def basis_ket(space: CompositeSpace, occupations: Sequence[int]) -> QState:
    data = np.zeros(space.dim, dtype=np.complex128)
    data[space.basis_index(occupations)] = 1.0
    return QState(space, VECTOR, data)


# ---------------------------------------------------------------------------
# elementary operators


def destroy(truncation: int, label: str = "mode") -> QOperator:
    """Single-mode annihilation operator, <n-1|a|n> = sqrt(n)."""
    if truncation < 2:
        raise ValueError(f"boson truncation must be >= 2, got {truncation}")
    mat = sp.diags(np.sqrt(np.arange(1, truncation)), 1, format="csr", dtype=np.complex128)
    return QOperator(single_mode_space(boson(truncation, label)), mat)


def atomic_sigma(levels: int, k: int, l: int, label: str = "atom") -> QOperator:
    """Atomic transition operator |k><l| on a `levels`-dimensional atom."""
    if levels < 2:
        raise ValueError(f"atom needs >= 2 levels, got {levels}")
    if not (0 <= k < levels and 0 <= l < levels):
        raise ValueError(f"indices ({k},{l}) out of range for {levels} levels")
    mat = sp.csr_matrix(([1.0 + 0j], ([k], [l])), shape=(levels, levels))
    return QOperator(single_mode_space(atom(levels, label)), mat)


def identity(space: CompositeSpace) -> QOperator:
    return QOperator(space, sp.identity(space.dim, format="csr", dtype=np.complex128))


def embed(op: QOperator, index: int, space: CompositeSpace) -> QOperator:
    """Lift a single-subsystem operator to `space` by Kronecker products with identities."""
    if len(op.space.parts) != 1:
        raise SpaceShapeError("embed takes a single-subsystem operator")
    if not (0 <= index < len(space.parts)):
        raise ValueError(f"subsystem index {index} out of range")
    if op.space.parts[0].dim != space.parts[index].dim:
        raise SpaceShapeError(
            f"operator dim {op.space.parts[0].dim} does not match "
            f"subsystem {space.parts[index].label!r} dim {space.parts[index].dim}"
        )
    left = math.prod(p.dim for p in space.parts[:index]) or 1
    right = math.prod(p.dim for p in space.parts[index + 1 :]) or 1
    mat = op.mat
    if left > 1:
        mat = sp.kron(sp.identity(left, dtype=np.complex128), mat, format="csr")
    if right > 1:
        mat = sp.kron(mat, sp.identity(right, dtype=np.complex128), format="csr")
    return QOperator(space, mat.tocsr())


def compose(ops: Iterable[QOperator], weights: Iterable[complex] | None = None) -> QOperator:
    ops = list(ops)
    if not ops:
        raise ValueError("compose needs at least one operator")
    if weights is None:
        weights = [1.0] * len(ops)
    weights = list(weights)
    if len(weights) != len(ops):
        raise ValueError("weights length must match operator count")
    acc = ops[0] * weights[0]
    for op, w in zip(ops[1:], weights[1:]):
        acc = acc + op * w
    return acc


def multiply(a: QOperator, b: QOperator) -> QOperator:
    return a @ b


def dag(op: QOperator) -> QOperator:
    return op.dag()


def expectation(op: QOperator, state: QState) -> complex:
    """<op> = Tr(rho op) or <psi|op|psi>. Returned complex; the caller owns any
    imaginary residue (it is never silently dropped)."""
    if op.space != state.space:
        raise SpaceMismatchError(
            f"operator on {op.space.labels} vs state on {state.space.labels}"
        )
    if state.kind == VECTOR:
        return complex(np.vdot(state.data, op.mat @ state.data))
    return complex(np.trace(op.mat @ state.data))


# ---------------------------------------------------------------------------
# reductions and spectra


def _keep_tuple(keep: Iterable[int], nparts: int) -> tuple[int, ...]:
    keep = tuple(sorted(set(int(k) for k in keep)))
    if not keep:
        raise ValueError("keep-set must be non-empty")
    if keep[0] < 0 or keep[-1] >= nparts:
        raise ValueError(f"keep indices {keep} out of range for {nparts} subsystems")
    return keep


def partial_trace(state: QState, keep: Iterable[int]) -> QState:
    """Reduced density matrix over the kept subsystems (canonical order preserved).

    Vector states are contracted directly without forming the full outer product.
    """
    nparts = len(state.space.parts)
    keep = _keep_tuple(keep, nparts)
    dims = state.space.dims
    sub = state.space.subspace(keep)
    if state.kind == VECTOR:
        tensor = state.data.reshape(dims)
        perm = list(keep) + [i for i in range(nparts) if i not in keep]
        mat = np.transpose(tensor, perm).reshape(sub.dim, -1)
        rho = mat @ mat.conj().T
    else:
        tensor = state.data.reshape(dims + dims)
        idx = list(range(2 * nparts))
        for i in range(nparts):
            if i not in keep:
                idx[nparts + i] = idx[i]
        out_idx = [i for i in keep] + [nparts + i for i in keep]
        rho = np.einsum(tensor, idx, out_idx).reshape(sub.dim, sub.dim)
    return QState(sub, DENSITY, rho)


def partial_transpose(state: QState, part: int) -> np.ndarray:
    """Density matrix with the indices of one subsystem transposed."""
    if state.kind != DENSITY:
        raise WrongKindError("partial transpose needs a density matrix")
    nparts = len(state.space.parts)
    if not (0 <= part < nparts):
        raise ValueError(f"subsystem index {part} out of range")
    dims = state.space.dims
    tensor = state.data.reshape(dims + dims)
    tensor = np.swapaxes(tensor, part, nparts + part)
    return np.ascontiguousarray(tensor.reshape(state.dim, state.dim))


def eig_hermitian(mat: np.ndarray, herm_tol: float = 1e-8) -> np.ndarray:
    """Real spectrum, ascending. Rejects matrices that are not Hermitian within tol."""
    mat = np.asarray(mat)
    defect = np.max(np.abs(mat - mat.conj().T)) if mat.size else 0.0
    if defect > herm_tol:
        raise NumericValidityError(f"hermiticity defect {defect:.3e} exceeds {herm_tol}")
    return np.linalg.eigvalsh(mat)


def trace_norm(mat: np.ndarray, herm_tol: float = 1e-8) -> float:
    """Sum of absolute eigenvalues (trace norm of a Hermitian matrix)."""
    return float(np.sum(np.abs(eig_hermitian(mat, herm_tol))))


def tensor_vectors(space: CompositeSpace, factors: Sequence[np.ndarray]) -> np.ndarray:
    """Kron of per-subsystem vectors in canonical order."""
    if len(factors) != len(space.parts):
        raise ValueError("one factor per subsystem required")
    out = np.asarray(factors[0], dtype=np.complex128)
    for f in factors[1:]:
        out = np.kron(out, np.asarray(f, dtype=np.complex128))
    return out


def pad_density(state: QState, target: CompositeSpace) -> QState:
    """Embed a density matrix into a space with enlarged Fock truncations.

    Subsystem kinds and order must match; every target dimension must be at
    least the source dimension. Added amplitudes are zero, so the trace is
    preserved. Used to warm-start fine-truncation solves from coarse ones.
    """
    src = state.space
    if len(src.parts) != len(target.parts):
        raise SpaceShapeError("subsystem counts differ")
    for a, b in zip(src.parts, target.parts):
        if a.kind != b.kind or a.dim > b.dim:
            raise SpaceShapeError(
                f"cannot pad {a.kind}({a.dim}) into {b.kind}({b.dim})"
            )
    rho = state.to_density().data.reshape(src.dims + src.dims)
    big = np.zeros(target.dims + target.dims, dtype=np.complex128)
    sl = tuple(slice(0, d) for d in src.dims)
    big[sl + sl] = rho
    return QState(target, DENSITY, big.reshape(target.dim, target.dim))
