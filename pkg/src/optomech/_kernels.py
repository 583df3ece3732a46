"""Sparse application of a constant Lindblad generator to a density matrix.

The generator is split as  drho/dt = K rho + rho K+ + sum_k r_k O_k rho O_k+
with K = -iH - (1/2) sum_k r_k O_k+ O_k.  The hot path assumes rho Hermitian
(guaranteed along the integration by per-step symmetrization and by the fact
that the generator preserves Hermiticity), which lets rho K+ be formed as
(K rho)+.

Every physical jump operator here (mode ladder or atomic transition, embedded
in the tensor space) has at most one entry per row and per column, so each
sandwich O rho O+ is a weighted two-sided row/column gather; a branchless
kernel exploits that. A general CSR kernel covers arbitrary channels, and a
scipy reference path implements the same algebra without the Hermitian
shortcut for arbitrary inputs and for tests.
"""

from __future__ import annotations

import os

import numpy as np
import scipy.sparse as sp

try:  # pragma: no cover - exercised implicitly everywhere numba is present
    import numba
    from numba import njit, prange

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False


def configure_threads() -> int:
    """Honor OPTOMECH_THREADS for the compiled kernels; returns the cap."""
    n = os.environ.get("OPTOMECH_THREADS")
    if HAVE_NUMBA and n:
        numba.set_num_threads(max(1, int(n)))
    return int(n) if n else (os.cpu_count() or 1)


def hermitize_inplace(y: np.ndarray) -> float:
    """y <- (y + y+)/2 in place; returns the largest asymmetry removed."""
    if HAVE_NUMBA:
        return float(_nb_hermitize(y))
    asym = float(np.max(np.abs(y - y.conj().T)))
    y[...] = 0.5 * (y + y.conj().T)
    return asym


if HAVE_NUMBA:

    @njit(parallel=True, fastmath=True, cache=True)
    def _k_and_mirror(Kp, Ki, Kd, rho, out):  # pragma: no cover
        n = rho.shape[0]
        for i in prange(n):
            for c in range(n):
                out[i, c] = 0.0
            for e in range(Kp[i], Kp[i + 1]):
                j = Ki[e]
                v = Kd[e]
                for c in range(n):
                    out[i, c] += v * rho[j, c]
        # out += out^dagger  (rho Hermitian -> rho K+ = (K rho)+)
        for i in prange(n):
            s = out[i, i] + np.conj(out[i, i])
            out[i, i] = s
            for c in range(i + 1, n):
                s = out[i, c] + np.conj(out[c, i])
                out[i, c] = s
                out[c, i] = np.conj(s)

    @njit(parallel=True, fastmath=True, cache=True)
    def _sandwich_gather(src, wgt, rates, rho, out):  # pragma: no cover
        # out += sum_m r_m O_m rho O_m+ for sub-permutation O_m:
        # O_m[i, src[m,i]] = wgt[m,i] (weight zero marks an empty row)
        nops = src.shape[0]
        n = rho.shape[0]
        for i in prange(n):
            for m in range(nops):
                j = src[m, i]
                wi = wgt[m, i] * rates[m]
                if wi != 0.0:
                    for c in range(n):
                        out[i, c] += wi * np.conj(wgt[m, c]) * rho[j, src[m, c]]

    @njit(parallel=True, fastmath=True, cache=True)
    def _nb_hermitize(y):  # pragma: no cover
        n = y.shape[0]
        row_asym = np.zeros(n)
        for i in prange(n):
            worst = abs(y[i, i].imag) * 2.0
            y[i, i] = y[i, i].real
            for c in range(i + 1, n):
                d = y[i, c] - np.conj(y[c, i])
                a = abs(d)
                if a > worst:
                    worst = a
                v = y[i, c] - 0.5 * d
                y[i, c] = v
                y[c, i] = np.conj(v)
            row_asym[i] = worst
        return np.max(row_asym)

    @njit(parallel=True, fastmath=True, cache=True)
    def _sandwich_csr(jp, ji, jd, nops, rates, rho, out, tmp):  # pragma: no cover
        n = rho.shape[0]
        for m in range(nops):
            r = rates[m]
            base = m * n
            for i in prange(n):
                for c in range(n):
                    tmp[i, c] = 0.0
                for e in range(jp[base + i], jp[base + i + 1]):
                    j = ji[e]
                    v = jd[e]
                    for c in range(n):
                        tmp[i, c] += v * rho[j, c]
            for i in prange(n):
                for c in range(n):
                    acc = 0.0 + 0.0j
                    for e in range(jp[base + c], jp[base + c + 1]):
                        acc += tmp[i, ji[e]] * np.conj(jd[e])
                    out[i, c] += r * acc


def _stack_csr(ops: list[sp.csr_matrix]):
    """Concatenate CSR row-pointer blocks so kernel m uses rows [m*n, (m+1)*n)."""
    indptr_blocks = []
    indices = []
    data = []
    base = 0
    for o in ops:
        o = o.tocsr()
        indptr_blocks.append(np.asarray(o.indptr[:-1], dtype=np.int64) + base)
        indices.append(np.asarray(o.indices, dtype=np.int64))
        data.append(np.asarray(o.data, dtype=np.complex128))
        base += o.nnz
    indptr_blocks.append(np.array([base], dtype=np.int64))
    if not ops:
        return np.zeros(1, np.int64), np.zeros(0, np.int64), np.zeros(0, np.complex128)
    return (
        np.concatenate(indptr_blocks),
        np.concatenate(indices) if indices else np.zeros(0, np.int64),
        np.concatenate(data) if data else np.zeros(0, np.complex128),
    )


def _subpermutation_maps(ops: list[sp.csr_matrix]):
    """(src, wgt) row maps for operators with at most one entry per row and
    per column (ladder and transition operators), or None if any is denser."""
    if not ops:
        return None
    n = ops[0].shape[0]
    src = np.zeros((len(ops), n), dtype=np.int64)
    wgt = np.zeros((len(ops), n), dtype=np.complex128)
    for m, o in enumerate(ops):
        o = o.tocsr()
        counts = np.diff(o.indptr)
        if counts.max(initial=0) > 1:
            return None
        cols = o.indices
        if len(np.unique(cols)) != len(cols):
            return None
        rows = np.nonzero(counts)[0]
        src[m, rows] = cols
        wgt[m, rows] = o.data
    return src, wgt


class LindbladAction:
    """Precomputed fast action of a fixed (H, channels) Lindblad generator.

    channels: iterable of (csr_matrix, rate) with the convention that each
    channel contributes (rate/2) * (2 O rho O+ - O+O rho - rho O+O).
    """

    def __init__(self, h_mat: sp.spmatrix, channels, use_numba: bool = True):
        h = h_mat.tocsr()
        ops = [o.tocsr() for o, _ in channels]
        rates = np.array([float(r) for _, r in channels], dtype=np.float64)
        k = (-1j) * h
        for o, r in zip(ops, rates):
            k = k - (0.5 * r) * (o.getH() @ o)
        k = k.tocsr()
        k.sort_indices()
        self.dim = h.shape[0]
        self._k = k
        self._k_dag = k.getH().tocsr()
        self._ops = ops
        self._rates = rates
        self._kp = np.asarray(k.indptr, dtype=np.int64)
        self._ki = np.asarray(k.indices, dtype=np.int64)
        self._kd = np.asarray(k.data, dtype=np.complex128)
        self._maps = _subpermutation_maps(ops)
        self._jp, self._ji, self._jd = _stack_csr(ops)
        self._nops = len(ops)
        self._use_numba = use_numba and HAVE_NUMBA
        self._tmp = None

    def apply_hermitian(self, rho: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
        """Generator action for Hermitian rho (the evolution hot path)."""
        if out is None:
            out = np.empty_like(rho)
        if self._use_numba:
            _k_and_mirror(self._kp, self._ki, self._kd, rho, out)
            if self._nops:
                if isinstance(self._maps, tuple):
                    src, wgt = self._maps
                    _sandwich_gather(src, wgt, self._rates, rho, out)
                else:
                    if self._tmp is None or self._tmp.shape != rho.shape:
                        self._tmp = np.empty_like(rho)
                    _sandwich_csr(
                        self._jp, self._ji, self._jd, self._nops, self._rates,
                        rho, out, self._tmp,
                    )
            return out
        out[:] = self._apply_scipy(rho, hermitian=True)
        return out

    def apply(self, rho: np.ndarray) -> np.ndarray:
        """Generator action for arbitrary (not necessarily Hermitian) rho."""
        return self._apply_scipy(rho, hermitian=False)

    def _apply_scipy(self, rho: np.ndarray, hermitian: bool) -> np.ndarray:
        d = self._k @ rho
        if hermitian:
            d = d + d.conj().T
        else:
            d = d + rho @ self._k_dag
        for o, r in zip(self._ops, self._rates):
            d = d + r * (o @ rho @ o.getH())
        return np.asarray(d)
