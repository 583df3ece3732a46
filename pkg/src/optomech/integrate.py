"""Adaptive embedded Runge-Kutta (Dormand-Prince 5(4)) for complex systems.

Works on complex ndarrays of any shape (state vectors or density matrices).
Steps are clipped so every requested sample time is hit exactly; a PI
controller adapts the step from the embedded error estimate, which also
lets the stepper sit at the stability boundary during long relaxations.
The right-hand side writes into a caller-provided buffer and all stage
combinations run as fused single-pass kernels; for the large density
matrices of this problem the temporaries of naive ndarray arithmetic
would otherwise rival the generator application itself.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import IntegratorAccuracyError

try:  # pragma: no cover
    from numba import njit, prange

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

# Dormand-Prince 5(4) tableau
_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_B5 = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0)
_B4 = (5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40)
_E = tuple(b5 - b4 for b5, b4 in zip(_B5, _B4))

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 5.0
# PI exponents (order-5 error): h *= safety * err^-0.14 * err_prev^0.08
_ALPHA = 0.7 / 5.0
_BETA = 0.4 / 5.0


if HAVE_NUMBA:

    @njit(parallel=True, fastmath=True, cache=True)
    def _nb_lincomb(out, base, stages, w):  # pragma: no cover
        n = out.shape[0]
        m = w.shape[0]
        for i in prange(n):
            acc = base[i]
            for j in range(m):
                wj = w[j]
                if wj != 0.0:
                    acc = acc + wj * stages[j, i]
            out[i] = acc

    @njit(parallel=True, fastmath=True, cache=True)
    def _nb_error_norm(stages, w, y0, y1, rtol, atol):  # pragma: no cover
        n = y0.shape[0]
        m = w.shape[0]
        total = 0.0
        for i in prange(n):
            e = 0.0 + 0.0j
            for j in range(m):
                wj = w[j]
                if wj != 0.0:
                    e = e + wj * stages[j, i]
            sc = atol + rtol * max(abs(y0[i]), abs(y1[i]))
            q = abs(e) / sc
            total += q * q
        return np.sqrt(total / n)


def _lincomb(out, base, stages, w):
    if HAVE_NUMBA:
        _nb_lincomb(out.reshape(-1), base.reshape(-1), stages, np.asarray(w))
        return
    acc = base.copy()
    flat = acc.reshape(-1)
    for j, wj in enumerate(w):
        if wj:
            flat += wj * stages[j]
    out[...] = acc


def _error_norm(stages, w, y0, y1, rtol, atol):
    if HAVE_NUMBA:
        return float(
            _nb_error_norm(stages, np.asarray(w), y0.reshape(-1), y1.reshape(-1), rtol, atol)
        )
    err = np.zeros_like(y0.reshape(-1))
    for j, wj in enumerate(w):
        if wj:
            err += wj * stages[j]
    scale = atol + rtol * np.maximum(np.abs(y0.reshape(-1)), np.abs(y1.reshape(-1)))
    return float(np.sqrt(np.mean((np.abs(err) / scale) ** 2)))


@dataclass
class IntegrationStats:
    steps: int = 0
    rejected: int = 0
    rhs_evals: int = 0
    h_final: float = 0.0
    h_min: float = np.inf
    h_max_seen: float = 0.0


def _initial_step(y0, f0, rtol, atol, span):
    scale = atol + rtol * np.abs(y0)
    d0 = float(np.sqrt(np.mean((np.abs(y0) / scale) ** 2)))
    d1 = float(np.sqrt(np.mean((np.abs(f0) / scale) ** 2)))
    h = 0.01 * d0 / d1 if d0 > 1e-5 and d1 > 1e-5 else 1e-6 * max(span, 1.0)
    return min(h, 0.1 * span) if span > 0 else h


def integrate_adaptive(
    rhs: Callable[[float, np.ndarray, np.ndarray], None],
    t0: float,
    y0: np.ndarray,
    t_end: float,
    sample_times: Sequence[float],
    on_sample: Callable[[float, np.ndarray], None],
    rtol: float = 1e-8,
    atol: float = 1e-12,
    post_step: Callable[[float, np.ndarray], np.ndarray] | None = None,
    h_max: float = np.inf,
    max_steps: int = 50_000_000,
    fsal_after_post: bool = False,
) -> tuple[np.ndarray, IntegrationStats]:
    """Integrate dy/dt = rhs(t, y, out) from t0 to t_end; returns (y_final, stats).

    `rhs` must write the derivative into its third argument. `on_sample`
    fires at every entry of sample_times (assumed sorted, within
    [t0, t_end]); the array passed to it is live and must be copied if
    retained. `post_step` may replace the state after each accepted step
    (used for Hermitian symmetrization of density matrices); set
    `fsal_after_post` when its changes stay at roundoff level so the last
    stage can still seed the next step.
    """
    y = np.array(y0, dtype=np.complex128, copy=True)
    shape = y.shape
    t = float(t0)
    stats = IntegrationStats()

    samples = [float(s) for s in sample_times]
    si = 0
    while si < len(samples) and samples[si] <= t + 1e-14 * max(1.0, abs(t)):
        on_sample(samples[si], y)
        si += 1
    if t >= t_end:
        stats.h_final = 0.0
        return y, stats

    k = np.empty((7, y.size), dtype=np.complex128)
    work = np.empty_like(y)
    y_new = np.empty_like(y)
    rhs(t, y, k[0].reshape(shape))
    stats.rhs_evals += 1
    h = min(_initial_step(y, k[0].reshape(shape), rtol, atol, t_end - t0), h_max)
    err_prev = 1.0

    a_rows = [np.array(row + (0.0,) * (7 - len(row))) for row in _A]
    b5 = np.array(_B5)
    e_w = np.array(_E)

    while t < t_end - 1e-14 * max(1.0, abs(t_end)):
        if stats.steps + stats.rejected >= max_steps:
            raise IntegratorAccuracyError(
                f"step budget {max_steps} exhausted at t={t:.6g} (h={h:.3e}); "
                "loosen the tolerance or shorten the interval"
            )
        t_next_event = samples[si] if si < len(samples) else t_end
        h = min(h, h_max, t_next_event - t, t_end - t)

        # stage derivatives land directly in the k-stack rows
        for i in range(1, 7):
            _lincomb(work, y, k, h * a_rows[i])
            rhs(t + _C[i] * h, work, k[i].reshape(shape))
        stats.rhs_evals += 6

        _lincomb(y_new, y, k, h * b5)
        enorm = _error_norm(k, h * e_w, y, y_new, rtol, atol)

        if enorm <= 1.0:
            t = t + h
            y, y_new = y_new, y
            stats.steps += 1
            stats.h_min = min(stats.h_min, h)
            stats.h_max_seen = max(stats.h_max_seen, h)
            if post_step is not None:
                y = post_step(t, y)
                if fsal_after_post:
                    k[0] = k[6]
                else:
                    rhs(t, y, work)
                    k[0] = work.reshape(-1)
                    stats.rhs_evals += 1
            else:
                k[0] = k[6]
            while si < len(samples) and samples[si] <= t + 1e-12 * max(1.0, abs(t)):
                on_sample(samples[si], y)
                si += 1
            if enorm == 0.0:
                factor = _MAX_FACTOR
            else:
                factor = _SAFETY * enorm**-_ALPHA * err_prev**_BETA
            err_prev = max(enorm, 1e-10)
            h = h * min(_MAX_FACTOR, max(_MIN_FACTOR, factor))
        else:
            stats.rejected += 1
            h = h * max(_MIN_FACTOR, _SAFETY * enorm**-0.2)

    stats.h_final = h
    return y, stats
