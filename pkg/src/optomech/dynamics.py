"""Time evolution and steady states of the driven dissipative network.

State vectors evolve under dpsi/dt = -i H psi, density matrices under the
Lindblad equation; both use the adaptive embedded Runge-Kutta pair from
`integrate`. Norm/trace are never renormalized: their drift is the accuracy
signal. Density matrices are re-symmetrized after every accepted step and
the discarded asymmetry is logged. Steady states are found by marching the
master equation until the generator residual and the requested observables
stop moving.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import hilbert as hs
from . import model
from ._kernels import LindbladAction, configure_threads, hermitize_inplace
from .errors import (
    ConvergenceError,
    IntegratorAccuracyError,
    ModelRegimeError,
)
from .integrate import IntegrationStats, integrate_adaptive

DRIFT_WARN = 1e-7
DRIFT_FAIL = 1e-5
POSITIVITY_WARN = -1e-5

Observable = Callable[[float, hs.QState], complex]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform sample grid in units of 1/omega_m."""

    t0: float
    t1: float
    samples: int

    def __post_init__(self):
        if self.t1 < self.t0:
            raise ValueError("t1 must not precede t0")
        if self.samples < 1:
            raise ValueError("need at least one sample")

    def times(self) -> np.ndarray:
        if self.samples == 1 or self.t1 == self.t0:
            return np.array([self.t0])
        return np.linspace(self.t0, self.t1, self.samples)


@dataclass(frozen=True)
class TimeDependentHamiltonian:
    """static + sum_k (A_k e^{i w_k t} + A_k^dag e^{-i w_k t})."""

    static: hs.QOperator
    oscillating: tuple[tuple[hs.QOperator, float], ...]

    @property
    def space(self) -> hs.CompositeSpace:
        return self.static.space

    def value(self, t: float) -> hs.QOperator:
        h = self.static
        for a, w in self.oscillating:
            h = h + (np.exp(1j * w * t) * a) + (np.exp(-1j * w * t) * a.dag())
        return h


@dataclass
class EvolutionResult:
    times: np.ndarray
    observables: dict[str, np.ndarray]
    states: list[hs.QState] = field(default_factory=list)
    state_times: list[float] = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    @property
    def final_state(self) -> hs.QState:
        if not self.states:
            raise ValueError("no states were stored for this run")
        return self.states[-1]


def _store_mask(times: np.ndarray, store: str | Sequence[float]) -> np.ndarray:
    if isinstance(store, str):
        if store == "all":
            return np.ones(len(times), dtype=bool)
        if store == "last":
            mask = np.zeros(len(times), dtype=bool)
            mask[-1] = True
            return mask
        if store == "none":
            return np.zeros(len(times), dtype=bool)
        raise ValueError(f"unknown store_states option {store!r}")
    mask = np.zeros(len(times), dtype=bool)
    for t in store:
        mask[int(np.argmin(np.abs(times - t)))] = True
    return mask


def _vector_rhs(hamiltonian):
    if isinstance(hamiltonian, TimeDependentHamiltonian):
        h0 = hamiltonian.static.mat
        terms = [(a.mat, a.mat.getH().tocsr(), w) for a, w in hamiltonian.oscillating]

        def rhs(t, y, out):
            acc = h0 @ y
            for a, adag, w in terms:
                ph = np.exp(1j * w * t)
                acc = acc + ph * (a @ y) + np.conj(ph) * (adag @ y)
            np.multiply(acc, -1j, out=out)

        return rhs
    h = hamiltonian.mat

    def rhs(t, y, out):
        np.multiply(h @ y, -1j, out=out)

    return rhs


def evolve_vector(
    hamiltonian: hs.QOperator | TimeDependentHamiltonian,
    psi0: hs.QState,
    grid: TimeGrid,
    observers: Mapping[str, Observable] | None = None,
    rtol: float = 1e-8,
    atol: float = 1e-12,
    store_states: str | Sequence[float] = "all",
    h_max: float = np.inf,
) -> EvolutionResult:
    """Unitary evolution of a state vector on the sample grid.

    The norm is left untouched; its drift over the run must stay below
    1e-5 or an IntegratorAccuracyError is raised (below 1e-7 is the
    normal-operation contract, in between gets a warning entry).
    """
    if psi0.kind != hs.VECTOR:
        raise hs.WrongKindError("evolve_vector needs a vector state")
    space = psi0.space
    if hamiltonian.space != space:
        raise hs.SpaceMismatchError("Hamiltonian and initial state live on different spaces")
    times = grid.times()
    store = _store_mask(times, store_states)
    observers = dict(observers or {})

    obs_out = {name: np.empty(len(times), dtype=np.complex128) for name in observers}
    states: list[hs.QState] = []
    state_times: list[float] = []
    norm_dev = 0.0
    sample_idx = [0]

    def on_sample(t, y):
        i = sample_idx[0]
        nonlocal norm_dev
        norm_dev = max(norm_dev, abs(float(np.linalg.norm(y)) - 1.0))
        if observers or store[i]:
            st = hs.vector_state(space, y.copy(), norm_tol=1e-4)
            for name, fn in observers.items():
                obs_out[name][i] = fn(t, st)
            if store[i]:
                states.append(st)
                state_times.append(t)
        sample_idx[0] += 1

    rhs = _vector_rhs(hamiltonian)
    _, stats = integrate_adaptive(
        rhs, times[0], psi0.data, times[-1], times, on_sample, rtol=rtol, atol=atol, h_max=h_max
    )

    diagnostics = {"norm_drift": norm_dev, "integrator": stats, "warnings": []}
    if norm_dev > DRIFT_FAIL:
        raise IntegratorAccuracyError(
            f"norm drift {norm_dev:.2e} exceeds {DRIFT_FAIL}; retry with rtol <= {rtol / 10:g}"
        )
    if norm_dev > DRIFT_WARN:
        diagnostics["warnings"].append(f"norm drift {norm_dev:.2e} above {DRIFT_WARN}")
    return EvolutionResult(times, obs_out, states, state_times, diagnostics)


def _density_rhs(action: LindbladAction, hamiltonian):
    if isinstance(hamiltonian, TimeDependentHamiltonian):
        terms = [(a.mat, w) for a, w in hamiltonian.oscillating]

        def rhs(t, y, out):
            action.apply_hermitian(y, out)
            for a, w in terms:
                c = (-1j * np.exp(1j * w * t)) * np.asarray(a @ y - y @ a)
                out += c + c.conj().T

        return rhs

    def rhs(t, y, out):
        action.apply_hermitian(y, out)

    return rhs


def evolve_density(
    hamiltonian: hs.QOperator | TimeDependentHamiltonian,
    dissipators: model.DissipatorSpec,
    rho0: hs.QState,
    grid: TimeGrid,
    observers: Mapping[str, Observable] | None = None,
    rtol: float = 1e-7,
    atol: float = 1e-12,
    store_states: str | Sequence[float] = "last",
    h_max: float = np.inf,
) -> EvolutionResult:
    """Lindblad evolution of a density matrix on the sample grid.

    The superoperator is applied matrix-free (sparse factors only). Each
    accepted step is followed by rho <- (rho + rho^dag)/2 with the removed
    asymmetry logged; positivity is checked on stored snapshots only.
    """
    if rho0.kind != hs.DENSITY:
        rho0 = rho0.to_density()
    space = rho0.space
    configure_threads()
    static = hamiltonian.static if isinstance(hamiltonian, TimeDependentHamiltonian) else hamiltonian
    if static.space != space:
        raise hs.SpaceMismatchError("Hamiltonian and initial state live on different spaces")
    action = LindbladAction(static.mat, [(op.mat, r) for op, r in dissipators])

    times = grid.times()
    store = _store_mask(times, store_states)
    observers = dict(observers or {})
    obs_out = {name: np.empty(len(times), dtype=np.complex128) for name in observers}
    states: list[hs.QState] = []
    state_times: list[float] = []
    trace_dev = 0.0
    max_asym = 0.0
    min_eig = np.inf
    sample_idx = [0]

    def on_sample(t, y):
        i = sample_idx[0]
        nonlocal trace_dev, min_eig
        trace_dev = max(trace_dev, abs(float(np.trace(y).real) - 1.0))
        if observers or store[i]:
            st = hs.QState(space, hs.DENSITY, y.copy())
            for name, fn in observers.items():
                obs_out[name][i] = fn(t, st)
            if store[i]:
                lam = st.min_eigenvalue()
                min_eig = min(min_eig, lam)
                states.append(st)
                state_times.append(t)
        sample_idx[0] += 1

    def post_step(t, y):
        nonlocal max_asym
        max_asym = max(max_asym, hermitize_inplace(y))
        return y

    rhs = _density_rhs(action, hamiltonian)
    _, stats = integrate_adaptive(
        rhs, times[0], rho0.data, times[-1], times, on_sample,
        rtol=rtol, atol=atol, post_step=post_step, h_max=h_max,
        fsal_after_post=True,
    )

    diagnostics = {
        "trace_drift": trace_dev,
        "max_asymmetry": max_asym,
        "min_eigenvalue": None if min_eig is np.inf else min_eig,
        "integrator": stats,
        "warnings": [],
    }
    if trace_dev > DRIFT_FAIL:
        raise IntegratorAccuracyError(
            f"trace drift {trace_dev:.2e} exceeds {DRIFT_FAIL}; retry with rtol <= {rtol / 10:g}"
        )
    if trace_dev > DRIFT_WARN:
        diagnostics["warnings"].append(f"trace drift {trace_dev:.2e} above {DRIFT_WARN}")
    if min_eig is not np.inf and min_eig < POSITIVITY_WARN:
        diagnostics["warnings"].append(
            f"positivity loss: min eigenvalue {min_eig:.2e} below {POSITIVITY_WARN}"
        )
    return EvolutionResult(times, obs_out, states, state_times, diagnostics)


def liouvillian_apply(
    hamiltonian: hs.QOperator,
    dissipators: model.DissipatorSpec,
    rho: hs.QState | np.ndarray,
) -> np.ndarray:
    """Exact Lindblad right-hand side for an arbitrary matrix (diagnostic path)."""
    mat = rho.data if isinstance(rho, hs.QState) else np.asarray(rho, dtype=np.complex128)
    if mat.shape != (hamiltonian.space.dim, hamiltonian.space.dim):
        raise hs.SpaceMismatchError(
            f"matrix shape {mat.shape} does not match space dim {hamiltonian.space.dim}"
        )
    action = LindbladAction(hamiltonian.mat, [(op.mat, r) for op, r in dissipators])
    return action.apply(mat)


@dataclass(frozen=True)
class SteadyStateCriteria:
    """Stopping rule for the steady-state march.

    window=None derives the trailing window as 50 / (smallest channel rate),
    capped at max_time / 4 (the cap is recorded in the result diagnostics).
    """

    residual_max: float = 1e-8
    observable_tol: float = 1e-6
    window: float | None = None
    max_time: float = 4000.0
    block: float = 10.0
    rtol: float = 1e-6
    atol: float = 1e-10


@dataclass
class SteadyStateResult:
    state: hs.QState
    residual: float
    elapsed: float
    window_used: float
    observable_trace: dict[str, list]
    trace_times: list[float]
    diagnostics: dict


def steady_state(
    hamiltonian: hs.QOperator,
    dissipators: model.DissipatorSpec,
    rho_guess: hs.QState,
    criteria: SteadyStateCriteria | None = None,
    observables: Mapping[str, Observable] | None = None,
) -> SteadyStateResult:
    """March the master equation to its fixed point.

    Stops when max|drho/dt| < residual_max and every requested observable
    has stayed within observable_tol over the trailing window. Runge-Kutta
    methods leave the true fixed point invariant, so the march converges to
    the steady state itself, not to a tolerance-biased neighbor.
    """
    crit = criteria or SteadyStateCriteria()
    if dissipators.empty:
        raise ModelRegimeError("steady state needs at least one dissipative channel")
    rho0 = rho_guess.to_density()
    space = rho0.space
    configure_threads()
    action = LindbladAction(hamiltonian.mat, [(op.mat, r) for op, r in dissipators])

    window = crit.window
    window_capped = False
    if window is None:
        kappa_min = min(r for _, r in dissipators)
        window = 50.0 / kappa_min
        if window > crit.max_time / 4:
            window = crit.max_time / 4
            window_capped = True

    observables = dict(observables or {})
    trace: dict[str, list] = {name: [] for name in observables}
    trace_times: list[float] = []
    residual_trace: list[float] = []

    y = rho0.data.copy()
    t = 0.0
    max_asym = 0.0

    def post_step(tt, yy):
        nonlocal max_asym
        max_asym = max(max_asym, hermitize_inplace(yy))
        return yy

    def rhs(tt, yy, out):
        action.apply_hermitian(yy, out)

    stats_total = IntegrationStats()
    residual = np.inf
    converged = False
    while t < crit.max_time:
        t_next = min(t + crit.block, crit.max_time)
        y, stats = integrate_adaptive(
            rhs, t, y, t_next, [], lambda tt, yy: None,
            rtol=crit.rtol, atol=crit.atol, post_step=post_step,
            fsal_after_post=True,
        )
        stats_total.steps += stats.steps
        stats_total.rejected += stats.rejected
        stats_total.rhs_evals += stats.rhs_evals
        t = t_next
        residual = float(np.max(np.abs(action.apply_hermitian(y))))
        residual_trace.append(residual)
        trace_times.append(t)
        st = hs.QState(space, hs.DENSITY, y)
        for name, fn in observables.items():
            trace[name].append(fn(t, st))
        ok_obs = True
        if observables:
            ok_obs = False
            if t >= window:
                lo = t - window
                ok_obs = True
                for name in observables:
                    vals = [v for tt, v in zip(trace_times, trace[name]) if tt >= lo - 1e-9]
                    spread = max(abs(a - b) for a in vals for b in vals) if len(vals) > 1 else np.inf
                    if spread >= crit.observable_tol:
                        ok_obs = False
                        break
        if residual < crit.residual_max and ok_obs:
            converged = True
            break

    if not converged:
        raise ConvergenceError(
            f"no steady state within t={crit.max_time} (residual {residual:.2e}, "
            f"target {crit.residual_max})",
            residual_trace=residual_trace,
        )

    rho = 0.5 * (y + y.conj().T)
    rho_state = hs.density_state(space, rho / np.trace(rho).real, positivity_floor=None)
    lam_min = rho_state.min_eigenvalue()
    diagnostics = {
        "residual_trace": residual_trace,
        "max_asymmetry": max_asym,
        "min_eigenvalue": lam_min,
        "window_capped": window_capped,
        "integrator": stats_total,
        "warnings": [],
    }
    if lam_min < POSITIVITY_WARN:
        diagnostics["warnings"].append(f"positivity loss: min eigenvalue {lam_min:.2e}")
    return SteadyStateResult(
        rho_state, residual, t, window, trace, trace_times, diagnostics
    )


# ---------------------------------------------------------------------------
# rotating-wave validation


def build_oscillatory_interaction(
    p: model.SystemParams, space: hs.CompositeSpace
) -> TimeDependentHamiltonian:
    """Full interaction-picture coupling at blue detuning, keeping the terms
    that oscillate at the mechanical frequency and its double. Dropping the
    oscillating terms leaves exactly `model.build_effective_hamiltonian`."""
    static = model.build_effective_hamiltonian(p, space)
    a1, b, a2 = model.mode_ops(space)
    cavities = (a1, a2)
    a_slow = None
    a_fast = None
    for j in range(2):
        sign = -1.0 if j == 0 else 1.0  # (-1)^j with j counted from 1
        core = cavities[j] @ model.sigma(space, j, 2, 1)
        t_slow = p.g[j] * core + (sign * p.tripartite(j)) * (core @ (b.dag() - b))
        t_fast = (sign * p.tripartite(j)) * (core @ b)
        a_slow = t_slow if a_slow is None else a_slow + t_slow
        a_fast = t_fast if a_fast is None else a_fast + t_fast
    return TimeDependentHamiltonian(
        static, ((a_slow, -p.omega_m), (a_fast, -2.0 * p.omega_m))
    )


@dataclass
class RwaValidationReport:
    times: np.ndarray
    fidelity: np.ndarray
    min_fidelity: float
    diagnostics: dict


def validate_effective_hamiltonian(
    p: model.SystemParams,
    psi0: hs.QState,
    grid: TimeGrid,
    rtol: float = 1e-8,
    max_dim: int = 2000,
) -> RwaValidationReport:
    """Evolve psi0 under the full oscillatory interaction and under its
    rotating-wave limit; report the pointwise state fidelity between the two.
    Restricted to the weak optomechanical regime and small spaces."""
    if p.lam / p.omega_m > 0.05 + 1e-12:
        raise ModelRegimeError(
            f"validation requires lambda/omega_m <= 0.05, got {p.lam / p.omega_m}"
        )
    if psi0.space.dim > max_dim:
        raise ModelRegimeError(
            f"validation space dim {psi0.space.dim} exceeds the {max_dim} cap"
        )
    h_full = build_oscillatory_interaction(p, psi0.space)
    h_rwa = h_full.static

    full = evolve_vector(h_full, psi0, grid, rtol=rtol, store_states="all")
    rwa = evolve_vector(h_rwa, psi0, grid, rtol=rtol, store_states="all")
    fid = np.array(
        [
            abs(np.vdot(a.data, b.data))
            for a, b in zip(full.states, rwa.states)
        ]
    )
    report = RwaValidationReport(
        times=full.times,
        fidelity=fid,
        min_fidelity=float(fid.min()),
        diagnostics={"full": full.diagnostics, "rwa": rwa.diagnostics},
    )
    return report
