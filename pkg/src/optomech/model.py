"""Model builders: Hamiltonians, dissipation channels and initial states.

The network is two driven three-level atoms, one in each of two cavities,
with both cavities coupled to a shared mechanical mode. Everything is
expressed in units of the mechanical frequency (omega_m = 1, hbar = kB = 1).
Canonical subsystem order: (atom1, atom2, cavity1, mo, cavity2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from . import hilbert as hs
from .errors import ModelRegimeError, SpaceShapeError, TruncationTooSmallError

CANONICAL_LABELS = ("atom1", "atom2", "cavity1", "mo", "cavity2")
BOSON_LABELS = ("cavity1", "mo", "cavity2")

#: admissible truncated-tail population for squeezed/cat recipes
TAIL_TOL = 1e-4


def standard_space(n_c1: int = 8, n_m: int = 6, n_c2: int = 8, atom_levels: int = 3) -> hs.CompositeSpace:
    """The five-subsystem space in canonical order."""
    return hs.CompositeSpace(
        (
            hs.atom(atom_levels, "atom1"),
            hs.atom(atom_levels, "atom2"),
            hs.boson(n_c1, "cavity1"),
            hs.boson(n_m, "mo"),
            hs.boson(n_c2, "cavity2"),
        )
    )


def _check_standard(space: hs.CompositeSpace):
    if space.labels != CANONICAL_LABELS:
        raise SpaceShapeError(
            f"expected canonical subsystem order {CANONICAL_LABELS}, got {space.labels}"
        )
    for i in (0, 1):
        if space.parts[i].kind != hs.ATOM or space.parts[i].dim < 3:
            raise SpaceShapeError("atoms must have at least three levels")
    for i in (2, 3, 4):
        if space.parts[i].kind != hs.BOSON:
            raise SpaceShapeError(f"subsystem {space.labels[i]!r} must be bosonic")


@dataclass(frozen=True)
class SystemParams:
    """All physical parameters, in units of the mechanical frequency.

    Per-pair tuples are ordered (subsystem 1, subsystem 2). `Lambda` overrides
    the derived tripartite couplings g_j * lam / omega_m when set; the
    steady-state studies fix Lambda directly without re-specifying g and lam.
    """

    omega_m: float = 1.0
    omega_c: tuple[float, float] = (10.0, 10.0)
    # level energies (omega_0, omega_1, omega_2) per atom; defaults realize
    # the blue-detuned condition omega_2 - omega_1 - omega_c = -omega_m
    omega_atom: tuple[tuple[float, float, float], ...] = ((0.0, 5.0, 14.0), (0.0, 5.0, 14.0))
    g: tuple[float, float] = (100.0, 100.0)
    lam: float = 0.01
    Lambda: tuple[float, float] | None = None
    Omega1: tuple[float, float] = (0.0, 0.0)
    Omega2: tuple[float, float] = (0.0, 0.0)
    q: float = 0.0
    q_prime: float = 0.0
    gamma21: tuple[float, float] = (0.0, 0.0)
    gamma10: tuple[float, float] = (0.0, 0.0)
    kappa_a: tuple[float, float] = (0.0, 0.0)
    kappa_b: float = 0.0
    nbar_a: tuple[float, float] = (0.0, 0.0)
    nbar_c: tuple[float, float] = (0.0, 0.0)
    nbar_m: float = 0.0
    # quadrature measurement phases per bosonic mode
    phi_c1: float = math.pi / 4
    phi_m: float = -math.pi / 4
    phi_c2: float = math.pi / 4

    def __post_init__(self):
        if self.omega_m <= 0:
            raise ValueError("omega_m must be positive")
        for name in ("gamma21", "gamma10", "kappa_a", "nbar_a", "nbar_c"):
            if any(v < 0 for v in getattr(self, name)):
                raise ValueError(f"{name} entries must be non-negative")
        for name in ("kappa_b", "nbar_m", "q", "q_prime"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    def delta(self, j: int) -> float:
        """Detuning omega_2j - omega_1j - omega_cj for atom/cavity j (0-based)."""
        w = self.omega_atom[j]
        return w[2] - w[1] - self.omega_c[j]

    def tripartite(self, j: int) -> float:
        """Effective atom-photon-phonon coupling for branch j (0-based)."""
        if self.Lambda is not None:
            return self.Lambda[j]
        return self.g[j] * self.lam / self.omega_m

    def phi(self, mode: str) -> float:
        return {"cavity1": self.phi_c1, "mo": self.phi_m, "cavity2": self.phi_c2}[mode]

    def decay_rates(self) -> tuple[float, ...]:
        return self.gamma21 + self.gamma10 + self.kappa_a + (self.kappa_b,)

    def dissipative(self) -> bool:
        return any(r > 0 for r in self.decay_rates())


@dataclass(frozen=True)
class StatePrep:
    """One subsystem's initial-state recipe."""

    kind: str  # ground | fock | squeezed | cat | thermal
    n: int = 0
    xi: complex = 0j
    alpha: complex = 0j
    nbar: float = 0.0

    def __post_init__(self):
        if self.kind not in ("ground", "fock", "squeezed", "cat", "thermal"):
            raise ValueError(f"unknown state kind {self.kind!r}")
        if self.kind == "thermal" and self.nbar < 0:
            raise ValueError("thermal nbar must be non-negative")
        if self.kind == "fock" and self.n < 0:
            raise ValueError("fock index must be non-negative")

    @property
    def mixed(self) -> bool:
        return self.kind == "thermal" and self.nbar > 0


@dataclass(frozen=True)
class StateRecipe:
    """Per-subsystem preparation, in canonical order."""

    preps: tuple[StatePrep, ...]

    def mixed(self) -> bool:
        return any(p.mixed for p in self.preps)

    def vacuum_approximated(self) -> "tuple[StateRecipe, float]":
        """Replace weak thermal factors by ground states.

        Returns the pure recipe and an upper bound on the initial-state
        infidelity introduced (the summed thermal excitation probability).
        """
        err = 0.0
        preps = []
        for p in self.preps:
            if p.mixed:
                err += p.nbar / (1.0 + p.nbar)
                preps.append(StatePrep("ground"))
            else:
                preps.append(p)
        return StateRecipe(tuple(preps)), err


@dataclass(frozen=True)
class DissipatorSpec:
    """Jump operators with their folded rates.

    A pair (O, rate) contributes (rate/2) * (2 O rho O+ - O+O rho - rho O+O)
    to drho/dt, i.e. rate already includes thermal-occupation factors.
    """

    channels: tuple[tuple[hs.QOperator, float], ...]

    def __post_init__(self):
        if any(r < 0 for _, r in self.channels):
            raise ValueError("dissipation rates must be non-negative")

    def __len__(self):
        return len(self.channels)

    def __iter__(self):
        return iter(self.channels)

    @property
    def empty(self) -> bool:
        return len(self.channels) == 0


# ---------------------------------------------------------------------------
# operators on the standard space


def mode_ops(space: hs.CompositeSpace):
    """Annihilation operators (a1, b, a2) embedded in the full space."""
    _check_standard(space)
    a1 = hs.embed(hs.destroy(space.parts[2].dim), 2, space)
    b = hs.embed(hs.destroy(space.parts[3].dim), 3, space)
    a2 = hs.embed(hs.destroy(space.parts[4].dim), 4, space)
    return a1, b, a2


def sigma(space: hs.CompositeSpace, j: int, k: int, l: int) -> hs.QOperator:
    """|k><l| on atom j (0-based), embedded in the full space."""
    levels = space.parts[j].dim
    return hs.embed(hs.atomic_sigma(levels, k, l), j, space)


def build_full_hamiltonian(p: SystemParams, space: hs.CompositeSpace) -> hs.QOperator:
    """Lab-frame Hamiltonian: free mode/atom energies, Jaynes-Cummings coupling
    of each cavity to the upper atomic doublet, and the radiation-pressure
    coupling with alternating sign (-1)^j between the two cavities."""
    _check_standard(space)
    a1, b, a2 = mode_ops(space)
    cavities = (a1, a2)
    h = p.omega_m * (b.dag() @ b)
    for j in range(2):
        a = cavities[j]
        h = h + p.omega_c[j] * (a.dag() @ a)
        for i in range(3):
            h = h + p.omega_atom[j][i] * sigma(space, j, i, i)
        jc = p.g[j] * (a @ sigma(space, j, 2, 1))
        h = h + jc + jc.dag()
        sign = -1.0 if j == 0 else 1.0  # (-1)^j with j counted from 1
        h = h + sign * p.lam * ((a.dag() @ a) @ (b + b.dag()))
    return h


def build_effective_hamiltonian(p: SystemParams, space: hs.CompositeSpace) -> hs.QOperator:
    """Blue-detuned rotating-wave interaction: photon annihilation paired with
    atomic 1->2 excitation and phonon creation, opposite signs on the two
    branches."""
    _check_standard(space)
    for j in range(2):
        if abs(p.delta(j) + p.omega_m) > 1e-9 * max(1.0, p.omega_m):
            raise ModelRegimeError(
                f"effective Hamiltonian requires detuning = -omega_m; "
                f"branch {j + 1} has delta = {p.delta(j)!r}"
            )
    a1, b, a2 = mode_ops(space)
    cavities = (a1, a2)
    terms = None
    for j in range(2):
        sign = 1.0 if j == 0 else -1.0  # (-1)^(j+1) with j counted from 1
        t = (sign * p.tripartite(j)) * (cavities[j] @ sigma(space, j, 2, 1) @ b.dag())
        terms = t if terms is None else terms + t
    return terms + terms.dag()


def build_drive_hamiltonian(p: SystemParams, space: hs.CompositeSpace) -> hs.QOperator:
    """Resonant coherent drives on the 0<->2 (strength Omega1) and 0<->1
    (strength Omega2) transitions of both atoms."""
    _check_standard(space)
    h = None
    for j in range(2):
        t = p.Omega1[j] * (sigma(space, j, 0, 2) + sigma(space, j, 2, 0)) + p.Omega2[j] * (
            sigma(space, j, 0, 1) + sigma(space, j, 1, 0)
        )
        h = t if h is None else h + t
    return h


def build_squeeze_pump(p: SystemParams, space: hs.CompositeSpace, target: str) -> hs.QOperator:
    """Two-photon (two-phonon) pump q (b^dag^2 + b^2) on the chosen mode."""
    _check_standard(space)
    a1, b, _ = mode_ops(space)
    if target == "mo":
        op, amp = b, p.q
    elif target == "cavity1":
        op, amp = a1, p.q_prime
    else:
        raise ValueError(f"squeeze pump target must be 'mo' or 'cavity1', got {target!r}")
    sq = (op.dag() @ op.dag()) + (op @ op)
    return amp * sq


def build_dissipators(p: SystemParams, space: hs.CompositeSpace) -> DissipatorSpec:
    """All thermal decay/excitation channels; zero-rate channels are omitted.

    Channel order: per atom (2->1 down/up, 1->0 down/up), per cavity
    (down/up), then the mechanical mode (down/up).
    """
    _check_standard(space)
    a1, b, a2 = mode_ops(space)
    cavities = (a1, a2)
    channels: list[tuple[hs.QOperator, float]] = []

    def add(op, rate):
        if rate > 0:
            channels.append((op, rate))

    for j in range(2):
        add(sigma(space, j, 1, 2), p.gamma21[j] * (1.0 + p.nbar_a[j]))
        add(sigma(space, j, 2, 1), p.gamma21[j] * p.nbar_a[j])
        add(sigma(space, j, 0, 1), p.gamma10[j] * (1.0 + p.nbar_a[j]))
        add(sigma(space, j, 1, 0), p.gamma10[j] * p.nbar_a[j])
    for j in range(2):
        add(cavities[j], p.kappa_a[j] * (1.0 + p.nbar_c[j]))
        add(cavities[j].dag(), p.kappa_a[j] * p.nbar_c[j])
    add(b, p.kappa_b * (1.0 + p.nbar_m))
    add(b.dag(), p.kappa_b * p.nbar_m)
    return DissipatorSpec(tuple(channels))


# ---------------------------------------------------------------------------
# single-mode initial states


def squeezed_vacuum(truncation: int, xi: complex, tail_tol: float = TAIL_TOL) -> hs.QState:
    """exp[(xi* a^2 - xi a^dag^2)/2] |0>, built by matrix exponential on the
    truncated space and renormalized. Only even Fock amplitudes are nonzero."""
    amps = _squeezed_amplitudes(truncation, xi)
    tail = _squeezed_tail(truncation, xi)
    if tail > tail_tol:
        raise TruncationTooSmallError(
            f"squeezed state xi={xi!r} leaves tail population {tail:.2e} beyond "
            f"truncation {truncation} (tolerance {tail_tol})"
        )
    space = hs.single_mode_space(hs.boson(truncation, "mode"))
    return hs.vector_state(space, amps)


def _squeezed_amplitudes(truncation: int, xi: complex) -> np.ndarray:
    a = hs.destroy(truncation).to_dense()
    gen = 0.5 * (np.conj(xi) * (a @ a) - xi * (a.conj().T @ a.conj().T))
    vac = np.zeros(truncation, dtype=np.complex128)
    vac[0] = 1.0
    psi = scipy.linalg.expm(gen) @ vac
    return psi / np.linalg.norm(psi)

def _squeezed_tail(truncation: int, xi: complex) -> float:
    # reference build on a much larger space measures what the truncation cuts
    ref = _squeezed_amplitudes(2 * truncation + 16, xi)
    return float(1.0 - np.sum(np.abs(ref[:truncation]) ** 2))


def cat_state(truncation: int, alpha: complex, tail_tol: float = TAIL_TOL) -> hs.QState:
    """Even superposition of |alpha> and |-alpha>, normalized on the truncation."""
    space = hs.single_mode_space(hs.boson(truncation, "mode"))
    if alpha == 0:
        data = np.zeros(truncation, dtype=np.complex128)
        data[0] = 1.0
        return hs.vector_state(space, data)
    ns = np.arange(truncation)
    log_fact = np.cumsum(np.concatenate(([0.0], np.log(np.arange(1, truncation, dtype=float)))))
    # coherent-state amplitudes; odd terms cancel between |alpha> and |-alpha>
    amps = np.exp(-0.5 * abs(alpha) ** 2 + ns * np.log(complex(alpha)) - 0.5 * log_fact)
    amps[1::2] = 0.0
    n_sq = 0.5 / (1.0 + math.exp(-2.0 * abs(alpha) ** 2))  # exact normalization |N|^2
    tail = float(1.0 - 4.0 * n_sq * np.sum(np.abs(amps) ** 2))
    if tail > tail_tol:
        raise TruncationTooSmallError(
            f"cat state alpha={alpha!r} leaves tail population {tail:.2e} beyond "
            f"truncation {truncation} (tolerance {tail_tol})"
        )
    return hs.vector_state(space, amps / np.linalg.norm(amps))


def thermal_state(truncation: int, nbar: float) -> hs.QState:
    """Diagonal Fock-basis thermal mixture p_n = nbar^n/(1+nbar)^(n+1), renormalized."""
    if nbar < 0:
        raise ValueError("nbar must be non-negative")
    ns = np.arange(truncation, dtype=float)
    if nbar == 0:
        p = np.zeros(truncation)
        p[0] = 1.0
    else:
        p = np.exp(ns * math.log(nbar) - (ns + 1.0) * math.log(1.0 + nbar))
        p = p / p.sum()
    space = hs.single_mode_space(hs.boson(truncation, "mode"))
    return hs.density_state(space, np.diag(p.astype(np.complex128)))


def thermal_occupation(omega: float, temperature: float) -> float:
    """Bose-Einstein occupation (hbar = kB = 1)."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if omega <= 0:
        raise ValueError("omega must be positive")
    x = omega / temperature
    if x > 700:  # expm1 overflow; occupation underflows to zero anyway
        return 0.0
    return 1.0 / math.expm1(x)


def fock_state(truncation: int, n: int) -> hs.QState:
    if not (0 <= n < truncation):
        raise ValueError(f"fock index {n} out of range for truncation {truncation}")
    space = hs.single_mode_space(hs.boson(truncation, "mode"))
    data = np.zeros(truncation, dtype=np.complex128)
    data[n] = 1.0
    return hs.vector_state(space, data)


def _prep_state(prep: StatePrep, part: hs.SubsystemSpec, tail_tol: float) -> hs.QState:
    d = part.dim
    if prep.kind == "ground":
        data = np.zeros(d, dtype=np.complex128)
        data[0] = 1.0
        return hs.vector_state(hs.single_mode_space(part), data)
    if prep.kind == "fock":
        if not (0 <= prep.n < d):
            raise ValueError(f"fock index {prep.n} out of range for {part.label!r}")
        data = np.zeros(d, dtype=np.complex128)
        data[prep.n] = 1.0
        return hs.vector_state(hs.single_mode_space(part), data)
    if part.kind != hs.BOSON:
        raise ValueError(f"{prep.kind!r} recipe needs a bosonic subsystem, not {part.label!r}")
    if prep.kind == "squeezed":
        st = squeezed_vacuum(d, prep.xi, tail_tol)
    elif prep.kind == "cat":
        st = cat_state(d, prep.alpha, tail_tol)
    else:
        st = thermal_state(d, prep.nbar)
    return st


def assemble_initial_state(
    recipe: StateRecipe, space: hs.CompositeSpace, tail_tol: float = TAIL_TOL
) -> hs.QState:
    """Tensor product of per-subsystem preparations. The result is a vector
    unless some factor is mixed, in which case vectors are promoted."""
    if len(recipe.preps) != len(space.parts):
        raise SpaceShapeError(
            f"recipe has {len(recipe.preps)} entries for {len(space.parts)} subsystems"
        )
    factors = [
        _prep_state(prep, part, tail_tol) for prep, part in zip(recipe.preps, space.parts)
    ]
    if not any(f.kind == hs.DENSITY for f in factors):
        data = hs.tensor_vectors(space, [f.data for f in factors])
        return hs.vector_state(space, data)
    rho = None
    for f in factors:
        m = f.to_density().data
        rho = m if rho is None else np.kron(rho, m)
    return hs.density_state(space, rho, positivity_floor=None)
