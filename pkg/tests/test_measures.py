import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from optomech import hilbert as hs, measures, model
from optomech.errors import SpaceMismatchError, SpaceShapeError

RNG = np.random.default_rng(42)


def random_density(dim, rng=RNG):
    m = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    rho = m @ m.conj().T
    return rho / np.trace(rho)


def qubit_pair():
    return hs.CompositeSpace((hs.atom(2, "A"), hs.atom(2, "B")))


def bell():
    return hs.vector_state(qubit_pair(), np.array([1, 0, 0, 1]) / math.sqrt(2))


# ---------------------------------------------------------------------------
# fidelity


def test_fidelity_identity_and_orthogonal():
    space = hs.single_mode_space(hs.boson(4, "m"))
    rho = hs.density_state(space, random_density(4))
    assert measures.fidelity(rho, rho) == pytest.approx(1.0, abs=1e-9)
    f0 = hs.basis_ket(space, (0,))
    f1 = hs.basis_ket(space, (1,))
    assert measures.fidelity(f0.to_density(), f1.to_density()) == pytest.approx(0.0, abs=1e-12)
    assert measures.fidelity(f0, f1) == 0.0


def test_fidelity_symmetric_and_mixed_pure_consistency():
    space = hs.single_mode_space(hs.boson(5, "m"))
    r1 = hs.density_state(space, random_density(5))
    r2 = hs.density_state(space, random_density(5))
    assert measures.fidelity(r1, r2) == pytest.approx(measures.fidelity(r2, r1), abs=1e-9)
    psi = hs.basis_ket(space, (2,))
    # pure-vs-mixed shortcut agrees with the full eigen route
    assert measures.fidelity(psi, r1) == pytest.approx(
        measures.fidelity(psi.to_density(), r1), abs=1e-9
    )


def test_fidelity_one_iff_equal():
    space = hs.single_mode_space(hs.boson(4, "m"))
    for _ in range(5):
        r1 = random_density(4)
        r2 = random_density(4)
        f = measures.fidelity(hs.density_state(space, r1), hs.density_state(space, r2))
        same = np.max(np.abs(r1 - r2)) < 1e-6
        assert (f > 1 - 1e-9) == same


def test_fidelity_dimension_mismatch():
    a = hs.basis_ket(hs.single_mode_space(hs.boson(4, "m")), (0,))
    b = hs.basis_ket(hs.single_mode_space(hs.boson(5, "m")), (0,))
    with pytest.raises(SpaceMismatchError):
        measures.fidelity(a, b)


def test_fidelity_on_mode():
    space = model.standard_space(8, 3, 3)
    recipe = model.StateRecipe((
        model.StatePrep("ground"), model.StatePrep("ground"),
        model.StatePrep("squeezed", xi=0.3),
        model.StatePrep("ground"), model.StatePrep("ground"),
    ))
    psi = model.assemble_initial_state(recipe, space)
    ref = model.squeezed_vacuum(8, 0.3)
    assert measures.fidelity_on_mode(psi, "cavity1", ref) == pytest.approx(1.0, abs=1e-9)
    # cavity 2 sits in vacuum; its truncation (3) fixes the comparison space
    ref3 = model.squeezed_vacuum(3, 0.3, tail_tol=1.0)
    assert measures.fidelity_on_mode(psi, "cavity2", ref3) == pytest.approx(
        abs(ref3.data[0]), abs=1e-9
    )


# ---------------------------------------------------------------------------
# negativity


def test_negativity_product_state_zero():
    space = qubit_pair()
    rho = np.kron(random_density(2), random_density(2))
    assert measures.negativity(hs.density_state(space, rho)) == pytest.approx(0.0, abs=1e-10)


def test_negativity_bell_half():
    # oracle: 4x4 partial-transpose spectrum (-1/2, 1/2, 1/2, 1/2)
    assert measures.negativity(bell().to_density(), 0) == pytest.approx(0.5, abs=1e-9)


def test_negativity_same_for_either_part():
    space = qubit_pair()
    rho = 0.7 * bell().to_density().data + 0.3 * np.kron(random_density(2), random_density(2))
    state = hs.density_state(space, rho)
    assert measures.negativity(state, 0) == pytest.approx(measures.negativity(state, 1), abs=1e-10)


def test_negativity_local_unitary_invariance():
    rng = np.random.default_rng(11)
    state = bell().to_density()
    base = measures.negativity(state)
    for _ in range(4):
        u1, _ = np.linalg.qr(rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2)))
        u2, _ = np.linalg.qr(rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2)))
        u = np.kron(u1, u2)
        rot = hs.density_state(state.space, u @ state.data @ u.conj().T)
        assert measures.negativity(rot) == pytest.approx(base, abs=1e-8)


def test_negativity_needs_two_parts():
    space = model.standard_space(3, 3, 3)
    rho = model.assemble_initial_state(
        model.StateRecipe(tuple(model.StatePrep("ground") for _ in range(5))), space
    ).to_density()
    with pytest.raises(SpaceShapeError):
        measures.negativity(rho)


# ---------------------------------------------------------------------------
# residual contangle


def ghz():
    space = hs.CompositeSpace((hs.atom(2, "A"), hs.atom(2, "B"), hs.atom(2, "C")))
    v = np.zeros(8)
    v[0] = v[7] = 1 / math.sqrt(2)
    return hs.vector_state(space, v)


def test_contangle_product_zero():
    space = hs.CompositeSpace((hs.atom(2, "A"), hs.atom(2, "B"), hs.atom(2, "C")))
    res = measures.residual_contangle(hs.basis_ket(space, (0, 0, 0)))
    assert res.minimum == pytest.approx(0.0, abs=1e-10)


def test_contangle_ghz():
    # brute-force oracle on the 8x8 state: E(A|BC) = [log2 ||rho^Ta||_1]^2 = 1,
    # both pairwise contangles vanish, so each rooted residual equals 1
    state = ghz()
    rho = state.to_density()
    pt = hs.partial_transpose(rho, 0)
    assert hs.trace_norm(pt) == pytest.approx(2.0, abs=1e-10)
    res = measures.residual_contangle(state)
    for root, val in res.residual_by_root.items():
        assert val == pytest.approx(1.0, abs=1e-9)
    assert res.minimum == pytest.approx(1.0, abs=1e-6)


def test_contangle_invariant_under_relabeling():
    rng = np.random.default_rng(5)
    space = hs.CompositeSpace((hs.atom(2, "A"), hs.atom(2, "B"), hs.atom(2, "C")))
    v = rng.normal(size=8) + 1j * rng.normal(size=8)
    v /= np.linalg.norm(v)
    base = measures.residual_contangle(hs.vector_state(space, v)).minimum
    # swap B and C: same minimum
    perm = np.transpose(v.reshape(2, 2, 2), (0, 2, 1)).reshape(-1)
    swapped = measures.residual_contangle(hs.vector_state(space, perm)).minimum
    assert swapped == pytest.approx(base, abs=1e-9)


def test_contangle_needs_three_parts():
    with pytest.raises(SpaceShapeError):
        measures.residual_contangle(bell().to_density())


# ---------------------------------------------------------------------------
# quadratures


def test_quadrature_vacuum_quarter():
    space = hs.single_mode_space(hs.boson(8, "m"))
    vac = hs.basis_ket(space, (0,))
    for phi in (0.0, 0.4, -math.pi / 4, 1.1):
        for which in ("X", "Y"):
            var = measures.quadrature_variance(vac, measures.QuadratureSpec(0, phi, which))
            assert var == pytest.approx(0.25, abs=1e-12)


def test_quadrature_squeezed_analytic():
    for r in (0.1, 0.3, 0.5):
        st_ = model.squeezed_vacuum(24, r)
        var_x = measures.quadrature_variance(st_, measures.QuadratureSpec(0, 0.0, "X"))
        var_y = measures.quadrature_variance(st_, measures.QuadratureSpec(0, 0.0, "Y"))
        assert var_x == pytest.approx(math.exp(-2 * r) / 4, abs=1e-4)
        assert var_y == pytest.approx(math.exp(+2 * r) / 4, rel=1e-3)


def test_quadrature_thermal():
    for nbar in (0.2, 1.0):
        st_ = model.thermal_state(30, nbar)
        var = measures.quadrature_variance(st_, measures.QuadratureSpec(0, 0.7, "X"))
        assert var == pytest.approx((2 * nbar + 1) / 4, rel=1e-6)


def test_quadrature_heisenberg_bound():
    states = [
        model.squeezed_vacuum(24, 0.5),
        model.thermal_state(20, 0.3),
        model.cat_state(24, 1.5),
    ]
    for st_ in states:
        for phi in (0.0, math.pi / 4, 1.0):
            vx = measures.quadrature_variance(st_, measures.QuadratureSpec(0, phi, "X"))
            vy = measures.quadrature_variance(st_, measures.QuadratureSpec(0, phi, "Y"))
            assert vx * vy >= 1 / 16 - 1e-9


def test_quadrature_pump_squeezes_minus_quarter_axis():
    # steady state of q(b^2 + b+^2) with damping squeezes X at phi = -pi/4
    import scipy.sparse as sp

    from optomech import dynamics

    n = 12
    space = hs.single_mode_space(hs.boson(n, "m"))
    b = hs.destroy(n, "m")
    h = 0.01 * ((b @ b) + (b.dag() @ b.dag()))
    diss = model.DissipatorSpec(((b, 0.2),))
    res = dynamics.steady_state(
        h, diss, hs.basis_ket(space, (0,)),
        dynamics.SteadyStateCriteria(window=40.0, max_time=500.0, block=10.0),
    )
    v_minus = measures.quadrature_variance(res.state, measures.QuadratureSpec(0, -math.pi / 4))
    v_plus = measures.quadrature_variance(res.state, measures.QuadratureSpec(0, math.pi / 4))
    assert v_minus < 0.25 < v_plus


def test_quadrature_rejects_atoms():
    space = model.standard_space(3, 3, 3)
    psi = hs.basis_ket(space, (0, 0, 0, 0, 0))
    with pytest.raises(ValueError):
        measures.quadrature_variance(psi, measures.QuadratureSpec(0, 0.0))


# ---------------------------------------------------------------------------
# Wigner


def test_wigner_vacuum():
    space = hs.single_mode_space(hs.boson(6, "m"))
    vac = hs.basis_ket(space, (0,))
    # odd resolution puts a grid point exactly at the origin
    grid = measures.wigner(vac, measures.WignerSpec(resolution=129))
    i0 = np.argmin(np.abs(grid.x))
    j0 = np.argmin(np.abs(grid.p))
    assert grid.x[i0] == 0.0 and grid.p[j0] == 0.0
    assert grid.values[j0, i0] == pytest.approx(1 / math.pi, abs=1e-6)
    assert grid.integral() == pytest.approx(1.0, abs=2e-2)


def test_wigner_fock1_negative_dip():
    space = hs.single_mode_space(hs.boson(6, "m"))
    f1 = hs.basis_ket(space, (1,))
    grid = measures.wigner(f1, measures.WignerSpec(resolution=65))
    i0 = np.argmin(np.abs(grid.x))
    j0 = np.argmin(np.abs(grid.p))
    assert grid.values[j0, i0] == pytest.approx(-1 / math.pi, abs=1e-6)


def test_wigner_linearity_in_the_state():
    space = hs.single_mode_space(hs.boson(5, "m"))
    r1 = hs.density_state(space, random_density(5))
    r2 = hs.density_state(space, random_density(5))
    mix = hs.density_state(space, 0.3 * r1.data + 0.7 * r2.data)
    spec = measures.WignerSpec(resolution=32)
    w = measures.wigner(mix, spec).values
    w12 = 0.3 * measures.wigner(r1, spec).values + 0.7 * measures.wigner(r2, spec).values
    assert np.max(np.abs(w - w12)) < 1e-9


def test_wigner_even_parity_symmetry():
    spec = measures.WignerSpec(resolution=48)
    for st_ in (model.squeezed_vacuum(16, 0.4), model.cat_state(20, 1.5)):
        w = measures.wigner(st_, spec).values
        assert np.max(np.abs(w - w[::-1, ::-1])) < 1e-8


def test_wigner_rejects_multimode():
    space = qubit_pair()
    with pytest.raises(SpaceShapeError):
        measures.wigner(bell().to_density())


# ---------------------------------------------------------------------------
# populations


def test_population_basis_state():
    space = model.standard_space(4, 3, 3)
    psi = hs.basis_ket(space, (0, 0, 2, 0, 0))
    assert measures.population(psi, (0, 0, 2, 0, 0)) == pytest.approx(1.0)
    assert measures.population(psi, (0, 0, 1, 0, 0)) == 0.0
    with pytest.raises(ValueError):
        measures.population(psi, (0, 0, 9, 0, 0))


def test_population_completeness():
    space = model.standard_space(3, 3, 3)
    rng = np.random.default_rng(2)
    v = rng.normal(size=space.dim) + 1j * rng.normal(size=space.dim)
    v /= np.linalg.norm(v)
    psi = hs.vector_state(space, v)
    total = sum(
        measures.population(psi, (i, j, k, l, m))
        for i in range(3) for j in range(3) for k in range(3)
        for l in range(3) for m in range(3)
    )
    assert total == pytest.approx(1.0, abs=1e-8)


def test_occupation_marginal():
    space = model.standard_space(4, 3, 4)
    psi = hs.basis_ket(space, (0, 0, 2, 0, 1))
    assert measures.occupation_marginal(psi, "cavity1", 2) == pytest.approx(1.0)
    assert measures.occupation_marginal(psi, "cavity2", 1) == pytest.approx(1.0)
    assert measures.occupation_marginal(psi, "cavity2", 0) == 0.0
    rho = psi.to_density()
    assert measures.occupation_marginal(rho, "cavity1", 2) == pytest.approx(1.0)


@given(st.integers(min_value=0, max_value=2))
@settings(max_examples=8, deadline=None)
def test_occupation_marginal_sums_to_one(seed):
    space = model.standard_space(3, 3, 3)
    rng = np.random.default_rng(seed)
    v = rng.normal(size=space.dim) + 1j * rng.normal(size=space.dim)
    v /= np.linalg.norm(v)
    psi = hs.vector_state(space, v)
    total = sum(measures.occupation_marginal(psi, "mo", n) for n in range(3))
    assert total == pytest.approx(1.0, abs=1e-9)
