import numpy as np
import pytest

from optomech.errors import IntegratorAccuracyError
from optomech.integrate import integrate_adaptive


def collect(times):
    out = {}

    def on_sample(t, y):
        out[round(t, 12)] = np.array(y, copy=True)

    return out, on_sample


def test_exponential_decay():
    seen, on_sample = collect(None)
    ts = np.linspace(0.0, 5.0, 11)
    y_end, stats = integrate_adaptive(
        lambda t, y, out: np.negative(y, out=out), 0.0, np.array([1.0 + 0j]), 5.0, ts, on_sample, rtol=1e-10, atol=1e-14
    )
    assert y_end[0] == pytest.approx(np.exp(-5.0), rel=1e-8)
    for t in ts:
        assert seen[round(t, 12)][0] == pytest.approx(np.exp(-t), rel=1e-8)
    assert stats.steps > 0 and stats.rejected < stats.steps


def test_oscillator_phase_accuracy():
    w = 7.0
    _, on_sample = collect(None)
    y_end, _ = integrate_adaptive(
        lambda t, y, out: np.multiply(y, -1j * w, out=out), 0.0, np.array([1.0 + 0j]), 3.0, [3.0], on_sample,
        rtol=1e-10, atol=1e-14,
    )
    assert abs(y_end[0] - np.exp(-1j * w * 3.0)) < 1e-7


def test_samples_hit_exactly():
    ts = [0.0, 0.3331, 1.77777, 2.0]
    seen, on_sample = collect(None)
    integrate_adaptive(
        lambda t, y, out: np.multiply(y, 0.0, out=out), 0.0, np.zeros(3, complex), 2.0, ts, on_sample, rtol=1e-8, atol=1e-12
    )
    assert sorted(seen) == [round(t, 12) for t in ts]


def test_matrix_state_and_post_step():
    # dy/dt = A y + y A^dag keeps y Hermitian; post_step projects and counts
    a = np.array([[0.0, 1.0], [-1.0, 0.3]], dtype=complex)
    calls = []

    def rhs(t, y, out):
        out[...] = a @ y + y @ a.conj().T

    def post(t, y):
        calls.append(t)
        return 0.5 * (y + y.conj().T)

    y0 = np.diag([1.0, 0.0]).astype(complex)
    y, stats = integrate_adaptive(rhs, 0.0, y0, 1.0, [1.0], lambda t, y: None,
                                  rtol=1e-9, atol=1e-13, post_step=post)
    assert len(calls) == stats.steps
    assert np.max(np.abs(y - y.conj().T)) == 0.0


def test_two_level_rabi_oracle_and_step_halving():
    omega = 2.0
    h = omega * np.array([[0, 1], [1, 0]], dtype=complex)

    def rhs(t, y, out):
        out[...] = -1j * (h @ y)

    def run(rtol):
        y, _ = integrate_adaptive(
            rhs, 0.0, np.array([1, 0], complex), 2.5, [2.5],
            lambda t, y: None, rtol=rtol, atol=1e-14,
        )
        return y

    y1 = run(1e-8)
    p_excited = abs(y1[1]) ** 2
    assert p_excited == pytest.approx(np.sin(omega * 2.5) ** 2, abs=1e-7)
    # tolerance tau vs tau/10 changes the final state by < 1e-6 in overlap
    y2 = run(1e-9)
    fid = abs(np.vdot(y1 / np.linalg.norm(y1), y2 / np.linalg.norm(y2)))
    assert 1.0 - fid < 1e-6


def test_step_budget_guard():
    with pytest.raises(IntegratorAccuracyError):
        integrate_adaptive(
            lambda t, y, out: np.multiply(y, -1j * 1e3, out=out),
            0.0, np.array([1.0 + 0j]), 10.0, [10.0],
            lambda t, y: None, rtol=1e-10, atol=1e-14, max_steps=10,
        )


def test_zero_span_fires_initial_sample_only():
    seen, on_sample = collect(None)
    y, stats = integrate_adaptive(
        lambda t, y, out: np.negative(y, out=out), 0.0, np.array([2.0 + 0j]), 0.0, [0.0], on_sample, 1e-8, 1e-12
    )
    assert stats.steps == 0
    assert seen[0.0][0] == 2.0
