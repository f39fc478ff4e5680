import numpy as np
import pytest
from scipy.integrate import solve_ivp

from kflows.geometry import DomainError
from kflows.ode import dopri5


def oscillator(t, y):
    return np.array([y[1], -y[0]])


def test_harmonic_oscillator_global_error():
    sol = dopri5(oscillator, 0.0, np.array([1.0, 0.0]), 50.0)
    assert sol.status == "success"
    assert abs(sol.y[-1, 0] - np.cos(50.0)) < 1e-8
    assert np.max(np.abs(sol.y[:, 0] - np.cos(sol.t))) < 1e-8


def test_dense_output_between_steps():
    sol = dopri5(oscillator, 0.0, np.array([1.0, 0.0]), 10.0)
    tq = np.linspace(0.0, 10.0, 997)
    assert np.max(np.abs(sol(tq)[:, 0] - np.cos(tq))) < 1e-8
    assert sol(3.3).shape == (2,)


def test_backward_integration():
    sol = dopri5(oscillator, 0.0, np.array([1.0, 0.0]), -7.0)
    assert sol.t[-1] == -7.0
    assert abs(sol(-4.0)[0] - np.cos(4.0)) < 1e-9


def test_complex_state_matches_scipy():
    def f(t, z):
        return np.array([1j * z[0] + np.sin(t) * z[1], -z[0] * z[1].conjugate()])

    z0 = np.array([1.0 + 0.5j, 0.2 - 0.1j])
    ours = dopri5(f, 0.0, z0, 4.0, rtol=1e-11, atol=1e-13)
    ref = solve_ivp(f, (0.0, 4.0), z0, method="DOP853", rtol=1e-12, atol=1e-14, dense_output=True)
    assert np.max(np.abs(ours.y - ref.sol(ours.t).T)) < 1e-8


def test_stop_callback_truncates():
    sol = dopri5(oscillator, 0.0, np.array([1.0, 0.0]), 10.0, stop=lambda t, y: "crossed" if y[0] < 0 else None)
    assert sol.status == "crossed"
    assert np.pi / 2 - 0.5 < sol.t[-1] < np.pi / 2 + 0.5


def test_domain_error_shrinks_step_then_reports_exit():
    def f(t, y):
        if y[0] >= 1.0:
            raise DomainError("wall")
        return np.array([1.0])

    sol = dopri5(f, 0.0, np.array([0.0]), 5.0)
    assert sol.status == "chart_exit"
    assert 1.0 - 1e-9 < sol.y[-1, 0] < 1.0


def test_blow_up_raises():
    from kflows.ode import StepSizeError

    with pytest.raises(StepSizeError):
        dopri5(lambda t, y: y * y, 0.0, np.array([1.0]), 2.0)


@pytest.mark.parametrize("rtol", [1e-4, 1e-7, 1e-10])
def test_error_tracks_tolerance(rtol):
    sol = dopri5(oscillator, 0.0, np.array([1.0, 0.0]), 20.0, rtol=rtol, atol=rtol * 1e-2)
    err = np.max(np.abs(sol.y[:, 0] - np.cos(sol.t)))
    assert err < 2000 * rtol
