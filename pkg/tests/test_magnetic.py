import numpy as np
import pytest

from conftest import MODEL_SPACES, sample_direction, sample_point
from kflows.geometry import SpaceSpec, real_metric, to_real
from kflows.magnetic import (
    ClosednessError,
    MagneticField,
    apply_lorentz,
    classify_closure,
    integrate_magnetic,
    lorentz_operator,
    real_J,
    scaling_check,
    unit_speed,
    verify_uniform,
)
from kflows.trajectory import TrajectoryState


def kahler_as_general(space, q):
    return MagneticField.general(lambda x: q * real_J(space.n).T @ real_metric(space, x))


class TestLorentz:
    def test_kahler_is_i_times_q(self):
        sp = MODEL_SPACES["CP2"]
        v = np.array([1 + 2j, -0.5j])
        assert apply_lorentz(sp, MagneticField.kahler(2.0), np.array([0.1, 0.2j]), v) == pytest.approx(2j * v)

    @pytest.mark.parametrize("label", list(MODEL_SPACES))
    def test_general_form_reproduces_kahler(self, label, rng):
        sp = MODEL_SPACES[label]
        z = sample_point(sp, rng)
        I_gen = lorentz_operator(sp, kahler_as_general(sp, 0.7), z)
        assert np.max(np.abs(I_gen - lorentz_operator(sp, MagneticField.kahler(0.7), z))) < 1e-12

    def test_uniform_fields(self, rng):
        for sp in MODEL_SPACES.values():
            pts = [sample_point(sp, rng) for _ in range(3)]
            assert verify_uniform(sp, MagneticField.kahler(1.3), pts)[0]
            assert verify_uniform(sp, kahler_as_general(sp, 1.3), pts)[0]

    def test_non_uniform_field(self, rng):
        sp = MODEL_SPACES["CP1"]
        B = MagneticField.general(lambda x: (1 + x[0]) * real_J(1).T @ real_metric(sp, x))
        ok, worst = verify_uniform(sp, B, [sample_point(sp, rng) for _ in range(3)])
        assert not ok and worst > 0.1

    def test_open_2form_rejected(self):
        sp = SpaceSpec.flat(2)
        B = MagneticField.general(lambda x: x[0] * real_J(2).T @ real_metric(sp, x))
        with pytest.raises(ClosednessError):
            integrate_magnetic(sp, B, TrajectoryState([0.1, 0.2], [1, 0]), (0, 1))

    def test_non_skew_rejected(self):
        sp = SpaceSpec.flat(1)
        with pytest.raises(ClosednessError):
            integrate_magnetic(sp, MagneticField.general(lambda x: np.eye(2)), TrajectoryState([0], [1]), (0, 1))


class TestTrajectories:
    def test_flat_closed_form(self):
        tr = integrate_magnetic(SpaceSpec.flat(1), MagneticField.kahler(1.0), TrajectoryState([0], [1]), (0, 10))
        assert np.max(np.abs(tr.z[:, 0] + 1j * (np.exp(1j * tr.t) - 1))) < 1e-8

    def test_general_integration_matches_kahler(self):
        sp = MODEL_SPACES["CP2"]
        s0 = TrajectoryState([0.1, -0.2j], [0.3, 0.1 + 0.1j])
        a = integrate_magnetic(sp, MagneticField.kahler(0.8), s0, (0, 3))
        b = integrate_magnetic(sp, kahler_as_general(sp, 0.8), s0, (0, 3))
        z, _ = b.at(a.t)
        assert np.max(np.abs(z - a.z)) < 1e-7

    def test_cp1_geodesic_through_origin(self):
        # geodesics of the round metric through 0 are rays z = tan(t/2) e^{i theta} at unit speed
        sp = SpaceSpec.projective(1)
        s0 = unit_speed(sp, TrajectoryState([0], [np.exp(0.4j)]))
        tr = integrate_magnetic(sp, MagneticField.kahler(0.0), s0, (0, 3))
        assert np.max(np.abs(tr.z[:, 0] - np.tan(tr.t / 2) * np.exp(0.4j))) < 1e-8

    @pytest.mark.parametrize("label", list(MODEL_SPACES))
    @pytest.mark.parametrize("q", [0.0, 0.5, -2.0])
    def test_speed_conservation(self, label, q, rng):
        sp = MODEL_SPACES[label]
        z = sample_point(sp, rng, 0.3)
        v = sample_direction(sp, z, rng)
        v = 0.2 * v / np.sqrt(abs(sp_speed(sp, z, v)))
        tr = integrate_magnetic(sp, MagneticField.kahler(q), TrajectoryState(z, v), (0, 50))
        assert tr.speed_drift < 1e-8

    def test_drift_tracks_tolerance(self):
        sp = MODEL_SPACES["CP2"]
        s0 = TrajectoryState([0.2, 0.1j], [0.5, -0.3 + 0.2j])
        for rtol in (1e-5, 1e-7, 1e-9):
            tr = integrate_magnetic(sp, MagneticField.kahler(1.0), s0, (0, 20), rtol=rtol, atol=rtol * 1e-2)
            assert tr.speed_drift < 100 * rtol

    def test_drift_floor_near_chart_boundary(self):
        # a geodesic heading for the ideal boundary: the chart only resolves 1 + S to ~1e-16,
        # so the measured drift is bounded below by roughly eps / min(1 + S), not by the integrator
        sp = SpaceSpec.hyperbolic(1)
        tr = integrate_magnetic(sp, MagneticField.kahler(0.0), TrajectoryState([0.1], [0.5]), (0, 50))
        low = float(np.min(1.0 - np.abs(tr.z[:, 0]) ** 2))
        assert low < 1e-8
        assert 1e-17 < tr.speed_drift * low < 1e-14

    def test_chart_exit_flag(self):
        sp = SpaceSpec.hyperbolic(1)
        s0 = unit_speed(sp, TrajectoryState([0], [1]))
        tr = integrate_magnetic(sp, MagneticField.kahler(0.0), s0, (0, 100))
        assert tr.exit_flag == "chart_exit" and tr.t[-1] < 100


def sp_speed(sp, z, v):
    from kflows.geometry import speed2

    return speed2(sp, z, v)


class TestClosure:
    @pytest.mark.parametrize("q", [1.25, 1.5, 2.0])
    def test_ch1_closed_above_threshold(self, q):
        sp = SpaceSpec.hyperbolic(1)
        s0 = unit_speed(sp, TrajectoryState([0.1], [1]))
        tr = integrate_magnetic(sp, MagneticField.kahler(q), s0, (0, 40), rtol=1e-12, atol=1e-14)
        c = classify_closure(tr)
        assert c.kind == "closed"
        assert c.period == pytest.approx(2 * np.pi / np.sqrt(q * q - 1), rel=1e-8)

    @pytest.mark.parametrize("q", [0.0, 0.5, 0.9])
    def test_ch1_open_below_threshold(self, q):
        sp = SpaceSpec.hyperbolic(1)
        s0 = unit_speed(sp, TrajectoryState([0.1], [1]))
        tr = integrate_magnetic(sp, MagneticField.kahler(q), s0, (0, 200))
        assert classify_closure(tr).kind == "open"

    def test_ch1_boundary_undetermined(self):
        sp = SpaceSpec.hyperbolic(1)
        s0 = unit_speed(sp, TrajectoryState([0.1], [1]))
        tr = integrate_magnetic(sp, MagneticField.kahler(1.0), s0, (0, 20))
        assert classify_closure(tr).kind == "undetermined"

    @pytest.mark.parametrize("q", [0.0, 0.5, 2.0])
    def test_cp1_always_closed(self, q):
        sp = SpaceSpec.projective(1)
        s0 = unit_speed(sp, TrajectoryState([0.3 + 0.1j], [1 - 1j]))
        tr = integrate_magnetic(sp, MagneticField.kahler(q), s0, (0, 15), rtol=1e-12, atol=1e-14)
        c = classify_closure(tr)
        assert c.kind == "closed"
        assert c.period == pytest.approx(2 * np.pi / np.sqrt(1 + q * q), rel=1e-8)

    def test_cp1_orbit_through_infinity(self):
        # the great circle through the origin leaves the chart; that is not an escape
        sp = SpaceSpec.projective(1)
        tr = integrate_magnetic(sp, MagneticField.kahler(0.0), unit_speed(sp, TrajectoryState([0], [1])), (0, 10))
        c = classify_closure(tr)
        assert tr.exit_flag == "chart_exit" and c.kind == "undetermined" and "infinity" in c.reason

    def test_flat_circle_period_and_radius(self):
        sp = SpaceSpec.flat(1)
        q, v = 1.5, 0.8
        tr = integrate_magnetic(sp, MagneticField.kahler(q), TrajectoryState([1], [v]), (0, 10), rtol=1e-12, atol=1e-14)
        c = classify_closure(tr)
        assert c.kind == "closed" and c.period == pytest.approx(2 * np.pi / q, rel=1e-9)
        centre = 1 + 1j * v / q
        assert np.max(np.abs(np.abs(tr.z[:, 0] - centre) - v / q)) < 1e-9


class TestScaling:
    @pytest.mark.parametrize("alpha", [-1.0, 0.5, 2.0])
    @pytest.mark.parametrize("label", [*MODEL_SPACES, "flat"])
    def test_reparametrisation(self, alpha, label):
        # gamma_{alpha B}(t) = gamma_B(alpha t); the speed is multiplied by alpha^2, not kept
        sp = MODEL_SPACES.get(label, SpaceSpec.flat(2))
        s0 = TrajectoryState(np.full(sp.n, 0.1 + 0.05j), np.array([0.2 - 0.1j, 0.05j][: sp.n]))
        rep = scaling_check(sp, MagneticField.kahler(0.9), s0, alpha, t_max=3.0)
        assert rep["max_position_error"] < 1e-8
        assert rep["speed_ratio"] == pytest.approx(alpha**2, rel=1e-12)

    def test_zero_alpha_rejected(self):
        with pytest.raises(ValueError):
            scaling_check(SpaceSpec.flat(1), MagneticField.kahler(1.0), ([0], [1]), 0.0)


def test_trajectory_rows_layout():
    sp = MODEL_SPACES["CP1"]
    tr = integrate_magnetic(sp, MagneticField.kahler(1.0), TrajectoryState([0.1], [0.2]), (0, 1))
    rows = tr.rows(stride=3)
    assert tr.header() == ["t", "x1", "x2", "speed", "speed_drift"]
    assert rows.shape[1] == 5 and rows[-1, 0] == tr.t[-1]
    assert np.array_equal(rows[1, 1:3], to_real(tr.z[3]))
    assert rows[0, 4] == 0.0
