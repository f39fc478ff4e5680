"""Reduction of Kähler magnetic trajectories to one scalar ODE.

In the adapted chart every trajectory lies on a complex line
``z = C1 * f + C2``.  After normalising ``(C1, C2)`` and writing
``f = exp(r + i phi)``, the radius ``r`` as a function of the angle ``phi``
obeys a single second-order ODE; time is recovered by quadrature of
``dt/dphi = 1/p`` with ``p = dphi/dt`` fixed by the first integral

    J**2 * |df/dt|**2 = (1 + S)**2.

Generic lines (``sum eps |C1|^2 = A = +-1``, ``sum eps C1 conj(C2) = 0``,
``C = sum eps |C2|^2``) give ``1 + S = A e^{2r} + C + 1``.  Null lines
(``sum eps |C1|^2 = 0``, ``sum eps C1 conj(C2) = 1``, ``sum eps |C2|^2 = -1``)
give ``1 + S = 2 e^r cos(phi)``.
"""

from dataclasses import dataclass, field

import numpy as np

from kflows.geometry import UnsupportedOperation, speed2
from kflows.ode import dopri5
from kflows.trajectory import Trajectory, TrajectoryState

NORM_TOL = 1e-10


class DegenerateLineError(ValueError):
    """Both ``sum eps C1 conj(C1)`` and ``sum eps C1 conj(C2)`` vanish."""


class SingularityError(ValueError):
    """The reduced right-hand side hit a pole."""


def eps_dot(eps, a, b):
    """``sum eps_a a_a conj(b_a)``."""
    return complex(np.sum(eps * a * np.conj(b)))


@dataclass(frozen=True)
class AffineLine:
    C1: np.ndarray
    C2: np.ndarray
    case: str = None  # "generic" | "null" once normalised
    A: int = None
    C: float = None
    v: complex = 1.0
    w: complex = 0.0

    def residuals(self, epsilon):
        eps = np.asarray(epsilon, dtype=float)
        c11 = eps_dot(eps, self.C1, self.C1)
        c12 = eps_dot(eps, self.C1, self.C2)
        c22 = eps_dot(eps, self.C2, self.C2)
        if self.case == "generic":
            return {"c11_minus_A": abs(c11 - self.A), "c12": abs(c12)}
        if self.case == "null":
            return {"c11": abs(c11), "c22_plus_1": abs(c22 + 1), "c12_minus_1": abs(c12 - 1)}
        return {}

    def point(self, f):
        return self.C1 * f + self.C2

    def describe(self, epsilon=None):
        out = {
            "C1": [[c.real, c.imag] for c in self.C1],
            "C2": [[c.real, c.imag] for c in self.C2],
            "case": self.case,
            "A": self.A,
            "C": self.C,
            "v": [complex(self.v).real, complex(self.v).imag],
            "w": [complex(self.w).real, complex(self.w).imag],
        }
        if epsilon is not None:
            out["residuals"] = self.residuals(epsilon)
        return out


def extract_affine_line(space, s0):
    """Line through ``s0`` in the gauge ``f(0) = 1``, ``f'(0) = 1``."""
    if space.is_flat:
        raise UnsupportedOperation("flat branch: trajectories are known in closed form")
    if not isinstance(s0, TrajectoryState):
        s0 = TrajectoryState(*s0)
    z0 = space.check(s0.p)
    if not np.any(s0.v != 0):
        raise ValueError("zero initial velocity")
    return AffineLine(C1=s0.v.copy(), C2=z0 - s0.v)


def normalize(line, epsilon):
    """Apply ``f -> v f + w`` so the normalisation conditions hold."""
    eps = np.asarray(epsilon, dtype=float)
    C1, C2 = np.asarray(line.C1, complex), np.asarray(line.C2, complex)
    scale = max(float(np.sum(np.abs(C1) ** 2)), 1e-300)
    scale2 = np.sqrt(scale * max(float(np.sum(np.abs(C2) ** 2)), 1.0))
    c11 = eps_dot(eps, C1, C1).real
    c12 = eps_dot(eps, C1, C2)
    if abs(c11) > NORM_TOL * scale:
        A = 1 if c11 > 0 else -1
        v = np.sqrt(abs(c11))
        w = np.conj(np.conj(v) * c12 / c11)
        C1n = C1 / v
        C2n = C2 - C1 * w / v
        C = eps_dot(eps, C2n, C2n).real
        return AffineLine(C1n, C2n, "generic", A, C, complex(v), complex(w))
    if abs(c12) <= NORM_TOL * scale2:
        raise DegenerateLineError(
            "untreated degenerate line: sum eps C1 conj(C1) = 0 and sum eps C1 conj(C2) = 0"
        )
    C = eps_dot(eps, C2, C2).real
    v = c12
    w = complex((C + 1.0) / 2.0)
    C1n = C1 / v
    C2n = C2 - C1 * w / v
    return AffineLine(C1n, C2n, "null", 0, eps_dot(eps, C2n, C2n).real, complex(v), w)


@dataclass(frozen=True)
class Invariants:
    A: int
    C: float
    J: float
    V: float
    r0: float
    phi0: float
    rdot0: float
    phidot0: float
    case: str

    @property
    def p_sign(self):
        return 1 if self.phidot0 > 0 else -1

    @property
    def r_prime0(self):
        if self.phidot0 == 0:
            raise SingularityError("dphi/dt = 0 at the start: turning point, r(phi) is undefined")
        return self.rdot0 / self.phidot0

    def speed_from_J(self, k):
        """Squared speed predicted by the first integral."""
        if self.case == "generic":
            return 4.0 / k * self.A * (self.C + 1.0) / self.J**2
        return -4.0 / k / self.J**2

    def as_dict(self):
        return {
            "A": self.A,
            "C": self.C,
            "J": self.J,
            "V": self.V,
            "r0": self.r0,
            "phi0": self.phi0,
            "rdot0": self.rdot0,
            "phidot0": self.phidot0,
            "case": self.case,
        }


def project(line, epsilon, z, zdot=None):
    """Recover ``f`` (and ``df/dt``) for a point on the normalised line."""
    eps = np.asarray(epsilon, dtype=float)
    ref = line.C1 if line.case == "generic" else line.C2
    den = line.A if line.case == "generic" else 1.0
    f = eps_dot(eps, np.asarray(z) - line.C2, ref) / den
    fdot = None if zdot is None else eps_dot(eps, np.asarray(zdot), ref) / den
    return f, fdot


def invariants(space, line, s0, on_line_tol=1e-8):
    """Initial reduced state and the constants ``(A, C, J, V)``."""
    if space.is_flat:
        raise UnsupportedOperation("flat branch has no reduction")
    if not isinstance(s0, TrajectoryState):
        s0 = TrajectoryState(*s0)
    z0 = space.check(s0.p)
    f0, fd0 = project(line, space.epsilon, z0, s0.v)
    off = max(np.abs(line.point(f0) - z0).max(), np.abs(line.C1 * fd0 - s0.v).max())
    if off > on_line_tol * max(1.0, np.abs(z0).max(), np.abs(s0.v).max()):
        raise ValueError(f"state is not on the line (offset {off:.2e})")
    if f0 == 0:
        raise ValueError("initial point is the line origin f = 0; polar coordinates are singular")
    wdot = fd0 / f0
    D = 1.0 + space.S(z0)
    J = D / abs(fd0)
    return Invariants(
        A=line.A,
        C=float(line.C),
        J=float(J),
        V=speed2(space, z0, s0.v),
        r0=float(np.log(abs(f0))),
        phi0=float(np.angle(f0)),
        rdot0=float(wdot.real),
        phidot0=float(wdot.imag),
        case=line.case,
    )


# -- reduced right-hand sides --------------------------------------------------


def reduced_rhs_generic(r, rp, params, p_sign=1):
    """``r''`` for the generic line (``phi`` is the independent variable)."""
    A, C, J, q = params["A"], params["C"], params["J"], params["q"]
    e2r = np.exp(2 * r)
    D = A * e2r + C + 1.0
    if abs(D) < 1e-14:
        raise SingularityError("A e^{2r} + C + 1 vanished")
    s = 1.0 + rp * rp
    return s * (1.0 - 2.0 * A * e2r / D - p_sign * q * J * np.exp(r) * np.sqrt(s) / D)


def reduced_rhs_null(r, rp, phi, params, p_sign=1):
    """``r''`` for the null line; ``J`` follows the generic ``(1 + S)/|f'|`` convention."""
    J, q = params["J"], params["q"]
    c = np.cos(phi)
    if abs(c) < 1e-14:
        raise SingularityError("cos(phi) vanished")
    s = 1.0 + rp * rp
    return s * (-rp * np.tan(phi) - p_sign * q * J * np.sqrt(s) / (2.0 * c))


def _dt_dphi(r, rp, phi, params, case, p_sign):
    s = np.sqrt(1.0 + rp * rp)
    if case == "generic":
        D = params["A"] * np.exp(2 * r) + params["C"] + 1.0
        return p_sign * params["J"] * np.exp(r) * s / D
    return p_sign * params["J"] * s / (2.0 * np.cos(phi))


@dataclass(frozen=True)
class ReducedState:
    r: float
    phi: float
    r_prime: float
    p_sign: int = 1


@dataclass(eq=False)
class ReducedSolution:
    phi: np.ndarray
    r: np.ndarray
    r_prime: np.ndarray
    t: np.ndarray
    J: float
    params: dict
    p_sign: int
    status: str = "success"
    dense: object = None
    first_integral_drift: float = float("nan")
    meta: dict = field(default_factory=dict)

    def p(self):
        """``dphi/dt`` at the samples, from the first integral."""
        return 1.0 / _dt_dphi(self.r, self.r_prime, self.phi, self.params, self.params["case"], self.p_sign)

    def p_integrated(self):
        return self.dense.y[:, 3]


def _dp_dphi(r, rp, p, phi, params, case):
    """``dp/dphi`` from the imaginary part of the complex line ODE.

    Integrated alongside ``r`` so the first integral can be monitored against
    a ``p`` that does not come from the first integral itself.
    """
    q = params["q"]
    if case == "generic":
        e2r = np.exp(2 * r)
        D = params["A"] * e2r + params["C"] + 1.0
        return rp * (2.0 * p * (2.0 * params["A"] * e2r / D - 1.0) + q)
    return np.tan(phi) * p * (rp * rp - 1.0) + q * rp


def first_integral_residual(r, rp, p, phi, params, case):
    """``J^2 e^{2r} (rdot^2 + phidot^2) / (1+S)^2 - 1`` with ``rdot = r' p``."""
    if case == "generic":
        D = params["A"] * np.exp(2 * r) + params["C"] + 1.0
    else:
        D = 2.0 * np.exp(r) * np.cos(phi)
    return params["J"] ** 2 * np.exp(2 * r) * p * p * (1.0 + rp * rp) / D**2 - 1.0


def initial_p(params, rs0):
    return 1.0 / _dt_dphi(rs0.r, rs0.r_prime, rs0.phi, params, params["case"], rs0.p_sign)


def integrate_reduced(params, rs0, phi_span, tol=1e-11, t_max=None, rp_max=50.0):
    """Integrate ``(r, r', t, p)`` in ``phi`` from ``rs0.phi`` over ``phi_span``.

    ``phi_span`` is a length; the direction of ``phi`` follows ``rs0.p_sign``.
    The time map uses ``p`` from the first integral; the integrated ``p``
    only feeds the drift monitor.  Integration stops with status
    ``"turning_point"`` when ``|r'|`` exceeds ``rp_max`` (``dphi/dt`` is
    approaching zero) and ``"t_max"`` once the recovered time passes ``t_max``.
    """
    case = params["case"]
    ps = rs0.p_sign
    if case == "null" and np.cos(rs0.phi) <= 0:
        raise SingularityError("null case needs cos(phi) > 0 at the start")

    def rhs(phi, y):
        r, rp, _, p = y
        if case == "generic":
            rpp = reduced_rhs_generic(r, rp, params, ps)
        else:
            rpp = reduced_rhs_null(r, rp, phi, params, ps)
        return np.array([rp, rpp, _dt_dphi(r, rp, phi, params, case, ps), _dp_dphi(r, rp, p, phi, params, case)])

    def stop(phi, y):
        if not np.all(np.isfinite(y)) or abs(y[1]) > rp_max:
            return "turning_point"
        if case == "null" and np.cos(phi) < 1e-8:
            return "singular"
        if t_max is not None and y[2] >= t_max:
            return "t_max"
        return None

    phi0 = rs0.phi
    phi1 = phi0 + ps * abs(phi_span)
    y0 = np.array([rs0.r, rs0.r_prime, 0.0, initial_p(params, rs0)])
    sol = dopri5(rhs, phi0, y0, phi1, rtol=tol, atol=tol * 1e-2, stop=stop)
    y = sol.y
    out = ReducedSolution(
        phi=sol.t,
        r=y[:, 0],
        r_prime=y[:, 1],
        t=y[:, 2],
        J=params["J"],
        params=dict(params),
        p_sign=ps,
        status=sol.status,
        dense=sol,
    )
    res = first_integral_residual(y[:, 0], y[:, 1], y[:, 3], sol.t, params, case)
    out.first_integral_drift = float(np.max(np.abs(res)))
    return out


def lift(space, sol, line, samples=None):
    """Map a reduced solution back to chart coordinates, sampled by time."""
    if space.is_flat:
        raise UnsupportedOperation("flat branch has no reduction")
    if sol.params["case"] != line.case:
        raise ValueError("reduced solution and line belong to different cases")
    if samples is None:
        phis = sol.phi
    else:
        phis = np.linspace(sol.phi[0], sol.phi[-1], int(samples))
    y = sol.dense(phis)
    r, rp, t = y[:, 0], y[:, 1], y[:, 2]
    p = 1.0 / _dt_dphi(r, rp, phis, sol.params, sol.params["case"], sol.p_sign)
    f = np.exp(r + 1j * phis)
    fdot = f * p * (rp + 1j)
    z = np.outer(f, line.C1) + line.C2
    zdot = np.outer(fdot, line.C1)
    keep = np.concatenate([[True], np.diff(t) > 0])

    def dense(tq):
        tq = np.asarray(tq, dtype=float)
        ph = _invert_time(sol, tq)
        yy = sol.dense(ph)
        rr, rrp = yy[..., 0], yy[..., 1]
        pp = 1.0 / _dt_dphi(rr, rrp, ph, sol.params, sol.params["case"], sol.p_sign)
        ff = np.exp(rr + 1j * ph)
        return np.multiply.outer(ff, line.C1) + line.C2, np.multiply.outer(ff * pp * (rrp + 1j), line.C1)

    meta = {"kind": "lifted", "field": {"kind": "kahler", "q": sol.params["q"]}, "status": sol.status}
    return Trajectory(space, t[keep], z[keep], zdot[keep], None, dense, None, meta)


def _invert_time(sol, tq):
    """``phi`` with ``t(phi) = tq`` (``t`` is monotone in ``phi``)."""
    scalar = np.ndim(tq) == 0
    tq = np.atleast_1d(tq)
    ts, ph = sol.t, sol.phi
    out = np.empty(tq.size)
    for m, tt in enumerate(tq):
        i = int(np.clip(np.searchsorted(ts, tt), 1, ts.size - 1))
        a, b = ph[i - 1], ph[i]
        x = a + (b - a) * (tt - ts[i - 1]) / (ts[i] - ts[i - 1]) if ts[i] > ts[i - 1] else a
        for _ in range(50):
            y = sol.dense(x)
            g = y[2] - tt
            d = _dt_dphi(y[0], y[1], x, sol.params, sol.params["case"], sol.p_sign)
            step = g / d
            x -= step
            if abs(step) < 1e-15 * max(1.0, abs(x)):
                break
        out[m] = x
    return out[0] if scalar else out


# -- comparison ----------------------------------------------------------------------


def compare(full, lifted):
    """Pointwise chart distance between two trajectories on their common time range."""
    lo = max(full.t[0], lifted.t[0])
    hi = min(full.t[-1], lifted.t[-1])
    if hi < lo:
        raise ValueError("trajectories have disjoint time domains")
    span = max(full.t[-1], lifted.t[-1]) - min(full.t[0], lifted.t[0])
    if lifted.dense is None and full.dense is None:
        raise ValueError("one of the trajectories needs dense output")
    if full.dense is not None:
        ref, other = full, lifted
    else:
        ref, other = lifted, full
    mask = (other.t >= lo) & (other.t <= hi)
    ts = other.t[mask]
    zr, vr = ref.at(ts)
    dist = np.linalg.norm(zr - other.z[mask], axis=1)
    dv = np.linalg.norm(vr - other.zdot[mask], axis=1)
    from kflows.geometry import speed2_batch

    ds = np.abs(speed2_batch(ref.space, zr, vr) - other.speeds[mask])
    return {
        "max_distance": float(dist.max()) if dist.size else 0.0,
        "mean_distance": float(dist.mean()) if dist.size else 0.0,
        "max_velocity_difference": float(dv.max()) if dv.size else 0.0,
        "max_speed_difference": float(ds.max()) if ds.size else 0.0,
        "overlap": [float(lo), float(hi)],
        "overlap_fraction": float((hi - lo) / span) if span > 0 else 1.0,
        "samples": int(ts.size),
    }


# -- full <-> reduced pipeline -----------------------------------------------------


def line_distance(line, z):
    """Euclidean distance of ``z`` from the complex line ``C1 u + C2``."""
    w = np.atleast_2d(z) - line.C2
    c = (w @ np.conj(line.C1)) / np.vdot(line.C1, line.C1).real
    return np.linalg.norm(w - np.outer(c, line.C1), axis=1)


def full_first_integral(space, line, traj):
    """Relative drift of ``J^2 |df/dt|^2 / (1+S)^2`` along a full trajectory."""
    eps = space.eps
    S = np.sum(eps * np.abs(traj.z) ** 2, axis=1)
    ref = line.C1 if line.case == "generic" else line.C2
    den = line.A if line.case == "generic" else 1.0
    fdot = (traj.zdot * eps) @ np.conj(ref) / den
    J2 = (1.0 + S) ** 2 / np.abs(fdot) ** 2
    return float(np.max(np.abs(J2 / J2[0] - 1.0)))


def reduction_setup(space, q, s0):
    line = normalize(extract_affine_line(space, s0), space.epsilon)
    inv = invariants(space, line, s0)
    params = {"A": inv.A, "C": inv.C, "J": inv.J, "q": float(q), "case": inv.case}
    rs0 = ReducedState(inv.r0, inv.phi0, inv.r_prime0, inv.p_sign)
    return line, inv, params, rs0


def round_trip(space, q, s0, t_max=3.0, tol=1e-11, full=None, rp_max=50.0, phi_cap=200.0):
    """Integrate both systems from ``s0`` and compare them on the common window."""
    from kflows.magnetic import MagneticField, integrate_magnetic

    if not isinstance(s0, TrajectoryState):
        s0 = TrajectoryState(*s0)
    line, inv, params, rs0 = reduction_setup(space, q, s0)
    sol = integrate_reduced(params, rs0, phi_cap, tol=tol, t_max=t_max, rp_max=rp_max)
    lifted = lift(space, sol, line)
    if full is None:
        T = min(t_max, float(lifted.t[-1]))
        full = integrate_magnetic(space, MagneticField.kahler(q), s0, (0.0, T), rtol=tol, atol=tol * 1e-2)
    report = compare(full, lifted)
    report.update(
        line_distance=float(line_distance(line, full.z).max()),
        first_integral_drift_full=full_first_integral(space, line, full),
        first_integral_drift_reduced=sol.first_integral_drift,
        speed_relation=inv.V / inv.speed_from_J(space.k),
        reduced_status=sol.status,
        t_window=float(lifted.t[-1]),
    )
    return {"line": line, "invariants": inv, "solution": sol, "lifted": lifted, "full": full, "report": report}
