"""Magnetic trajectories ``nabla_chi chi = I(chi)`` on (pseudo-)Kähler spaces."""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from kflows import fd
from kflows.geometry import (
    DomainError,
    gamma_apply,
    real_christoffel,
    real_metric,
    speed2,
    to_complex,
    to_real,
)
from kflows.ode import dopri5
from kflows.trajectory import Trajectory, TrajectoryState

CLOSEDNESS_TOL = 1e-6
UNIFORM_TOL = 1e-6


class ClosednessError(ValueError):
    """A general magnetic 2-form failed the skew/closed check."""


def real_J(n):
    J = np.zeros((2 * n, 2 * n))
    for a in range(n):
        J[2 * a + 1, 2 * a] = 1.0
        J[2 * a, 2 * a + 1] = -1.0
    return J


@dataclass(frozen=True, eq=False)
class MagneticField:
    """Either a Kähler field ``q * omega`` or a general closed 2-form.

    For the general kind ``components(x)`` returns the real ``2n x 2n`` matrix
    ``B_ij`` at real chart point ``x``.
    """

    q: float = 0.0
    components: object = None

    @classmethod
    def kahler(cls, q):
        return cls(q=float(q))

    @classmethod
    def general(cls, components):
        return cls(q=float("nan"), components=components)

    @property
    def is_kahler(self):
        return self.components is None

    def matrix(self, space, x):
        if self.is_kahler:
            h = real_metric(space, x)
            return self.q * real_J(space.n).T @ h
        return np.asarray(self.components(x), dtype=float)

    def check_closed(self, space, points):
        """Largest skew and ``dB`` component over the sample points."""
        worst_skew = worst_d = 0.0
        for z in points:
            x = to_real(space.check(z))
            B = self.matrix(space, x)
            worst_skew = max(worst_skew, float(np.max(np.abs(B + B.T))))
            dB = fd.gradient(lambda y: self.matrix(space, y), x)  # dB[i, j, k] = d_k B_ij
            cyc = np.einsum("jki->ijk", dB) + np.einsum("kij->ijk", dB) + dB
            worst_d = max(worst_d, float(np.max(np.abs(cyc))))
        return worst_skew, worst_d

    def validate(self, space, points):
        if self.is_kahler:
            return
        skew, d = self.check_closed(space, points)
        if skew > 1e-12 or d > CLOSEDNESS_TOL:
            raise ClosednessError(f"2-form is not closed/skew (skew {skew:.2e}, dB {d:.2e})")

    def describe(self):
        return {"kind": "kahler", "q": self.q} if self.is_kahler else {"kind": "general"}


def lorentz_operator(space, B, z):
    """Real ``2n x 2n`` matrix of the operator with ``B(X, Y) = h(I X, Y)``."""
    z = space.check(z)
    if B.is_kahler:
        return B.q * real_J(space.n)
    x = to_real(z)
    B.validate(space, [z])
    return -np.linalg.solve(real_metric(space, x), B.matrix(space, x))


def apply_lorentz(space, B, z, v):
    if B.is_kahler:
        return 1j * B.q * v
    return to_complex(lorentz_operator(space, B, z) @ to_real(v))


def magnetic_rhs(space, B):
    n = space.n
    eps = space.eps
    flat = space.is_flat
    if B.is_kahler:
        iq = 1j * B.q

        def rhs(t, y):
            z, v = y[:n], y[n:]
            if flat:
                return np.concatenate([v, iq * v])
            S = float(np.sum(eps * (z.real**2 + z.imag**2)))
            if 1.0 + S <= 0.0:
                raise DomainError("left chart")
            fv = -np.sum(eps * np.conj(z) * v) / (1.0 + S)
            return np.concatenate([v, (iq - 2.0 * fv) * v])

        return rhs

    def rhs(t, y):
        z, v = y[:n], y[n:]
        if not space.admissible(z):
            raise DomainError("left chart")
        return np.concatenate([v, apply_lorentz(space, B, z, v) - gamma_apply(space, z, v, v)])

    return rhs


def _stop(space, limit=1e8, margin=1e-10):
    n = space.n

    def stop(t, y):
        z = y[:n]
        if not np.all(np.isfinite(y)) or np.max(np.abs(z)) > limit:
            return "chart_exit"
        if not space.is_flat and 1.0 + space.S(z) < margin:
            return "chart_exit"
        return None

    return stop


def unit_speed(space, s0):
    """Rescale the initial velocity so that ``h(v, v) = +-1``."""
    V = speed2(space, s0.p, s0.v)
    if V == 0:
        raise ValueError("null initial velocity cannot be normalised")
    return TrajectoryState(s0.p, s0.v / np.sqrt(abs(V)))


def integrate_magnetic(space, B, s0, t_span, rtol=1e-10, atol=1e-12, max_steps=500_000):
    """Full ``2n``-dimensional trajectory from ``s0`` over ``t_span = (t0, t1)``."""
    if not isinstance(s0, TrajectoryState):
        s0 = TrajectoryState(*s0)
    z0 = space.check(s0.p)
    if not B.is_kahler:
        B.validate(space, [z0])
    rhs = magnetic_rhs(space, B)
    y0 = np.concatenate([z0, s0.v]).astype(complex)
    t0, t1 = map(float, t_span)
    if t1 < t0:
        raise ValueError("t_span must be increasing")
    sol = dopri5(rhs, t0, y0, t1, rtol=rtol, atol=atol, max_steps=max_steps, stop=_stop(space))
    n = space.n
    acc = np.array([rhs(0.0, y)[n:] for y in sol.y])

    def dense(tq):
        y = sol(tq)
        return y[..., :n], y[..., n:]

    flag = None if sol.status == "success" else sol.status
    meta = {"kind": "magnetic", "field": B.describe(), "rhs": rhs, "solution": sol}
    return Trajectory(space, sol.t, sol.y[:, :n], sol.y[:, n:], acc, dense, flag, meta)


def speed_drift(traj):
    return traj.speed_drift


def verify_uniform(space, B, points, tol=UNIFORM_TOL):
    """Check ``nabla I = 0`` numerically; returns ``(ok, worst component)``."""
    worst = 0.0
    for z in points:
        x = to_real(space.check(z))
        Gam = real_christoffel(space, x)
        I = lorentz_operator(space, B, z)
        dI = fd.gradient(lambda y: lorentz_operator(space, B, to_complex(y)), x)  # dI[i, j, k] = d_k I^i_j
        cov = dI + np.einsum("ikm,mj->ijk", Gam, I) - np.einsum("mkj,im->ijk", Gam, I)
        worst = max(worst, float(np.max(np.abs(cov))))
    return worst < tol, worst


# -- closure ----------------------------------------------------------------------


@dataclass(frozen=True)
class Closure:
    kind: str  # "closed" | "open" | "undetermined"
    period: float = None
    reason: str = ""

    def as_dict(self):
        return {"kind": self.kind, "period": self.period, "reason": self.reason}


def period_estimate(space, q, V):
    """Rough closing time used to size the classification horizon."""
    rate = max(abs(q) / np.sqrt(abs(V)) if V else 0.0, np.sqrt(abs(space.k)))
    return 2 * np.pi / rate if rate > 0 else np.inf


def boundary_case(space, q, V, rel=1e-9):
    """True when unit-normalised ``|q|`` sits exactly on ``sqrt(-k)`` for ``k < 0``."""
    if space.k >= 0 or V <= 0:
        return False
    qn = abs(q) / np.sqrt(V)
    return abs(qn - np.sqrt(-space.k)) <= rel * max(1.0, np.sqrt(-space.k))


def escaped(space, z, escape=1e-3, radius=1e3):
    if space.is_flat or np.any(np.asarray(space.epsilon) > 0):
        return float(np.max(np.abs(z))) > radius
    return 1.0 + space.S(z) < escape


def classify_closure(traj, return_tol=1e-6, horizon=None, escape=1e-3):
    """Closed (with first-return period), open (monotone escape) or undetermined."""
    space = traj.space
    V = traj.V
    fieldinfo = traj.meta.get("field", {})
    q = fieldinfo.get("q", 0.0) if isinstance(fieldinfo, dict) else 0.0
    if boundary_case(space, q, V):
        return Closure("undetermined", None, "|q| equals sqrt(-k) at unit speed: boundary case")
    if V <= 0:
        return Closure("undetermined", None, "closure classification needs positive speed")
    t = traj.t
    if horizon is None:
        horizon = t[-1]
    mask = t <= t[0] + horizon
    y0 = np.concatenate([traj.z[0], traj.zdot[0]])
    Y = np.concatenate([traj.z[mask], traj.zdot[mask]], axis=1)
    dist = np.linalg.norm(Y - y0, axis=1)
    scale = max(float(np.max(dist)), 1e-300)

    # first return: leave the neighbourhood, then dip back near the start
    away = np.nonzero(dist > 0.25 * scale)[0]
    if away.size and traj.dense is not None:
        rhs = traj.meta.get("rhs")
        start = away[0]
        for i in range(start + 1, dist.size - 1):
            if dist[i] <= dist[i - 1] and dist[i] <= dist[i + 1] and dist[i] < 0.1 * scale:
                T = _refine_return(traj, rhs, y0, t[i - 1], t[i + 1])
                z, v = traj.at(T)
                d = float(np.linalg.norm(np.concatenate([z, v]) - y0))
                if d < return_tol:
                    return Closure("closed", float(T - t[0]), "state returned to start")
    zs = traj.z[mask]
    hit = [i for i, z in enumerate(zs) if escaped(space, z, escape)]
    compact = not space.is_flat and space.k > 0 and all(e > 0 for e in space.epsilon)
    if compact and (hit or traj.exit_flag == "chart_exit"):
        return Closure("undetermined", None, "left the affine chart through the hyperplane at infinity")
    if hit or traj.exit_flag == "chart_exit":
        tail = dist[: hit[0] + 1] if hit else dist
        last = tail[len(tail) // 2 :]
        if np.all(np.diff(last) > -1e-12 * scale):
            return Closure("open", None, "escaped towards the chart boundary")
    return Closure("undetermined", None, "no return and no escape before the horizon")


def _refine_return(traj, rhs, y0, ta, tb):
    """Minimise the phase-space distance to ``y0`` on ``[ta, tb]`` via the derivative root."""

    def slope(t):
        z, v = traj.at(t)
        y = np.concatenate([z, v])
        dy = rhs(t, y) if rhs is not None else None
        if dy is None:
            h = 1e-6
            z2, v2 = traj.at(min(t + h, traj.t[-1]))
            dy = (np.concatenate([z2, v2]) - y) / h
        return float(np.real(np.vdot(y - y0, dy)))

    sa, sb = slope(ta), slope(tb)
    if sa < 0 < sb:
        return brentq(slope, ta, tb, xtol=1e-14, rtol=4 * np.finfo(float).eps)
    return ta if abs(sa) < abs(sb) else tb


def scaling_check(space, B, s0, alpha, t_max=5.0, rtol=1e-11, atol=1e-13):
    """Compare ``gamma_{alpha B}(t)`` with ``gamma_B(alpha t)``.

    The reparametrised curve starts with velocity ``alpha * v0``, so its
    squared speed is ``alpha**2`` times that of ``gamma_B``.
    """
    if alpha == 0:
        raise ValueError("alpha must be non-zero")
    if not isinstance(s0, TrajectoryState):
        s0 = TrajectoryState(*s0)
    if not B.is_kahler:
        raise ValueError("scaling_check supports Kähler fields")
    z0 = space.check(s0.p)
    n = space.n
    base = dopri5(magnetic_rhs(space, B), 0.0, np.concatenate([z0, s0.v]), alpha * t_max, rtol=rtol, atol=atol)
    scaled = integrate_magnetic(
        space, MagneticField.kahler(alpha * B.q), TrajectoryState(z0, alpha * s0.v), (0.0, t_max), rtol, atol
    )
    ts = scaled.t
    yb = base(alpha * ts)
    dz = np.abs(yb[:, :n] - scaled.z).max()
    dv = np.abs(alpha * yb[:, n:] - scaled.zdot).max()
    V_base = speed2(space, z0, s0.v)
    return {
        "alpha": alpha,
        "max_position_error": float(dz),
        "max_velocity_error": float(dv),
        "speed_base": V_base,
        "speed_scaled": scaled.V,
        "speed_ratio": scaled.V / V_base if V_base else float("nan"),
    }
