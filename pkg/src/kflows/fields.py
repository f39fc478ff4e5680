"""Gradient and Hamiltonian vector fields, their flows, and H-planarity tests.

``grad(f)`` is the ``h``-dual of ``df`` and ``ad(f)`` is fixed by
``omega(X, ad f) = df(X)``, which gives ``ad f = J grad f``.
"""

from dataclasses import dataclass, field

import numpy as np

from kflows import exprfield, fd
from kflows.geometry import (
    DomainError,
    connection_form,
    gamma_apply,
    metric_matrix,
    speed2,
    to_complex,
    to_real,
)
from kflows.ode import dopri5
from kflows.trajectory import Trajectory

DEGENERACY = 1e-8


@dataclass(frozen=True, eq=False)
class ScalarField:
    """A real function on the real chart with first and second derivative providers.

    Missing providers fall back to central finite differences of ``value``.
    """

    n: int
    value: object
    grad: object = None
    hess: object = None
    label: str = ""

    def __call__(self, x):
        return float(self.value(np.asarray(x, dtype=float)))

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        if self.grad is not None:
            return np.asarray(self.grad(x), dtype=float)
        return fd.gradient(self.value, x)

    def hessian(self, x):
        x = np.asarray(x, dtype=float)
        if self.hess is not None:
            return np.asarray(self.hess(x), dtype=float)
        if self.grad is not None:
            H = fd.gradient(self.grad, x)
            return 0.5 * (H + H.T)
        return fd.hessian(self.value, x)

    @classmethod
    def from_expr(cls, source, n):
        """Field from an expression string (or parsed tree) with exact symbolic derivatives."""
        e = exprfield.parse(source, n) if isinstance(source, str) else source
        m = 2 * n
        f = exprfield.compile_expr(e)
        d1 = [exprfield.diff(e, j) for j in range(m)]
        g = [exprfield.compile_expr(d) for d in d1]
        h = {}
        for i in range(m):
            for j in range(i, m):
                h[i, j] = exprfield.compile_expr(exprfield.diff(d1[i], j))

        def grad(x):
            return np.array([gj(x) for gj in g])

        def hess(x):
            H = np.empty((m, m))
            for (i, j), fij in h.items():
                H[i, j] = H[j, i] = fij(x)
            return H

        return cls(n, f, grad, hess, label=exprfield.to_string(e))

    @classmethod
    def constant(cls, n, c=0.0):
        m = 2 * n
        return cls(n, lambda x: c, lambda x: np.zeros(m), lambda x: np.zeros((m, m)), label=str(c))

    def self_check(self, points, tol=1e-6):
        """Largest relative gap between the gradient provider and finite differences."""
        worst = 0.0
        for x in points:
            a = self.gradient(x)
            b = fd.gradient(self.value, np.asarray(x, dtype=float))
            worst = max(worst, float(np.max(np.abs(a - b)) / max(1.0, np.max(np.abs(b)))))
        return worst, worst < tol


# -- vector fields ------------------------------------------------------------------


def _sharp(space, z, c):
    """Vector ``Y`` with ``h(X, Y) = 2 Re(c . X)`` for all ``X``."""
    return np.conj(np.linalg.solve(metric_matrix(space, z), c))


def grad_field(space, H, z):
    z = space.check(z)
    dH = fd.d_holo(H.gradient(to_real(z)))
    return _sharp(space, z, dH)


def ham_field(space, H, z):
    return 1j * grad_field(space, H, z)


def covariant_derivative_grad(space, H, z, X):
    """``nabla_X grad(H)`` from the covariant Hessian of ``H``."""
    x = to_real(z)
    dH = fd.d_holo(H.gradient(x))
    w = H.hessian(x) @ to_real(X)
    f = connection_form(space, z)
    c = fd.d_holo(w) - dH * (f @ X) - f * (dH @ X)
    return _sharp(space, z, c)


def _span_fit(Y, W):
    """Least-squares ``W ~ c Y`` with complex ``c``; returns ``(c, relative residual)``."""
    yy = np.vdot(Y, Y).real
    c = np.vdot(Y, W) / yy
    r = np.linalg.norm(W - c * Y)
    return c, float(r / max(np.linalg.norm(W), yy, 1e-300))


@dataclass(frozen=True)
class HPlanarFit:
    A: float
    B: float
    residual: float
    grad_norm: float


@dataclass
class HPlanarReport:
    fits: list
    verdict: str
    max_residual: float
    vacuous: bool = False
    points: list = field(default_factory=list)

    def as_dict(self):
        rows = []
        for p, f in zip(self.points, self.fits):
            row = {"x": [float(v) for v in to_real(p)]}
            if f is None:
                row["degenerate"] = True
            else:
                row.update(A=f.A, B=f.B, residual=f.residual, grad_norm=f.grad_norm)
            rows.append(row)
        out = {"verdict": self.verdict, "max_residual": self.max_residual, "points": rows}
        if self.vacuous:
            out["warning"] = "n = 1: span{grad H, J grad H} is the whole tangent plane, the test is vacuous"
        return out


def hplanar_fit_at(space, H, z):
    Y = grad_field(space, H, z)
    V = covariant_derivative_grad(space, H, z, Y)
    c, res = _span_fit(Y, V)
    return HPlanarFit(A=float(-c.imag), B=float(c.real), residual=res, grad_norm=float(np.linalg.norm(Y)))


def check_hplanar_hamiltonian(space, H, points, tol=1e-6):
    """Test ``nabla_grad grad = B grad - A J grad`` at the sample points."""
    points = [space.check(p) for p in points]
    grads = [np.linalg.norm(grad_field(space, H, p)) for p in points]
    scale = max(grads) if grads else 0.0
    fits = []
    for p, gn in zip(points, grads):
        if scale == 0.0 or gn < DEGENERACY * scale:
            fits.append(None)
        else:
            fits.append(hplanar_fit_at(space, H, p))
    live = [f.residual for f in fits if f is not None]
    if not live:
        return HPlanarReport(fits, "indeterminate", float("nan"), space.n == 1, points)
    worst = max(live)
    verdict = "h-planar" if worst < tol else "not-h-planar"
    return HPlanarReport(fits, verdict, worst, space.n == 1, points)


@dataclass
class CurveFit:
    t: np.ndarray
    a: np.ndarray
    b: np.ndarray
    residual: np.ndarray
    excluded: np.ndarray

    @property
    def max_residual(self):
        r = self.residual[~self.excluded]
        return float(np.max(r)) if r.size else float("nan")


def fit_hplanar_curve(space, traj):
    """Fit ``nabla_chi chi = a chi + b J chi`` sample by sample."""
    acc = traj.zddot
    if acc is None:
        if traj.dense is None:
            raise ValueError("trajectory carries neither accelerations nor dense output")
        acc = _dense_acceleration(traj)
    norms = np.linalg.norm(traj.zdot, axis=1)
    excluded = norms < DEGENERACY * max(float(np.max(norms)), 1e-300)
    m = traj.t.size
    a, b, res = np.full(m, np.nan), np.full(m, np.nan), np.full(m, np.nan)
    for i in range(m):
        if excluded[i]:
            continue
        v = traj.zdot[i]
        W = acc[i] + gamma_apply(space, traj.z[i], v, v)
        c, r = _span_fit(v, W)
        a[i], b[i], res[i] = c.real, c.imag, r
    return CurveFit(traj.t, a, b, res, excluded)


def _dense_acceleration(traj):
    h = 1e-5 * max(1.0, abs(traj.t[-1] - traj.t[0]))
    lo, hi = traj.t[0], traj.t[-1]
    out = np.empty_like(traj.zdot)
    for i, t in enumerate(traj.t):
        t1, t2 = max(lo, t - h), min(hi, t + h)
        out[i] = (traj.at(t2)[1] - traj.at(t1)[1]) / (t2 - t1)
    return out


# -- flows -----------------------------------------------------------------------


def _boundary_stop(space, limit=1e8, margin=1e-10):
    def stop(t, z):
        if not np.all(np.isfinite(z)) or np.max(np.abs(z)) > limit:
            return "chart_exit"
        if not space.is_flat and 1.0 + space.S(z) < margin:
            return "chart_exit"
        return None

    return stop


def _flow(space, H, z0, t_span, tol, kind):
    z0 = space.check(z0)
    rot = 1j if kind == "hamilton" else 1.0

    def rhs(t, z):
        if not space.admissible(z):
            raise DomainError("left chart")
        return rot * grad_field(space, H, z)

    t0, t1 = t_span
    sol = dopri5(rhs, t0, z0, t1, rtol=tol, atol=tol * 1e-2, stop=_boundary_stop(space))
    zs = sol.y
    vel = np.array([rhs(0, z) for z in zs])
    acc = np.empty_like(vel)
    for i, (z, v) in enumerate(zip(zs, vel)):
        g = v / rot
        acc[i] = rot * (covariant_derivative_grad(space, H, z, v) - gamma_apply(space, z, v, g))

    def dense(tq):
        zq = sol(tq)
        if np.ndim(tq) == 0:
            return zq, rhs(0, zq)
        return zq, np.array([rhs(0, zz) for zz in zq])

    flag = None if sol.status == "success" else sol.status
    return Trajectory(space, sol.t, zs, vel, acc, dense, flag, {"kind": kind, "field": H.label})


def hamilton_flow(space, H, z0, t_span, tol=1e-10):
    """Integrate ``dz/dt = ad(H)``."""
    return _flow(space, H, z0, t_span, tol, "hamilton")


def gradient_flow(space, H, z0, t_span, tol=1e-10):
    """Integrate ``dz/dt = grad(H)``."""
    return _flow(space, H, z0, t_span, tol, "gradient")


# -- reconstruction ---------------------------------------------------------------


class CoveringError(ValueError):
    """The family does not cover its region injectively."""


class NotHPlanarError(ValueError):
    def __init__(self, message, residuals):
        super().__init__(message)
        self.residuals = residuals


@dataclass(frozen=True, eq=False)
class CurveFamily:
    """Curves ``x(t, sigma)`` with ``2n - 1`` transversal parameters.

    ``map(t, sigma)`` returns the complex chart point; ``velocity`` is
    optional and defaults to central differences in ``t``.
    """

    n: int
    map: object
    t_range: tuple
    sigma_ranges: tuple
    t_count: int = 41
    sigma_counts: tuple = None
    periodic: tuple = None
    velocity: object = None
    t_ref: float = None

    def __post_init__(self):
        m = 2 * self.n - 1
        if len(self.sigma_ranges) != m:
            raise ValueError(f"expected {m} transversal parameters, got {len(self.sigma_ranges)}")
        if self.sigma_counts is None:
            object.__setattr__(self, "sigma_counts", (21,) * m)
        if self.periodic is None:
            object.__setattr__(self, "periodic", (False,) * m)
        if self.t_ref is None:
            object.__setattr__(self, "t_ref", float(self.t_range[0]))

    def point(self, t, sigma):
        return np.asarray(self.map(float(t), np.asarray(sigma, dtype=float)), dtype=complex)

    def tangent(self, t, sigma):
        if self.velocity is not None:
            return np.asarray(self.velocity(float(t), np.asarray(sigma, dtype=float)), dtype=complex)
        h = fd.STEP1 * (1.0 + abs(t))
        return (self.point(t + h, sigma) - self.point(t - h, sigma)) / (2 * h)

    def acceleration(self, t, sigma):
        h = fd.STEP2 * (1.0 + abs(t))
        if self.velocity is not None:
            return (self.tangent(t + h, sigma) - self.tangent(t - h, sigma)) / (2 * h)
        return (self.point(t + h, sigma) - 2 * self.point(t, sigma) + self.point(t - h, sigma)) / (h * h)

    def t_grid(self):
        return np.linspace(*self.t_range, self.t_count)

    def sigma_grid(self):
        axes = []
        for (lo, hi), cnt, per in zip(self.sigma_ranges, self.sigma_counts, self.periodic):
            axes.append(np.linspace(lo, hi, cnt, endpoint=not per))
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=1)

    def samples(self):
        """Grid points ``(len(sigma), len(t), n)`` and matching velocities."""
        ts, ss = self.t_grid(), self.sigma_grid()
        z = np.array([[self.point(t, s) for t in ts] for s in ss])
        v = np.array([[self.tangent(t, s) for t in ts] for s in ss])
        if not (np.all(np.isfinite(z)) and np.all(np.isfinite(v))):
            raise ValueError("family map is not finite on its grid")
        return z, v

    def curve(self, space, sigma):
        ts = self.t_grid()
        z = np.array([self.point(t, sigma) for t in ts])
        v = np.array([self.tangent(t, sigma) for t in ts])
        a = np.array([self.acceleration(t, sigma) for t in ts])
        return Trajectory(space, ts, z, v, a, None, None, {"kind": "family", "sigma": list(sigma)})

    def check_injective(self, rel=1e-6):
        """Grid-cell uniqueness: distinct grid nodes must map to distinct points."""
        from scipy.spatial import cKDTree

        z, _ = self.samples()
        x = to_real(z.reshape(-1, self.n))
        spread = float(np.max(np.ptp(x, axis=0)))
        if spread == 0.0:
            raise CoveringError("family collapses to a single point")
        pairs = cKDTree(x).query_pairs(rel * spread)
        if pairs:
            raise CoveringError(f"non-injective covering: {len(pairs)} coincident grid node pairs")
        return True

    def unwrap(self, sigma):
        out = np.array(sigma, dtype=float)
        for i, ((lo, hi), per) in enumerate(zip(self.sigma_ranges, self.periodic)):
            if per:
                out[i] = lo + np.mod(out[i] - lo, hi - lo)
        return out

    def contains(self, t, sigma, slack=1e-9):
        if not (self.t_range[0] - slack <= t <= self.t_range[1] + slack):
            return False
        for s, (lo, hi), per in zip(sigma, self.sigma_ranges, self.periodic):
            if not per and not (lo - slack <= s <= hi + slack):
                return False
        return True


def _family_value(space, fam, t, sigma, base_value, nodes=16, panel=0.25):
    """``base_value`` plus the integral of ``h(xdot, xdot)`` from ``t_ref`` to ``t`` (composite Gauss-Legendre)."""
    span = t - fam.t_ref
    if span == 0:
        return base_value
    m = max(1, int(np.ceil(abs(span) / panel)))
    xg, wg = np.polynomial.legendre.leggauss(nodes)
    edges = np.linspace(fam.t_ref, t, m + 1)
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        half = 0.5 * (hi - lo)
        for xi, wi in zip(xg, wg):
            tt = lo + half * (xi + 1.0)
            total += wi * half * speed2(space, fam.point(tt, sigma), fam.tangent(tt, sigma))
    return base_value + total


def invert_family(fam, x, seeds, tree, iters=30, tol=1e-12):
    """``(t, sigma)`` with ``fam.map(t, sigma) = x`` (real chart point), or ``None``."""
    _, idx = tree.query(x)
    t, sigma = seeds[idx]
    p = np.concatenate([[t], sigma])
    scale = 1.0 + np.max(np.abs(x))
    for _ in range(iters):
        r = to_real(fam.point(p[0], p[1:])) - x
        if np.linalg.norm(r) < tol * scale:
            break
        Jm = np.empty((x.size, p.size))
        for j in range(p.size):
            h = fd.STEP1 * (1.0 + abs(p[j]))
            e = np.zeros(p.size)
            e[j] = h
            Jm[:, j] = (to_real(fam.point(*_split(p + e))) - to_real(fam.point(*_split(p - e)))) / (2 * h)
        step, *_ = np.linalg.lstsq(Jm, -r, rcond=None)
        p = p + step
    r = to_real(fam.point(p[0], p[1:])) - x
    if np.linalg.norm(r) > 1e-9 * scale:
        return None
    sigma = fam.unwrap(p[1:])
    if not fam.contains(p[0], sigma):
        return None
    return p[0], sigma


def _split(p):
    return p[0], p[1:]


def _monomials(d, degree=3):
    from itertools import combinations_with_replacement

    out = [()]
    for k in range(1, degree + 1):
        out.extend(combinations_with_replacement(range(d), k))
    return out


@dataclass(frozen=True, eq=False)
class SampledField:
    """Values on a regular real chart grid, evaluated by local polynomial least squares.

    ``axes[i]`` are the node coordinates along real axis ``i``; ``values`` has
    shape ``tuple(len(a) for a in axes)`` and holds ``nan`` outside the
    covered region.
    """

    n: int
    axes: tuple
    values: np.ndarray
    radius: int = 2
    degree: int = 4

    def _local(self, x):
        x = np.asarray(x, dtype=float)
        idx = []
        for a, xi in zip(self.axes, x):
            i = int(np.clip(np.round((xi - a[0]) / (a[1] - a[0])), self.radius, a.size - 1 - self.radius))
            idx.append(i)
        sl = tuple(slice(i - self.radius, i + self.radius + 1) for i in idx)
        vals = self.values[sl]
        if np.any(np.isnan(vals)):
            raise DomainError("stencil reaches outside the covered region")
        centre = np.array([a[i] for a, i in zip(self.axes, idx)])
        h = np.array([a[1] - a[0] for a in self.axes])
        mesh = np.meshgrid(*[a[s] for a, s in zip(self.axes, sl)], indexing="ij")
        pts = (np.stack([m.ravel() for m in mesh], axis=1) - centre) / h
        mons = _monomials(len(self.axes), self.degree)
        V = np.column_stack([np.prod(pts[:, list(m)], axis=1) if m else np.ones(len(pts)) for m in mons])
        coef, *_ = np.linalg.lstsq(V, vals.ravel(), rcond=None)
        return coef, mons, (x - centre) / h, h

    def __call__(self, x):
        coef, mons, u, _ = self._local(x)
        return float(sum(c * np.prod(u[list(m)]) for c, m in zip(coef, mons)))

    def gradient(self, x):
        coef, mons, u, h = self._local(x)
        g = np.zeros(u.size)
        for c, m in zip(coef, mons):
            for j in set(m):
                rest = list(m)
                k = rest.count(j)
                rest.remove(j)
                g[j] += c * k * np.prod(u[rest])
        return g / h

    def hessian(self, x):
        coef, mons, u, h = self._local(x)
        d = u.size
        H = np.zeros((d, d))
        for c, m in zip(coef, mons):
            for i in range(d):
                for j in range(d):
                    rest = list(m)
                    if i not in rest:
                        continue
                    k1 = rest.count(i)
                    rest.remove(i)
                    if j not in rest:
                        continue
                    k2 = rest.count(j)
                    rest.remove(j)
                    H[i, j] += c * k1 * k2 * np.prod(u[rest])
        return H / np.outer(h, h)

    def as_scalar_field(self, label="reconstructed"):
        return ScalarField(self.n, self.__call__, self.gradient, self.hessian, label=label)

    def interior_points(self, margin=None):
        """Complex chart points whose stencil lies fully in the covered region."""
        from scipy.ndimage import minimum_filter

        r = self.radius if margin is None else margin
        good = ~np.isnan(self.values)
        inner = minimum_filter(good.astype(np.uint8), size=2 * r + 1, mode="constant", cval=0).astype(bool)
        idx = np.argwhere(inner)
        x = np.array([[a[i] for a, i in zip(self.axes, row)] for row in idx])
        return [to_complex(p) for p in x]


@dataclass
class Reconstruction:
    field: ScalarField
    sampled: SampledField
    curve_residual: float
    grid_check: HPlanarReport
    gradient_alignment: float
    covered: int


def reconstruct_hamiltonian(space, fam, base_value=0.0, grid=None, tol=1e-6):
    """Rebuild a Hamiltonian whose gradient lines are the family curves.

    Along each curve ``H`` grows by ``h(xdot, xdot)``; grid nodes are located
    on the family by nearest-sample seeding and Gauss-Newton refinement.
    ``grid`` is ``[(lo, hi, count)]`` per real coordinate and defaults to the
    bounding box of the family samples.
    """
    from scipy.spatial import cKDTree

    fam.check_injective()
    worst = 0.0
    bad = []
    for s in fam.sigma_grid():
        fit = fit_hplanar_curve(space, fam.curve(space, s))
        r = fit.max_residual
        worst = max(worst, r)
        if not r < tol:
            bad.append((list(map(float, s)), r))
    if bad:
        raise NotHPlanarError(f"{len(bad)} family curves are not H-planar (worst residual {worst:.2e})", bad)

    z, _ = fam.samples()
    xs = to_real(z.reshape(-1, fam.n))
    ts, ss = fam.t_grid(), fam.sigma_grid()
    seeds = [(t, s) for s in ss for t in ts]
    tree = cKDTree(xs)
    d = 2 * fam.n
    if grid is None:
        lo, hi = xs.min(axis=0), xs.max(axis=0)
        count = 21 if d == 2 else 7
        grid = [(lo[i], hi[i], count) for i in range(d)]
    axes = tuple(np.linspace(a, b, int(c)) for a, b, c in grid)
    values = np.full(tuple(a.size for a in axes), np.nan)
    for idx in np.ndindex(values.shape):
        x = np.array([a[i] for a, i in zip(axes, idx)])
        if not space.admissible(to_complex(x)):
            continue
        hit = invert_family(fam, x, seeds, tree)
        if hit is not None:
            values[idx] = _family_value(space, fam, hit[0], hit[1], base_value)
    sampled = SampledField(fam.n, axes, values)
    Hf = sampled.as_scalar_field()
    interior = sampled.interior_points()
    if not interior:
        raise CoveringError("no interior grid nodes are covered by the family")
    report = check_hplanar_hamiltonian(space, Hf, interior, tol=tol)
    align = 0.0
    for p in interior:
        hit = invert_family(fam, to_real(p), seeds, tree)
        if hit is None:
            continue
        v = fam.tangent(*hit)
        g = grad_field(space, Hf, p)
        align = max(align, float(np.linalg.norm(g - v) / np.linalg.norm(v)))
    return Reconstruction(Hf, sampled, worst, report, align, int(np.sum(~np.isnan(values))))
