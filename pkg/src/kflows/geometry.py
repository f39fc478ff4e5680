"""Kähler spaces of constant holomorphic sectional curvature in adapted charts.

Points and tangent vectors are complex arrays of length ``n`` (holomorphic
components).  The matching real chart interleaves real and imaginary parts,
``x[2a] = Re z[a]``, ``x[2a+1] = Im z[a]``.

Conventions used throughout the package:

* ``S(z) = sum_a eps_a |z_a|^2`` and the potential is ``(2/k) ln(1 + S)``
  (``S`` itself on the flat branch ``k = 0``).
* ``g`` holds the Hermitian components ``g_{a b-bar}``; the real metric is
  ``h(X, Y) = 2 Re sum g_{a b-bar} X^a conj(Y^b)`` so that ``h(chi, chi)`` is
  the squared speed ``2 g_{a b-bar} zdot^a conj(zdot^b)``.
* ``J`` is multiplication of the holomorphic components by ``i`` and the
  fundamental form is ``omega(X, Y) = h(JX, Y)``.
* Christoffel symbols are ``G^l_{am} = f_a d^l_m + f_m d^l_a`` with
  ``f = 2 psi``, ``psi = -(1/2) ln(1 + S)``.
"""

from dataclasses import dataclass

import numpy as np

from kflows import fd


class DomainError(ValueError):
    """A point lies outside the chart domain ``1 + S(z) > 0``."""


class UnsupportedOperation(ValueError):
    """The operation has no meaning for this space (e.g. the flat branch)."""


@dataclass(frozen=True)
class SpaceSpec:
    n: int
    k: float
    epsilon: tuple = None

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"complex dimension must be a positive integer, got {self.n!r}")
        eps = (1,) * self.n if self.epsilon is None else tuple(int(e) for e in self.epsilon)
        if len(eps) != self.n:
            raise ValueError(f"epsilon has length {len(eps)}, expected {self.n}")
        if any(e not in (-1, 1) for e in eps):
            raise ValueError(f"epsilon entries must be +1 or -1, got {eps}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "k", float(self.k))
        object.__setattr__(self, "epsilon", eps)

    @classmethod
    def projective(cls, n, k=1.0):
        return cls(n, k, (1,) * n)

    @classmethod
    def hyperbolic(cls, n, k=-1.0):
        return cls(n, k, (-1,) * n)

    @classmethod
    def flat(cls, n, epsilon=None):
        return cls(n, 0.0, epsilon)

    @property
    def is_flat(self):
        return self.k == 0.0

    @property
    def eps(self):
        return np.asarray(self.epsilon, dtype=float)

    def S(self, z):
        z = np.asarray(z)
        return float(np.sum(self.eps * (z.real**2 + z.imag**2)))

    def admissible(self, z):
        z = np.asarray(z)
        if z.shape != (self.n,) or not np.all(np.isfinite(z)):
            return False
        return self.is_flat or 1.0 + self.S(z) > 0.0

    def check(self, z):
        z = np.asarray(z, dtype=complex)
        if z.shape != (self.n,):
            raise ValueError(f"expected {self.n} complex coordinates, got shape {z.shape}")
        if not self.admissible(z):
            raise DomainError(f"point {z} is outside the chart (1 + S = {1 + self.S(z):.3g})")
        return z

    def describe(self):
        return {"n": self.n, "k": self.k, "epsilon": list(self.epsilon)}


@dataclass(frozen=True)
class MetricData:
    g: np.ndarray
    g_inv: np.ndarray
    omega: np.ndarray


# -- real/complex chart conversion -------------------------------------------


def to_real(z):
    z = np.asarray(z, dtype=complex)
    out = np.empty(z.shape[:-1] + (2 * z.shape[-1],))
    out[..., 0::2] = z.real
    out[..., 1::2] = z.imag
    return out


def to_complex(x):
    x = np.asarray(x, dtype=float)
    return x[..., 0::2] + 1j * x[..., 1::2]


def real_basis(n):
    """Complex images of the real coordinate basis vectors."""
    B = np.zeros((2 * n, n), dtype=complex)
    for a in range(n):
        B[2 * a, a] = 1.0
        B[2 * a + 1, a] = 1j
    return B


# -- closed forms -------------------------------------------------------------


def potential(space, z):
    z = space.check(z)
    S = space.S(z)
    if space.is_flat:
        return S
    return (2.0 / space.k) * np.log1p(S)


def metric_matrix(space, z):
    """Hermitian matrix ``G[a, b] = g_{a b-bar}`` without validation."""
    eps = space.eps
    if space.is_flat:
        return np.diag(eps).astype(complex)
    S = float(np.sum(eps * (z.real**2 + z.imag**2)))
    u = eps * np.conj(z)  # eps_a zbar_a
    G = np.diag(eps * (1.0 + S)) - np.outer(u, np.conj(u))
    return (2.0 / space.k) * G / (1.0 + S) ** 2


def metric(space, z):
    z = space.check(z)
    G = metric_matrix(space, z)
    G_inv = np.linalg.inv(G)
    assert np.allclose(G @ G_inv, np.eye(space.n), atol=1e-10), "metric is singular"
    return MetricData(g=G, g_inv=G_inv, omega=1j * G)


def psi(space, z):
    """Return ``(psi, d_a psi)`` with ``psi = -(1/2) ln(1 + S)``."""
    if space.is_flat:
        raise UnsupportedOperation("psi is defined only for k != 0")
    z = space.check(z)
    S = space.S(z)
    return -0.5 * np.log1p(S), -0.5 * space.eps * np.conj(z) / (1.0 + S)


def connection_form(space, z):
    """The 1-form ``f_a = 2 d_a psi`` generating the Christoffel symbols (zero if flat)."""
    if space.is_flat:
        return np.zeros(space.n, dtype=complex)
    S = float(np.sum(space.eps * (z.real**2 + z.imag**2)))
    return -space.eps * np.conj(z) / (1.0 + S)


def christoffel(space, z):
    """Array ``G[l, a, m] = Gamma^l_{a m}``; mixed-type components vanish."""
    z = space.check(z)
    f = connection_form(space, z)
    I = np.eye(space.n)
    return np.einsum("a,lm->lam", f, I) + np.einsum("m,la->lam", f, I)


def gamma_apply(space, z, X, Y):
    """``Gamma^l_{a m} X^a Y^m`` without forming the rank-3 array."""
    f = connection_form(space, z)
    return (f @ X) * Y + (f @ Y) * X


def inner(space, z, X, Y):
    """Real metric ``h(X, Y)`` at ``z``."""
    G = metric_matrix(space, np.asarray(z, dtype=complex))
    return 2.0 * float(np.real(np.asarray(X) @ G @ np.conj(Y)))


def omega_form(space, z, X, Y):
    """Fundamental form ``omega(X, Y) = h(JX, Y)``."""
    return inner(space, z, 1j * np.asarray(X), Y)


def speed2(space, z, zdot):
    return inner(space, z, zdot, zdot)


def speed2_batch(space, z, v):
    """Vectorised ``h(v, v)`` for arrays of points and tangents with shape ``(m, n)``."""
    z = np.asarray(z, dtype=complex)
    v = np.asarray(v, dtype=complex)
    eps = space.eps
    vv = np.sum(eps * np.abs(v) ** 2, axis=-1)
    if space.is_flat:
        return 2.0 * vv
    S = np.sum(eps * np.abs(z) ** 2, axis=-1)
    cross = np.abs(np.sum(eps * np.conj(z) * v, axis=-1)) ** 2
    return 2.0 * (2.0 / space.k) * ((1.0 + S) * vv - cross) / (1.0 + S) ** 2


def real_metric(space, x):
    """``2n x 2n`` real metric matrix at real chart point ``x``."""
    z = to_complex(x)
    G = metric_matrix(space, z)
    B = real_basis(space.n)
    return 2.0 * np.real(B @ G @ np.conj(B).T)


def real_christoffel(space, x):
    """Real Christoffel array ``R[i, j, k] = Gamma^i_{jk}`` in the interleaved chart."""
    z = to_complex(x)
    B = real_basis(space.n)
    out = np.empty((2 * space.n,) * 3)
    for j in range(2 * space.n):
        for k in range(j, 2 * space.n):
            v = to_real(gamma_apply(space, z, B[j], B[k]))
            out[:, j, k] = v
            out[:, k, j] = v
    return out


# -- numerical curvature ------------------------------------------------------


def ricci(space, z):
    """Ricci components ``R_{a b-bar} = -d_a d_{b-bar} ln|det g|`` by finite differences."""
    z = space.check(z)
    if space.is_flat:
        return np.zeros((space.n, space.n), dtype=complex)

    def logdet(x):
        return np.log(abs(np.linalg.det(metric_matrix(space, to_complex(x)))).real)

    return -fd.dd_bar(fd.hessian(logdet, to_real(z)))


def riemann(space, x):
    """Real curvature tensor ``R^i_{jkl}`` from finite differences of the Christoffels.

    Convention: ``R(d_k, d_l) d_j = R^i_{jkl} d_i``.
    """
    x = np.asarray(x, dtype=float)
    Gam = real_christoffel(space, x)
    dG = fd.gradient(lambda y: real_christoffel(space, y), x)  # dG[i, j, k, m] = d_m Gamma^i_{jk}
    # d_k Gamma^i_{lj} - d_l Gamma^i_{kj}
    dk = np.einsum("iljk->ijkl", dG)
    R = dk - dk.transpose(0, 1, 3, 2)
    R += np.einsum("ikm,mlj->ijkl", Gam, Gam) - np.einsum("ilm,mkj->ijkl", Gam, Gam)
    return R


def sectional_curvature(space, x, X, Y, R=None):
    """Sectional curvature of the real plane spanned by real vectors ``X``, ``Y``."""
    if R is None:
        R = riemann(space, x)
    h = real_metric(space, x)
    RXYY = np.einsum("ijkl,j,k,l->i", R, Y, X, Y)
    num = RXYY @ h @ X
    den = (X @ h @ X) * (Y @ h @ Y) - (X @ h @ Y) ** 2
    return float(num / den)


def hol_sect_curvature(space, z, v):
    """Holomorphic sectional curvature of the plane ``{v, Jv}`` at ``z``, computed numerically."""
    z = space.check(z)
    v = np.asarray(v, dtype=complex)
    x = to_real(z)
    hvv = speed2(space, z, v)
    if abs(hvv) <= 1e-14 * max(1.0, float(np.sum(np.abs(v) ** 2))):
        raise ValueError("null direction: g(v, v) = 0")
    return sectional_curvature(space, x, to_real(v), to_real(1j * v))
