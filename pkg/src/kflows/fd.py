"""Central finite differences on real coordinate vectors."""

import numpy as np

EPS = np.finfo(float).eps
STEP1 = EPS ** (1 / 3)
STEP2 = EPS ** (1 / 4)


def _steps(x, base):
    return base * (1.0 + np.abs(x))


def gradient(f, x):
    """Central-difference gradient of ``f`` at real vector ``x``.

    ``f`` may return a scalar or an array; the derivative axis is appended last.
    """
    x = np.asarray(x, dtype=float)
    hs = _steps(x, STEP1)
    cols = []
    for i, h in enumerate(hs):
        e = np.zeros_like(x)
        e[i] = h
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * h))
    return np.stack(cols, axis=-1)


def hessian(f, x):
    """Central-difference Hessian of a scalar function."""
    x = np.asarray(x, dtype=float)
    m = x.size
    hs = _steps(x, STEP2)
    H = np.empty((m, m))
    f0 = f(x)
    for i in range(m):
        ei = np.zeros(m)
        ei[i] = hs[i]
        H[i, i] = (f(x + ei) - 2 * f0 + f(x - ei)) / hs[i] ** 2
        for j in range(i + 1, m):
            ej = np.zeros(m)
            ej[j] = hs[j]
            v = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)) / (
                4 * hs[i] * hs[j]
            )
            H[i, j] = H[j, i] = v
    return H


def dd_bar(real_hessian):
    """Complex Hessian d_a d_{b-bar} F from the real Hessian of F.

    Real coordinates are interleaved: x[2a] = Re z_a, x[2a+1] = Im z_a.
    """
    H = np.asarray(real_hessian)
    xx = H[0::2, 0::2]
    yy = H[1::2, 1::2]
    xy = H[0::2, 1::2]
    yx = H[1::2, 0::2]
    return 0.25 * (xx + yy + 1j * (xy - yx))


def d_holo(real_grad):
    """Holomorphic derivative d_a = (d_x - i d_y)/2 from a real gradient (last axis)."""
    g = np.asarray(real_grad)
    return 0.5 * (g[..., 0::2] - 1j * g[..., 1::2])
