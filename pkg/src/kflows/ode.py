"""Dormand-Prince 5(4) integrator with PI step control and dense output.

Works on real or complex state vectors.  The continuous extension is the
fourth-order one from Hairer, Norsett & Wanner (DOPRI5 ``contd5``).
"""

from dataclasses import dataclass, field

import numpy as np

from kflows.geometry import DomainError

C2, C3, C4, C5 = 1 / 5, 3 / 10, 4 / 5, 8 / 9
A21 = 1 / 5
A31, A32 = 3 / 40, 9 / 40
A41, A42, A43 = 44 / 45, -56 / 15, 32 / 9
A51, A52, A53, A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
A61, A62, A63, A64, A65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
A71, A73, A74, A75, A76 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
E1, E3, E4, E5, E6, E7 = (
    71 / 57600,
    -71 / 16695,
    71 / 1920,
    -17253 / 339200,
    22 / 525,
    -1 / 40,
)
D1 = -12715105075 / 11282082432
D3 = 87487479700 / 32700410799
D4 = -10690763975 / 1880347072
D5 = 701980252875 / 199316789632
D6 = -1453857185 / 822651844
D7 = 69997945 / 29380423

SAFETY = 0.9
FAC_MIN, FAC_MAX = 0.2, 10.0
BETA = 0.04
ALPHA = 0.2 - 0.75 * BETA


class StepSizeError(RuntimeError):
    """Step size fell below the representable minimum."""


@dataclass
class OdeSolution:
    t: np.ndarray
    y: np.ndarray
    status: str = "success"
    message: str = ""
    nfev: int = 0
    _t_old: list = field(default_factory=list, repr=False)
    _h: list = field(default_factory=list, repr=False)
    _coef: list = field(default_factory=list, repr=False)

    @property
    def direction(self):
        return 1.0 if self.t[-1] >= self.t[0] else -1.0

    def __call__(self, tq):
        """Dense output at scalar or array times inside the integrated range."""
        tq = np.asarray(tq, dtype=float)
        scalar = tq.ndim == 0
        tq = np.atleast_1d(tq)
        if not self._coef:
            return self.y[0] if scalar else np.repeat(self.y[:1], tq.size, axis=0)
        starts = np.asarray(self._t_old) * self.direction
        idx = np.clip(np.searchsorted(starts, tq * self.direction, side="right") - 1, 0, len(starts) - 1)
        out = np.empty((tq.size,) + self.y.shape[1:], dtype=self.y.dtype)
        for m, (i, tt) in enumerate(zip(idx, tq)):
            r1, r2, r3, r4, r5 = self._coef[i]
            th = (tt - self._t_old[i]) / self._h[i]
            th1 = 1.0 - th
            out[m] = r1 + th * (r2 + th1 * (r3 + th * (r4 + th1 * r5)))
        return out[0] if scalar else out


def _norm(err, y, ynew, rtol, atol):
    sc = atol + rtol * np.maximum(np.abs(y), np.abs(ynew))
    return float(np.sqrt(np.mean((np.abs(err) / sc) ** 2)))


def dopri5(fun, t0, y0, t_end, rtol=1e-10, atol=1e-12, h0=None, max_steps=200_000, stop=None):
    """Integrate ``y' = fun(t, y)`` from ``t0`` to ``t_end``.

    ``stop(t, y)`` is called after every accepted step; a non-empty return
    value ends the integration with that value as ``status``.  A
    :class:`DomainError` raised by ``fun`` rejects the step; if the step
    collapses while rejecting, the run ends with status ``"chart_exit"``.
    """
    y = np.array(y0, dtype=complex if np.iscomplexobj(y0) else float)
    t = float(t0)
    span = float(t_end) - t
    d = 1.0 if span >= 0 else -1.0
    ts, ys = [t], [y.copy()]
    sol = OdeSolution(t=None, y=None)
    if span == 0:
        sol.t, sol.y = np.array(ts), np.array(ys)
        return sol

    k1 = np.asarray(fun(t, y))
    nfev = 1
    if h0 is None:
        sc = atol + rtol * np.abs(y)
        dn0 = np.sqrt(np.mean((np.abs(y) / sc) ** 2))
        dn1 = np.sqrt(np.mean((np.abs(k1) / sc) ** 2))
        h0 = 1e-6 if dn0 < 1e-5 or dn1 < 1e-5 else 0.01 * dn0 / dn1
        h0 = min(h0, abs(span))
    h = abs(h0)
    err_old = 1e-4
    reject = False
    status, message = "success", ""
    for _ in range(max_steps):
        if d * (t - t_end) >= 0:
            break
        if 0.1 * abs(h) <= abs(t) * np.finfo(float).eps * 10:
            if reject == "domain":
                status, message = "chart_exit", f"chart boundary reached near t={t:.6g}"
                break
            raise StepSizeError(f"step size underflow at t={t:.6g}")
        h = min(h, abs(t_end - t))
        hs = d * h
        try:
            k2 = fun(t + C2 * hs, y + hs * A21 * k1)
            k3 = fun(t + C3 * hs, y + hs * (A31 * k1 + A32 * k2))
            k4 = fun(t + C4 * hs, y + hs * (A41 * k1 + A42 * k2 + A43 * k3))
            k5 = fun(t + C5 * hs, y + hs * (A51 * k1 + A52 * k2 + A53 * k3 + A54 * k4))
            k6 = fun(t + hs, y + hs * (A61 * k1 + A62 * k2 + A63 * k3 + A64 * k4 + A65 * k5))
            ynew = y + hs * (A71 * k1 + A73 * k3 + A74 * k4 + A75 * k5 + A76 * k6)
            k7 = fun(t + hs, ynew)
        except DomainError:
            nfev += 6
            h *= 0.25
            reject = "domain"
            continue
        nfev += 6
        err = hs * (E1 * k1 + E3 * k3 + E4 * k4 + E5 * k5 + E6 * k6 + E7 * k7)
        en = _norm(err, y, ynew, rtol, atol)
        if not np.isfinite(en):
            h *= 0.25
            reject = "domain"
            continue
        if en <= 1.0:
            fac = SAFETY * max(en, 1e-10) ** -ALPHA * err_old**BETA
            fac = min(FAC_MAX, max(FAC_MIN, fac))
            if reject:
                fac = min(fac, 1.0)
            ydiff = ynew - y
            bspl = hs * k1 - ydiff
            sol._t_old.append(t)
            sol._h.append(hs)
            sol._coef.append(
                (
                    y,
                    ydiff,
                    bspl,
                    ydiff - hs * k7 - bspl,
                    hs * (D1 * k1 + D3 * k3 + D4 * k4 + D5 * k5 + D6 * k6 + D7 * k7),
                )
            )
            t = t + hs
            y = ynew
            k1 = k7
            err_old = max(en, 1e-4)
            reject = False
            ts.append(t)
            ys.append(y.copy())
            h = h * fac
            if stop is not None:
                reason = stop(t, y)
                if reason:
                    status, message = str(reason), f"stopped at t={t:.6g}"
                    break
        else:
            fac = max(FAC_MIN, SAFETY * en**-ALPHA)
            h = h * fac
            reject = True
    else:
        status, message = "max_steps", f"step limit {max_steps} reached at t={t:.6g}"
    sol.t, sol.y = np.array(ts), np.array(ys)
    sol.status, sol.message, sol.nfev = status, message, nfev
    return sol
