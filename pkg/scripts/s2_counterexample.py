"""H = S^2 on flat C^2: H-planar as a field, yet its Hamilton orbits turn at b = 2S, not B = 6S.

The field quantities A, B describe nabla_grad grad, while the Hamilton orbit
sees nabla_{J grad} (J grad).  They agree only when the (2,0) part of the
Hessian kills grad H, which holds for S and S/(1+S) but not for S^2.
"""

import numpy as np

from kflows.fields import ScalarField, check_hplanar_hamiltonian, fit_hplanar_curve, hamilton_flow, hplanar_fit_at
from kflows.geometry import SpaceSpec


def main():
    sp = SpaceSpec.flat(2)
    rng = np.random.default_rng(0)
    for src in ("x1^2 + x2^2 + x3^2 + x4^2", "(x1^2 + x2^2 + x3^2 + x4^2)^2"):
        H = ScalarField.from_expr(src, 2)
        pts = [0.5 * (rng.standard_normal(2) + 1j * rng.standard_normal(2)) for _ in range(10)]
        verdict = check_hplanar_hamiltonian(sp, H, pts).verdict
        z0 = pts[0]
        S = float(np.sum(np.abs(z0) ** 2))
        tr = hamilton_flow(sp, H, z0, (0.0, 3.0))
        fit = fit_hplanar_curve(sp, tr)
        f = hplanar_fit_at(sp, H, z0)
        print(f"H = {src}")
        print(f"  field verdict {verdict}, S = {S:.4f}")
        print(f"  field      A = {f.A: .6f}  B = {f.B: .6f}")
        print(f"  orbit      a = {np.mean(fit.a): .6f}  b = {np.mean(fit.b): .6f}  (spread {np.ptp(fit.b):.1e})")


if __name__ == "__main__":
    main()
