"""Quick invariant suite behind ``kflows verify``.

Every check returns one :class:`Check` row; thresholds can be overridden by
name.  ``perturb_christoffel`` scales the closed-form Christoffel symbols
before they are compared with the finite-difference oracle and is only
meant as a negative control.
"""

from dataclasses import dataclass

import numpy as np

from kflows import exprfield, fd
from kflows.fields import ScalarField, check_hplanar_hamiltonian, hamilton_flow
from kflows.geometry import (
    SpaceSpec,
    christoffel,
    hol_sect_curvature,
    metric_matrix,
    ricci,
    to_complex,
    to_real,
)
from kflows.magnetic import MagneticField, classify_closure, integrate_magnetic, unit_speed
from kflows.trajectory import TrajectoryState

DEFAULT_THRESHOLDS = {
    "christoffel": 1e-6,
    "einstein": 1e-5,
    "hol_sect": 1e-4,
    "speed_drift": 1e-8,
    "energy": 1e-8,
    "round_trip": 1e-6,
    "first_integral": 1e-8,
    "speed_relation": 1e-8,
    "circle": 1e-6,
    "hplanar_pass": 1e-8,
    "hplanar_fail": 0.1,
    "parser": 0.0,
}

LOWER_BOUNDS = {"hplanar_fail"}


@dataclass(frozen=True)
class Check:
    name: str
    value: float
    threshold: float
    passed: bool
    detail: str = ""

    def as_dict(self):
        v = None if self.value is None or not np.isfinite(self.value) else float(self.value)
        return {"name": self.name, "value": v, "threshold": self.threshold, "passed": self.passed, "detail": self.detail}


def model_spaces():
    return {
        "CP1": SpaceSpec.projective(1, 1.0),
        "CP2": SpaceSpec.projective(2, 1.0),
        "CH1": SpaceSpec.hyperbolic(1, -1.0),
        "indefinite": SpaceSpec(2, 1.0, (1, -1)),
    }


def random_point(space, rng, radius=0.5):
    """Chart point with ``1 + S`` safely positive."""
    while True:
        z = radius * (rng.standard_normal(space.n) + 1j * rng.standard_normal(space.n)) / np.sqrt(2 * space.n)
        if space.is_flat or 1.0 + space.S(z) > 0.5:
            return z


def random_direction(space, z, rng):
    """Tangent vector with ``|h(v, v)|`` bounded away from zero."""
    from kflows.geometry import speed2

    while True:
        v = rng.standard_normal(space.n) + 1j * rng.standard_normal(space.n)
        v /= np.linalg.norm(v)
        if abs(speed2(space, z, v)) > 0.05:
            return v


def christoffel_fd(space, z):
    """``G^l_{am} = g^{r-bar l} d_a g_{m r-bar}`` with the metric differentiated numerically."""
    x = to_real(z)
    dG = fd.gradient(lambda y: metric_matrix(space, to_complex(y)), x)  # dG[m, r, i]
    dGa = fd.d_holo(dG)  # dGa[m, r, a]
    Ginv = np.linalg.inv(metric_matrix(space, z))
    return np.einsum("mra,rl->lam", dGa, Ginv)


def _row(name, value, thresholds, detail=""):
    thr = thresholds[name]
    if name in LOWER_BOUNDS:
        ok = bool(np.isfinite(value) and value > thr)
    else:
        ok = bool(np.isfinite(value) and value <= thr) if thr > 0 else bool(value == 0)
    return Check(name, float(value), float(thr), ok, detail)


def check_geometry(rng, thresholds, perturb=0.0, samples=5):
    rows = []
    worst_c = worst_e = worst_k = 0.0
    for label, sp in model_spaces().items():
        for _ in range(samples):
            z = random_point(sp, rng)
            G = christoffel(sp, z) * (1.0 + perturb)
            ref = christoffel_fd(sp, z)
            worst_c = max(worst_c, float(np.max(np.abs(G - ref))))
            lam_g = 0.5 * sp.k * (sp.n + 1) * metric_matrix(sp, z)
            worst_e = max(worst_e, float(np.max(np.abs(ricci(sp, z) - lam_g)) / np.max(np.abs(lam_g))))
            v = random_direction(sp, z, rng)
            worst_k = max(worst_k, abs(hol_sect_curvature(sp, z, v) - sp.k))
    rows.append(_row("christoffel", worst_c, thresholds, "closed form vs finite-difference metric derivative"))
    rows.append(_row("einstein", worst_e, thresholds, "|Ricci - k(n+1)/2 g| relative to |k(n+1)/2 g|"))
    rows.append(_row("hol_sect", worst_k, thresholds, "holomorphic sectional curvature - k"))
    return rows


def check_conservation(rng, thresholds, t_max=10.0):
    worst = 0.0
    for sp in model_spaces().values():
        z = random_point(sp, rng, 0.3)
        v = 0.2 * random_direction(sp, z, rng)
        for q in (0.0, 0.5, -2.0):
            tr = integrate_magnetic(sp, MagneticField.kahler(q), TrajectoryState(z, v), (0.0, t_max))
            worst = max(worst, tr.speed_drift)
    rows = [_row("speed_drift", worst, thresholds, f"magnetic, t in [0, {t_max:g}]")]
    sp = SpaceSpec.projective(1, 1.0)
    H = ScalarField.from_expr("(x1^2 + x2^2) / (1 + x1^2 + x2^2)", 1)
    tr = hamilton_flow(sp, H, np.array([0.4 + 0.2j]), (0.0, t_max))
    vals = np.array([H(x) for x in to_real(tr.z)])
    rows.append(_row("energy", float(np.max(np.abs(vals - vals[0]))), thresholds, "Hamilton flow of S/(1+S) on CP1"))
    return rows


def check_reduction(rng, thresholds, t_max=2.0):
    from kflows.reduction import round_trip

    worst_d = worst_f = worst_s = 0.0
    for sp in model_spaces().values():
        z = random_point(sp, rng, 0.3)
        v = 0.2 * random_direction(sp, z, rng)
        for q in (0.0, 0.5):
            out = round_trip(sp, q, TrajectoryState(z, v), t_max=t_max)
            r = out["report"]
            worst_d = max(worst_d, r["max_distance"])
            worst_f = max(worst_f, r["first_integral_drift_full"], r["first_integral_drift_reduced"])
            worst_s = max(worst_s, abs(r["speed_relation"] - 1.0))
    return [
        _row("round_trip", worst_d, thresholds, "full vs lifted chart distance"),
        _row("first_integral", worst_f, thresholds, "reduced and projected full drift"),
        _row("speed_relation", worst_s, thresholds, "V J^2 k / (4 A (C+1)) - 1"),
    ]


def _round_trip_cell(job):
    from kflows.reduction import round_trip

    label, q, z, v, t_max = job
    sp = model_spaces()[label]
    out = round_trip(sp, q, TrajectoryState(z, v), t_max=t_max)
    rec = {"space": label, "q": q, "A": out["invariants"].A, "C": out["invariants"].C, "J": out["invariants"].J}
    rec["V"] = out["invariants"].V
    rec.update(out["report"])
    return rec


def round_trip_matrix(per_space=20, qs=(0.0, 0.5, -0.5, 2.0, -2.0), seed=0, t_max=3.0, speed=0.2, threads=1):
    """Full vs reduced round trips from random non-degenerate starts.

    Every space gets ``per_space`` initial conditions, each run for every ``q``.
    Starts at a turning point (``dphi/dt = 0``) or on a degenerate line are redrawn.
    """
    from concurrent.futures import ProcessPoolExecutor

    from kflows.reduction import DegenerateLineError, SingularityError, reduction_setup

    rng = np.random.default_rng(seed)
    jobs = []
    for label, sp in model_spaces().items():
        for _ in range(per_space):
            while True:
                z = random_point(sp, rng, 0.3)
                v = speed * random_direction(sp, z, rng)
                try:
                    reduction_setup(sp, 0.0, TrajectoryState(z, v))
                except (DegenerateLineError, SingularityError):
                    continue
                break
            jobs += [(label, float(q), z, v, t_max) for q in qs]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(_round_trip_cell, jobs, chunksize=4))
    return [_round_trip_cell(j) for j in jobs]


def check_flat(thresholds):
    sp = SpaceSpec.flat(1)
    q = 1.5
    s0 = TrajectoryState(np.array([0.5 + 0j]), np.array([0.3 + 0.4j]))
    T = 2 * np.pi / q
    tr = integrate_magnetic(sp, MagneticField.kahler(q), s0, (0.0, 1.2 * T))
    centre = s0.p + 1j * s0.v / q
    radius = abs(s0.v[0]) / q
    err_r = float(np.max(np.abs(np.abs(tr.z[:, 0] - centre[0]) - radius)))
    cl = classify_closure(tr)
    err_T = abs(cl.period - T) if cl.period is not None else np.inf
    return [_row("circle", max(err_r, err_T), thresholds, "flat circle radius and period")]


def check_closure(thresholds):
    sp = SpaceSpec.hyperbolic(1, -1.0)
    s0 = unit_speed(sp, TrajectoryState(np.array([0j]), np.array([1.0 + 0j])))
    kinds = {}
    for q in (0.5, 1.0, 1.5):
        tr = integrate_magnetic(sp, MagneticField.kahler(q), s0, (0.0, 40.0))
        kinds[q] = classify_closure(tr).kind
    ok = kinds == {0.5: "open", 1.0: "undetermined", 1.5: "closed"}
    detail = ", ".join(f"q={q:g}: {k}" for q, k in kinds.items())
    return [Check("closure", 0.0 if ok else 1.0, 0.0, ok, detail)]


def check_hplanar(thresholds, rng):
    sp = SpaceSpec.flat(2)
    pts = [random_point(sp, rng, 1.0) for _ in range(10)]
    good = check_hplanar_hamiltonian(sp, ScalarField.from_expr("x1^2+x2^2+x3^2+x4^2", 2), pts)
    bad = check_hplanar_hamiltonian(sp, ScalarField.from_expr("x1^2 + 2*x4^2 + x2", 2), pts)
    return [
        _row("hplanar_pass", good.max_residual, thresholds, "x1^2+x2^2+x3^2+x4^2"),
        _row("hplanar_fail", bad.max_residual, thresholds, "x1^2 + 2*x4^2 + x2"),
    ]


PARSER_CORPUS = ["x1^2 + x2^2", "sin(x1)*exp(-x2)", "sqrt(1 + re(z1)^2) / (2 - im(z1))", "-x1^-2 + ln(3 + x2)"]


def check_parser(thresholds):
    bad = 0
    for src in PARSER_CORPUS:
        e = exprfield.parse(src, 1)
        if exprfield.parse(exprfield.to_string(e), 1) != e:
            bad += 1
    return [_row("parser", float(bad), thresholds, f"{len(PARSER_CORPUS)} expressions round-tripped")]


def run_verify(overrides=None, perturb_christoffel=0.0, seed=0):
    thresholds = dict(DEFAULT_THRESHOLDS)
    for key, val in (overrides or {}).items():
        if key not in thresholds:
            raise KeyError(f"unknown check {key!r}; known: {', '.join(sorted(thresholds))}")
        thresholds[key] = float(val)
    rng = np.random.default_rng(seed)
    rows = []
    rows += check_geometry(rng, thresholds, perturb_christoffel)
    rows += check_conservation(rng, thresholds)
    rows += check_reduction(rng, thresholds)
    rows += check_flat(thresholds)
    rows += check_closure(thresholds)
    rows += check_hplanar(thresholds, rng)
    rows += check_parser(thresholds)
    return rows


def format_table(rows):
    width = max(len(r.name) for r in rows)
    lines = [f"{'check':<{width}}  {'value':>11}  {'threshold':>9}  result"]
    for r in rows:
        val = "nan" if not np.isfinite(r.value) else f"{r.value:.3e}"
        lines.append(f"{r.name:<{width}}  {val:>11}  {r.threshold:>9.1e}  {'PASS' if r.passed else 'FAIL'}  {r.detail}")
    return "\n".join(lines)
