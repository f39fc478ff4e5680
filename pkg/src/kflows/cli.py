"""``kflows`` command line.

Exit codes: 0 success, 1 failed verification, 2 configuration or parse
error, 3 numerical failure.
"""

import argparse
import csv
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from kflows import config as cfgmod
from kflows.exprfield import EvalError, ParseError
from kflows.geometry import DomainError, SpaceSpec, UnsupportedOperation, to_real
from kflows.ode import StepSizeError
from kflows.trajectory import TrajectoryState

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


# -- output helpers ------------------------------------------------------------


def clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to ``None``."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def dump_json(doc, path=None):
    text = json.dumps(clean(doc), indent=2, allow_nan=False)
    if path is None:
        sys.stdout.write(text + "\n")
    else:
        Path(path).write_text(text + "\n")
    return text


def fmt17(v):
    return format(float(v), ".17g")


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([fmt17(v) for v in row])


def read_trajectory_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise CliError(f"{path}: empty file", EXIT_CONFIG)
    header, body = rows[0], rows[1:]
    try:
        data = np.array([[float(v) for v in r] for r in body])
    except ValueError as exc:
        raise CliError(f"{path}: {exc}", EXIT_CONFIG) from None
    xs = [i for i, h in enumerate(header) if h.startswith("x")]
    if header[0] != "t" or not xs or len(xs) % 2:
        raise CliError(f"{path}: expected columns t, x1..x2n", EXIT_CONFIG)
    return data[:, 0], data[:, xs]


def thread_count(args):
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("KFLOWS_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise CliError(f"KFLOWS_THREADS must be an integer, got {env!r}", EXIT_CONFIG) from None
    return os.cpu_count() or 1


def load_config(args, required=True):
    if args.config is None:
        if required:
            raise CliError("--config is required for this subcommand", EXIT_CONFIG)
        return None
    cfg = cfgmod.load(args.config)
    return cfg.with_tolerances(args.rtol, args.atol)


def out_path(args, cfg):
    if args.out is not None:
        return args.out
    return cfg.output.path if cfg is not None else None


def initial_state(cfg, need_velocity=True):
    from kflows.magnetic import unit_speed

    if cfg.z0 is None:
        raise CliError("config error at initial: z is required", EXIT_CONFIG)
    if cfg.zdot0 is None:
        if need_velocity:
            raise CliError("config error at initial: zdot is required", EXIT_CONFIG)
        return TrajectoryState(cfg.z0, np.zeros(cfg.space.n))
    s0 = TrajectoryState(cfg.z0, cfg.zdot0)
    if cfg.unit_speed:
        try:
            s0 = unit_speed(cfg.space, s0)
        except ValueError as exc:
            raise CliError(f"config error at initial: {exc}", EXIT_CONFIG) from None
    return s0


# -- simulate ------------------------------------------------------------------------


def simulate(cfg):
    """Run the configured flow; returns ``(trajectory, summary)``."""
    from kflows.fields import ScalarField, fit_hplanar_curve, gradient_flow, hamilton_flow
    from kflows.magnetic import MagneticField, classify_closure, integrate_magnetic

    sp = cfg.space
    integ = cfg.integrator
    summary = {"space": sp.describe()}
    if cfg.hamiltonian is not None:
        H = ScalarField.from_expr(cfg.hamiltonian, sp.n)
        flow = hamilton_flow if cfg.flow == "hamilton" else gradient_flow
        s0 = initial_state(cfg, need_velocity=False)
        tr = flow(sp, H, s0.p, (0.0, integ.t_max), tol=integ.rtol)
        vals = np.array([H(x) for x in to_real(tr.z)])
        summary.update(kind=cfg.flow, expression=H.label, energy_drift=float(np.max(np.abs(vals - vals[0]))))
        closure = None
    else:
        s0 = initial_state(cfg)
        B = MagneticField.kahler(cfg.q)
        tr = integrate_magnetic(sp, B, s0, (0.0, integ.t_max), integ.rtol, integ.atol, integ.max_steps)
        summary.update(kind="magnetic", q=cfg.q)
        closure = classify_closure(tr) if tr.V > 0 else None
    fit = fit_hplanar_curve(sp, tr)
    live = ~fit.excluded
    summary.update(
        samples=int(tr.t.size),
        t_end=float(tr.t[-1]),
        exit_flag=tr.exit_flag,
        speed2=tr.V,
        speed_drift={"max": tr.speed_drift, "final": float(tr.speed_drift_series[-1])},
        closure=None if closure is None else closure.as_dict(),
        closed=bool(closure is not None and closure.kind == "closed"),
        hplanar_fit={
            "a_max_abs": float(np.max(np.abs(fit.a[live]))) if live.any() else None,
            "b_mean": float(np.mean(fit.b[live])) if live.any() else None,
            "b_max_dev_from_q": float(np.max(np.abs(fit.b[live] - cfg.q))) if live.any() else None,
            "residual_max": fit.max_residual,
        },
    )
    return tr, summary


def cmd_simulate(args):
    cfg = load_config(args)
    tr, summary = simulate(cfg)
    path = out_path(args, cfg)
    fmt = args.format or cfg.output.format
    rows = tr.rows(cfg.output.stride)
    if path is not None:
        if fmt == "csv":
            write_csv(path, tr.header(), rows)
        else:
            dump_json({"columns": tr.header(), "rows": rows}, path)
        summary["output"] = str(path)
        dump_json(summary, str(path) + ".summary.json")
    else:
        summary["output"] = None
    cfgmod.validate_output(clean(summary), "summary")
    dump_json(summary)
    return EXIT_OK


# -- reduce -----------------------------------------------------------------------


def reduce_report(cfg, out=None):
    from kflows.reduction import round_trip

    sp = cfg.space
    if sp.is_flat:
        raise CliError(
            "the flat branch has closed-form circles and no reduction; use `kflows simulate` instead", EXIT_CONFIG
        )
    s0 = initial_state(cfg)
    res = round_trip(sp, cfg.q, s0, t_max=cfg.integrator.t_max, tol=cfg.integrator.rtol)
    line, inv, sol, rep = res["line"], res["invariants"], res["solution"], res["report"]
    invd = inv.as_dict()
    invd["speed_relation"] = rep["speed_relation"]
    invd["V_from_J"] = inv.speed_from_J(sp.k)
    doc = {
        "space": sp.describe(),
        "q": cfg.q,
        "line": line.describe(sp.epsilon),
        "invariants": invd,
        "comparison": {k: rep[k] for k in (
            "max_distance", "mean_distance", "max_velocity_difference", "max_speed_difference",
            "overlap", "overlap_fraction", "samples", "line_distance", "first_integral_drift_full",
        )},
        "reduced": {
            "status": sol.status,
            "samples": int(sol.phi.size),
            "first_integral_drift": sol.first_integral_drift,
            "t_window": rep["t_window"],
            "p_sign": sol.p_sign,
        },
        "reduced_file": None,
    }
    if out is not None:
        red = Path(str(out) + ".reduced.csv")
        write_csv(red, ["phi", "r", "r_prime", "t"], np.column_stack([sol.phi, sol.r, sol.r_prime, sol.t]))
        doc["reduced_file"] = str(red)
    return doc


def cmd_reduce(args):
    cfg = load_config(args)
    path = out_path(args, cfg)
    doc = reduce_report(cfg, path)
    cfgmod.validate_output(clean(doc), "reduce")
    dump_json(doc, path)
    return EXIT_OK


# -- compare ----------------------------------------------------------------------------


def cmd_compare(args):
    from scipy.interpolate import CubicSpline

    cfg = load_config(args, required=False)
    files = list(args.files)
    if cfg is not None and cfg.compare:
        files = files or [cfg.compare["reference"], cfg.compare["candidate"]]
    if len(files) != 2:
        raise CliError("compare needs a reference and a candidate trajectory CSV", EXIT_CONFIG)
    (t1, x1), (t2, x2) = (read_trajectory_csv(f) for f in files)
    if x1.shape[1] != x2.shape[1]:
        raise CliError("trajectories have different dimensions", EXIT_CONFIG)
    lo, hi = max(t1[0], t2[0]), min(t1[-1], t2[-1])
    if hi < lo:
        raise CliError("trajectories have disjoint time domains", EXIT_CONFIG)
    mask = (t2 >= lo) & (t2 <= hi)
    ref = CubicSpline(t1, x1, axis=0)(t2[mask]) if t1.size > 1 else np.repeat(x1, mask.sum(), axis=0)
    dist = np.linalg.norm(ref - x2[mask], axis=1)
    span = max(t1[-1], t2[-1]) - min(t1[0], t2[0])
    doc = {
        "reference": str(files[0]),
        "candidate": str(files[1]),
        "max_distance": float(dist.max()) if dist.size else 0.0,
        "mean_distance": float(dist.mean()) if dist.size else 0.0,
        "overlap": [float(lo), float(hi)],
        "overlap_fraction": float((hi - lo) / span) if span > 0 else 1.0,
        "samples": int(mask.sum()),
    }
    cfgmod.validate_output(doc, "compare")
    dump_json(doc, args.out)
    return EXIT_OK


# -- sweep -----------------------------------------------------------------------------


def sweep_values(sweep):
    if "q" in sweep:
        return [float(q) for q in sweep["q"]]
    if "q_range" in sweep:
        start, stop, step = sweep["q_range"]
        if step <= 0:
            raise CliError("config error at sweep.q_range: step must be positive", EXIT_CONFIG)
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        return [round(start + i * step, 12) for i in range(max(count, 0))]
    return []


def _sweep_cell(job):
    from kflows.magnetic import MagneticField, classify_closure, integrate_magnetic

    space_d, z0, v0, q, V, horizon, return_tol, rtol, atol, max_steps = job
    sp = SpaceSpec(space_d["n"], space_d["k"], space_d["epsilon"])
    cell = {"q": q, "speed2": V}
    try:
        from kflows.geometry import speed2

        v = np.asarray(v0, dtype=complex)
        v = v * math.sqrt(V / speed2(sp, np.asarray(z0), v))
        tr = integrate_magnetic(sp, MagneticField.kahler(q), TrajectoryState(z0, v), (0.0, horizon), rtol, atol, max_steps)
        cl = classify_closure(tr, return_tol=return_tol)
        cell.update(kind=cl.kind, period=cl.period, reason=cl.reason, speed_drift=tr.speed_drift, t_end=float(tr.t[-1]))
    except Exception as exc:  # per-cell failures are recorded, the sweep continues
        cell.update(kind="failed", period=None, reason=f"{type(exc).__name__}: {exc}")
    return cell


def sweep_atlas(cfg, threads=1):
    from kflows.geometry import speed2

    sp = cfg.space
    qs = sweep_values(cfg.sweep)
    speeds = [float(v) for v in cfg.sweep.get("speed2", [1.0])]
    s0 = initial_state(cfg)
    if speed2(sp, s0.p, s0.v) <= 0:
        raise CliError("config error at initial.zdot: sweeps need a spacelike direction (h(v, v) > 0)", EXIT_CONFIG)
    return_tol = float(cfg.sweep.get("return_tol", 1e-6))
    jobs = []
    for q in qs:
        for V in speeds:
            horizon = cfg.sweep.get("horizon")
            if horizon is None:
                rate = abs(q) / math.sqrt(V) if q else 0.0
                horizon = min(10 * 2 * math.pi / rate, cfg.integrator.t_max) if rate else cfg.integrator.t_max
            integ = cfg.integrator
            jobs.append((sp.describe(), s0.p, s0.v, q, V, float(horizon), return_tol, integ.rtol, integ.atol, integ.max_steps))
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(threads, len(jobs))) as pool:
            cells = list(pool.map(_sweep_cell, jobs))
    else:
        cells = [_sweep_cell(j) for j in jobs]
    return {"space": sp.describe(), "cells": cells}


def cmd_sweep(args):
    cfg = load_config(args)
    doc = sweep_atlas(cfg, thread_count(args))
    cfgmod.validate_output(clean(doc), "sweep")
    dump_json(doc, out_path(args, cfg))
    return EXIT_OK


# -- check-hamiltonian ----------------------------------------------------------------------


def check_report(cfg, seed=0):
    from kflows.fields import ScalarField, check_hplanar_hamiltonian
    from kflows.verify import random_point

    sp = cfg.space
    expr = cfg.check.get("expression") or cfg.hamiltonian
    if expr is None:
        raise CliError("config error at check: expression is required", EXIT_CONFIG)
    H = ScalarField.from_expr(expr, sp.n)
    rng = np.random.default_rng(seed)
    radius = float(cfg.check.get("radius", 0.5))
    pts = [random_point(sp, rng, radius) for _ in range(int(cfg.check.get("samples", 20)))]
    rep = check_hplanar_hamiltonian(sp, H, pts, tol=float(cfg.check.get("tol", 1e-6)))
    doc = {"space": sp.describe(), "expression": H.label}
    doc.update(rep.as_dict())
    return doc


def cmd_check(args):
    cfg = load_config(args)
    doc = check_report(cfg, args.seed)
    cfgmod.validate_output(clean(doc), "check")
    if "warning" in doc:
        print(f"warning: {doc['warning']}", file=sys.stderr)
    dump_json(doc, out_path(args, cfg))
    return EXIT_OK


# -- reconstruct -----------------------------------------------------------------------


def family_preset(sp, rc):
    from kflows.fields import CurveFamily

    name = rc["family"]
    if sp.n != 1:
        raise CliError("config error at reconstruct: family presets are defined for n = 1", EXIT_CONFIG)
    tc = int(rc.get("t_count", 31))
    sc = int(rc.get("sigma_count", 48))
    two_pi = ((0.0, 2 * math.pi),)
    if name == "radial_rays":
        if not sp.is_flat:
            raise CliError("config error at reconstruct: radial_rays needs the flat space", EXIT_CONFIG)
        t_range = tuple(rc.get("t_range", (0.5, 2.0)))
        return CurveFamily(1, lambda t, s: np.array([t * np.exp(1j * s[0]) / math.sqrt(2)]), t_range, two_pi,
                           tc, (sc,), (True,), t_ref=0.0)
    if name == "parallel_lines":
        if not sp.is_flat:
            raise CliError("config error at reconstruct: parallel_lines needs the flat space", EXIT_CONFIG)
        t_range = tuple(rc.get("t_range", (-1.0, 1.0)))
        return CurveFamily(1, lambda t, s: np.array([(t + 1j * s[0]) / math.sqrt(2)]), t_range, ((-1.0, 1.0),),
                           tc, (sc,), t_ref=0.0)
    if name == "geodesic_rays":
        if sp.is_flat or (sp.k > 0) != (sp.epsilon[0] > 0):
            raise CliError("config error at reconstruct: geodesic_rays needs CP1 or CH1", EXIT_CONFIG)
        c = math.sqrt(abs(sp.k))
        rho = math.tan if sp.k > 0 else math.tanh
        t_range = tuple(rc.get("t_range", (0.3, 1.6)))
        return CurveFamily(1, lambda t, s: np.array([rho(c * t / 2) / c * np.exp(1j * s[0])]), t_range, two_pi,
                           tc, (sc,), (True,), t_ref=0.0)
    raise CliError(f"config error at reconstruct.family: unknown family {name!r}", EXIT_CONFIG)


def reconstruct_report(cfg):
    from kflows.fields import CoveringError, NotHPlanarError, reconstruct_hamiltonian

    sp = cfg.space
    rc = cfg.reconstruct
    if not rc:
        raise CliError("config error: [reconstruct] section is required", EXIT_CONFIG)
    fam = family_preset(sp, rc)
    grid = None
    if "grid" in rc:
        lo, hi, cnt = rc["grid"]
        grid = [(lo, hi, int(cnt))] * 2
    try:
        rec = reconstruct_hamiltonian(sp, fam, float(rc.get("base_value", 0.0)), grid, float(rc.get("tol", 1e-6)))
    except (CoveringError, NotHPlanarError) as exc:
        raise CliError(str(exc), EXIT_NUMERIC) from None
    return {
        "space": sp.describe(),
        "family": rc["family"],
        "covered_nodes": rec.covered,
        "interior_nodes": len(rec.sampled.interior_points()),
        "curve_residual": rec.curve_residual,
        "grid_check": {
            "verdict": rec.grid_check.verdict,
            "max_residual": rec.grid_check.max_residual,
            "vacuous": rec.grid_check.vacuous,
        },
        "gradient_alignment": rec.gradient_alignment,
        "grid": {"axes": [a.tolist() for a in rec.sampled.axes], "values": rec.sampled.values.tolist()},
    }


def cmd_reconstruct(args):
    cfg = load_config(args)
    doc = reconstruct_report(cfg)
    cfgmod.validate_output(clean(doc), "reconstruct")
    dump_json(doc, out_path(args, cfg))
    return EXIT_OK


# -- verify ---------------------------------------------------------------------------------


def parse_overrides(items):
    out = {}
    for item in items or []:
        key, sep, val = item.partition("=")
        if not sep:
            raise CliError(f"--tol expects NAME=VALUE, got {item!r}", EXIT_CONFIG)
        try:
            out[key.strip()] = float(val)
        except ValueError:
            raise CliError(f"--tol {key}: {val!r} is not a number", EXIT_CONFIG) from None
    return out


def cmd_verify(args):
    from kflows.verify import format_table, run_verify

    try:
        rows = run_verify(parse_overrides(args.tol), args.perturb_christoffel, args.seed)
    except KeyError as exc:
        raise CliError(str(exc.args[0]), EXIT_CONFIG) from None
    print(format_table(rows))
    doc = {"passed": all(r.passed for r in rows), "checks": [r.as_dict() for r in rows]}
    cfgmod.validate_output(doc, "verify")
    if args.out is not None:
        dump_json(doc, args.out)
    return EXIT_OK if doc["passed"] else EXIT_FAIL


# -- entry point ----------------------------------------------------------------------------------


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="TOML or JSON run configuration")
    common.add_argument("--out", metavar="PATH", help="output file (stdout when omitted)")
    common.add_argument("--rtol", type=float, help="override integrator.rtol")
    common.add_argument("--atol", type=float, help="override integrator.atol")
    common.add_argument("--seed", type=int, default=0, help="seed for random sample points")
    common.add_argument("--threads", type=int, help="worker processes (default: KFLOWS_THREADS or CPU count)")
    common.add_argument("--format", choices=("csv", "json"), help="trajectory file format")

    p = argparse.ArgumentParser(prog="kflows", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="integrate a magnetic, Hamilton or gradient flow")
    sub.add_parser("reduce", parents=[common], help="full vs reduced round trip for a magnetic trajectory")
    c = sub.add_parser("compare", parents=[common], help="chart distance between two trajectory CSVs")
    c.add_argument("files", nargs="*", metavar="CSV")
    sub.add_parser("sweep", parents=[common], help="closure atlas over q and speed")
    sub.add_parser("check-hamiltonian", parents=[common], help="H-planarity verdict for an expression")
    sub.add_parser("reconstruct", parents=[common], help="rebuild a Hamiltonian from a curve family")
    v = sub.add_parser("verify", parents=[common], help="run the invariant suite")
    v.add_argument("--tol", action="append", metavar="NAME=VALUE", help="override a check threshold")
    v.add_argument("--perturb-christoffel", type=float, default=0.0, help=argparse.SUPPRESS)
    return p


COMMANDS = {
    "simulate": cmd_simulate,
    "reduce": cmd_reduce,
    "compare": cmd_compare,
    "sweep": cmd_sweep,
    "check-hamiltonian": cmd_check,
    "reconstruct": cmd_reconstruct,
    "verify": cmd_verify,
}


def main(argv=None):
    from kflows.reduction import DegenerateLineError, SingularityError

    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (cfgmod.ConfigError, ParseError, DomainError, UnsupportedOperation, DegenerateLineError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (StepSizeError, SingularityError, EvalError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
