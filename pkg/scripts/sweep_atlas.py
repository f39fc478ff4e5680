"""Closure atlas over (q, speed) on CH1 and CP1 with the analytic periods alongside.

    python3 scripts/sweep_atlas.py --threads 4 --out atlas.csv
"""

import argparse
import csv

import numpy as np

from kflows import config as cfgmod
from kflows.cli import sweep_atlas


def analytic_period(k, q, V):
    """Circle period at squared speed ``V``, or ``None`` when the orbit does not close."""
    rate2 = q * q / V + k
    return 2 * np.pi / np.sqrt(rate2) if rate2 > 0 else None


def run(k, qs, speeds, threads, t_max):
    doc = {
        "space": {"n": 1, "k": k, "epsilon": [1 if k > 0 else -1]},
        "initial": {"z": [0.0, 0.0], "zdot": [1.0, 0.0]},
        "integrator": {"t_max": t_max},
        "sweep": {"q": qs, "speed2": speeds},
    }
    return sweep_atlas(cfgmod.from_document(doc), threads)["cells"]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--q", type=float, nargs=3, default=[0.0, 2.5, 0.125], metavar=("START", "STOP", "STEP"))
    ap.add_argument("--speed2", type=float, nargs="+", default=[0.25, 1.0, 4.0])
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--t-max", type=float, default=80.0)
    ap.add_argument("--out")
    args = ap.parse_args()

    start, stop, step = args.q
    qs = [round(start + i * step, 12) for i in range(int(round((stop - start) / step)) + 1)]
    rows = []
    for label, k in (("CH1", -1.0), ("CP1", 1.0)):
        for c in run(k, qs, args.speed2, args.threads, args.t_max):
            ref = analytic_period(k, c["q"], c["speed2"])
            err = abs(c["period"] - ref) if c["period"] is not None and ref is not None else None
            rows.append({"space": label, "q": c["q"], "speed2": c["speed2"], "kind": c["kind"],
                         "period": c["period"], "analytic": ref, "error": err})
    for r in rows:
        err = "" if r["error"] is None else f"{r['error']:.1e}"
        per = "" if r["period"] is None else f"{r['period']:.10f}"
        print(f"{r['space']}  q {r['q']:6.3f}  V {r['speed2']:5.2f}  {r['kind']:<12}  {per:>14}  {err}")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)


if __name__ == "__main__":
    main()
