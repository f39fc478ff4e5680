"""Full vs reduced round trips over random starts, summarised per space and q.

    python3 scripts/round_trip_matrix.py --per-space 20 --threads 4
"""

import argparse
import json
from collections import defaultdict

import numpy as np

from kflows.verify import round_trip_matrix


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--per-space", type=int, default=20)
    ap.add_argument("--q", type=float, nargs="+", default=[0.0, 0.5, -0.5, 2.0, -2.0])
    ap.add_argument("--t-max", type=float, default=3.0)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out", help="dump every record as JSON")
    args = ap.parse_args()

    recs = round_trip_matrix(args.per_space, args.q, args.seed, args.t_max, threads=args.threads)
    groups = defaultdict(list)
    for r in recs:
        groups[r["space"], r["q"]].append(r)
    print(f"{'space':<11} {'q':>5}  {'distance':>9}  {'FI full':>9}  {'FI red':>9}  {'V rel':>9}  {'window':>6}  turning")
    for (space, q), rs in groups.items():
        turning = sum(r["reduced_status"] == "turning_point" for r in rs)
        print(
            f"{space:<11} {q:5.1f}  {max(r['max_distance'] for r in rs):9.1e}  "
            f"{max(r['first_integral_drift_full'] for r in rs):9.1e}  "
            f"{max(r['first_integral_drift_reduced'] for r in rs):9.1e}  "
            f"{max(abs(r['speed_relation'] - 1) for r in rs):9.1e}  "
            f"{np.median([r['t_window'] for r in rs]):6.2f}  {turning}/{len(rs)}"
        )
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(recs, fh, indent=1, default=float)


if __name__ == "__main__":
    main()
