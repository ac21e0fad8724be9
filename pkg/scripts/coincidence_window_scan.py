#!/usr/bin/env python3
"""Measure the coincidence window of the configured neuron parameters: the
largest left/right arrival separation at which a coincidence cell still
fires. Scans the engine itself with isolated event pairs.

Example:
    python3 scripts/coincidence_window_scan.py --tau-m 2000 --tau-s 10000
"""

import argparse

from evstereo.events import CameraGeometry, DvsEvent, LEFT, ON, RIGHT, StereoEventStream
from evstereo.simulator import LifParams, simulate
from evstereo.topology import build_topology


def pair_fires(topo, params, delta_us: int) -> bool:
    events = [
        DvsEvent(10_000, 3, 2, ON, LEFT),
        DvsEvent(10_000 + delta_us, 5, 2, ON, RIGHT),
    ]
    stream = StereoEventStream.from_events(events, CameraGeometry(16, 16))
    return len(simulate(topo, stream, params)) > 0


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--tau-m", type=float, default=2000.0)
    ap.add_argument("--tau-s", type=float, default=10000.0)
    ap.add_argument("--w-rc", type=float, default=0.6)
    ap.add_argument("--step-us", type=int, default=250)
    args = ap.parse_args()

    from evstereo.topology import WeightParams

    topo = build_topology(16, 16, 7, WeightParams(w_rc=args.w_rc))
    params = LifParams(tau_m=args.tau_m, tau_s=args.tau_s, overrides={})

    print(f"tau_m={args.tau_m:.0f}us tau_s={args.tau_s:.0f}us w_rc={args.w_rc}")
    print(f"{'delta_us':>9} | fires")
    print("-" * 18)
    last_fire = None
    delta = 0
    while True:
        fires = pair_fires(topo, params, delta)
        print(f"{delta:>9} | {'yes' if fires else 'no'}")
        if fires:
            last_fire = delta
        elif last_fire is not None:
            break
        if delta > 50_000:
            break
        delta += args.step_us
    if last_fire is not None:
        lo, hi = last_fire, delta
        while lo + 1 < hi:
            mid = (lo + hi) // 2
            if pair_fires(topo, params, mid):
                lo = mid
            else:
                hi = mid
        print(f"\ncoincidence window: +-{lo} us")


if __name__ == "__main__":
    main()
