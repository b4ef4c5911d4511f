"""Slide distance and stop time against the closed form for a range of step sizes.

Writes one CSV row per (dt, friction, speed): relative errors of distance and
stop time, showing the first-order distance error of semi-implicit Euler.
"""
import argparse
import csv
import sys

from twin_ident.dynamics import GRAVITY, HitSpec, ObjectPhysics, SlideState, integrate_slide
from twin_ident.geometry import box_mesh, mass_properties


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dts", type=float, nargs="+", default=[1e-3, 5e-4, 2.5e-4, 1e-4])
    ap.add_argument("--friction", type=float, nargs="+", default=[0.05, 0.3, 1.0])
    ap.add_argument("--speeds", type=float, nargs="+", default=[0.1, 0.5, 2.0])
    ap.add_argument("--out", help="CSV path (default: stdout)")
    args = ap.parse_args()

    props = mass_properties(box_mesh((0.16, 0.10, 0.06)))
    hit = HitSpec((-0.08, 0.0), (1.0, 0.0), 1.0)
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    w = csv.writer(fh)
    w.writerow(["dt", "friction", "v0", "distance_rel_error", "stop_time_rel_error"])
    for dt in args.dts:
        for mu in args.friction:
            for v0 in args.speeds:
                physics = ObjectPhysics(mu, 0.5)
                t_stop = v0 / (mu * GRAVITY)
                run = integrate_slide(SlideState(0, 0, 0, (v0, 0.0)), physics, props, hit, GRAVITY, dt, 2 * t_stop + 1)
                dist = run.states[-1, 0] - run.states[0, 0]
                w.writerow([dt, mu, v0, f"{dist / (v0 * v0 / (2 * mu * GRAVITY)) - 1:.3e}",
                            f"{run.stop_time / t_stop - 1:.3e}"])
    if args.out:
        fh.close()


if __name__ == "__main__":
    main()
