#!/usr/bin/env python3
"""Drive a full-scale co-design run for one of the bundled presets.

These are the long offline experiments (hours to days on a workstation CPU;
the original 3D studies used a GPU at this resolution):

    walker2d    horizontal locomotion, 2D, T = 0.5 s, 1600 particles
    climber2d   wall climbing with a gravity ramp, T = 1 s
    balancer2d  posture control on a vibrating floor, T = 1 s
    walker3d    horizontal locomotion, 3D, 8000 particles (reduced-scale CPU)
    rotator3d   rotation about +y, 3D (reduced-scale CPU)

Example:

    python3 scripts/run_paper_task.py walker2d --out runs/walker2d
    python3 scripts/run_paper_task.py walker2d --out runs/walker2d --resume \
        runs/walker2d/checkpoint.sb4d

After a run finishes:

    python3 -m sb4d.cli postprocess --run runs/walker2d
    sb4d-viz frames --run runs/walker2d --out runs/walker2d/frames
    sb4d-viz convergence --run runs/walker2d
"""

import argparse
import subprocess
import sys

PRESETS = ("walker2d", "climber2d", "balancer2d", "walker3d", "rotator3d")


def main():
    ap = argparse.ArgumentParser(description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("preset", choices=PRESETS)
    ap.add_argument("--out", required=True)
    ap.add_argument("--iters", type=int, default=None,
                    help="iteration cap (default: the preset's s_max)")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--resume", default=None)
    ap.add_argument("--seed", type=int, default=None)
    args = ap.parse_args()

    cmd = [sys.executable, "-m", "sb4d.cli", "optimize",
           "--config", args.preset, "--out", args.out,
           "--threads", str(args.threads)]
    if args.iters is not None:
        cmd += ["--iters", str(args.iters)]
    if args.resume:
        cmd += ["--resume", args.resume]
    if args.seed is not None:
        cmd += ["--seed", str(args.seed)]
    print("+", " ".join(cmd))
    sys.exit(subprocess.call(cmd))


if __name__ == "__main__":
    main()
