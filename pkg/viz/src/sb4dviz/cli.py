"""sb4d-viz: render frames and convergence plots from an sb4d run directory."""

from __future__ import annotations

import argparse
import sys

from .formats import RunFormatError
from .plots import plot_convergence
from .render import RenderSpec, render_frames


def build_parser():
    p = argparse.ArgumentParser(prog="sb4d-viz", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("frames", help="render one PNG per retained frame")
    f.add_argument("--run", required=True)
    f.add_argument("--out", required=True)
    f.add_argument("--stride", type=int, default=1, help="render every k-th frame")
    f.add_argument("--gamma-threshold", type=float, default=0.01)
    f.add_argument("--color", choices=["actuation", "actuator"], default="actuation")
    f.add_argument("--no-contact", action="store_true")
    f.add_argument("--mp4", action="store_true", help="mux to movie.mp4 when ffmpeg exists")

    c = sub.add_parser("convergence", help="two-panel optimization history plot")
    c.add_argument("--run", required=True)
    c.add_argument("--out", default=None)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "frames":
            spec = RenderSpec(run_dir=args.run, out_dir=args.out,
                              frame_stride=args.stride,
                              gamma_threshold=args.gamma_threshold,
                              color_mode=args.color,
                              draw_contact=not args.no_contact,
                              make_mp4=args.mp4)
            written = render_frames(spec)
            print(f"rendered {len(written)} frames -> {args.out}")
        else:
            path = plot_convergence(args.run, args.out)
            print(f"wrote {path}")
        return 0
    except RunFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
