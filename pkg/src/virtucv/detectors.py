"""Reference detectors for exercising the diagnosis harness.

Both read the sample's instance mask through the harness environment
(VIRTUCV_MASK_PATH, VIRTUCV_TARGET_COLOR) instead of looking at the image,
which makes their output exactly predictable:

  oracle   emits the ground-truth box, score 1.0 (perfect detector)
  jitter   emits the ground-truth box shifted by --dx/--dy fractions of its
           size and scaled by --scale about its center (controlled failure)

Usage (the image path argument is appended by the harness):

  virtucv-detect oracle image.png
  virtucv-detect jitter --dx 0.6 image.png
"""

from __future__ import annotations

import argparse
import os
import sys

from .diagnose import BBox, bbox_from_mask
from .imgio import read_png
from .protocol import fmt_real


def _ground_truth() -> BBox | None:
    mask_path = os.environ.get("VIRTUCV_MASK_PATH")
    color_text = os.environ.get("VIRTUCV_TARGET_COLOR")
    if not mask_path or not color_text:
        raise SystemExit("VIRTUCV_MASK_PATH and VIRTUCV_TARGET_COLOR must be set")
    try:
        color = tuple(int(c) for c in color_text.split(","))
    except ValueError:
        raise SystemExit(f"bad VIRTUCV_TARGET_COLOR {color_text!r}") from None
    if len(color) != 3:
        raise SystemExit(f"bad VIRTUCV_TARGET_COLOR {color_text!r}")
    return bbox_from_mask(read_png(mask_path), color)


def _emit(box: BBox, score: float = 1.0) -> None:
    print(f"{fmt_real(box.x0)} {fmt_real(box.y0)} "
          f"{fmt_real(box.x1)} {fmt_real(box.y1)} {fmt_real(score)}")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="virtucv-detect",
        description="Reference detectors driven by the harness-provided mask.")
    sub = parser.add_subparsers(dest="detector", required=True)

    oracle = sub.add_parser("oracle", help="emit the ground-truth box")
    oracle.add_argument("image")

    jitter = sub.add_parser("jitter", help="emit a perturbed ground-truth box")
    jitter.add_argument("--dx", type=float, default=0.0,
                        help="horizontal shift as a fraction of box width")
    jitter.add_argument("--dy", type=float, default=0.0,
                        help="vertical shift as a fraction of box height")
    jitter.add_argument("--scale", type=float, default=1.0,
                        help="size multiplier about the box center")
    jitter.add_argument("image")

    args = parser.parse_args(argv)
    gt = _ground_truth()
    if gt is None:
        return 0  # no target pixels: detect nothing

    if args.detector == "oracle":
        _emit(gt)
        return 0

    if args.scale <= 0.0:
        raise SystemExit("--scale must be positive")
    w = gt.x1 - gt.x0
    h = gt.y1 - gt.y0
    cx = (gt.x0 + gt.x1) / 2.0 + args.dx * w
    cy = (gt.y0 + gt.y1) / 2.0 + args.dy * h
    half_w = w * args.scale / 2.0
    half_h = h * args.scale / 2.0
    _emit(BBox(cx - half_w, cy - half_h, cx + half_w, cy + half_h))
    return 0


if __name__ == "__main__":
    sys.exit(main())
