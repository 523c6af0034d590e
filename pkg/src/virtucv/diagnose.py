"""Detector diagnosis: orbit a target, measure per-viewpoint AP.

For every (azimuth, elevation) cell the camera sweeps the configured
distances, always aimed at the target's bounds centroid.  Each sample
captures the lit image and the instance mask; the mask yields the ground
truth box, and a sample counts as visible when that box covers at least
``visibility_threshold`` of the image pixels.  The external detector runs on
the lit image only; the mask path travels in environment variables so the
bundled oracle detectors can cheat, real detectors just ignore them.

AP per cell pools detections across distances: rank by descending score,
greedy-match each detection to the sample's single ground truth at
IoU >= 0.5, build the precision-recall curve, and integrate with all-point
interpolation (precision envelope made non-increasing).  Cells with zero
visible samples report NOT_VISIBLE, rendered "-" in the table.

Detector contract: an executable invoked as ``argv... image.png`` printing
one ``x0 y0 x1 y1 score`` line per detection on stdout.  Environment:
VIRTUCV_MASK_PATH and VIRTUCV_TARGET_COLOR ("r,g,b") describe the sample's
mask.  Nonzero exit aborts the run with the detector's stderr.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import shlex
import subprocess
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .client import Connection, connect
from .imgio import read_png
from .render import instance_color
from .scene import CameraPose, Rotation, Vec3

DEFAULT_AZIMUTHS = (90.0, 135.0, 180.0, 225.0, 270.0)
DEFAULT_ELEVATIONS = (0.0, 30.0, 60.0)
DEFAULT_DISTANCES = tuple(float(d) for d in range(200, 291, 10))
DEFAULT_VISIBILITY = 0.001  # fraction of image pixels

IOU_THRESHOLD = 0.5


class DiagnoseError(Exception):
    pass


class BBox(NamedTuple):
    """Axis-aligned box over [x0, x1) x [y0, y1); score set on detections."""

    x0: float
    y0: float
    x1: float
    y1: float
    score: Optional[float] = None

    def area(self) -> float:
        return (self.x1 - self.x0) * (self.y1 - self.y0)


@dataclass(frozen=True)
class ViewGrid:
    target: str
    azimuths: tuple = DEFAULT_AZIMUTHS
    elevations: tuple = DEFAULT_ELEVATIONS
    distances: tuple = DEFAULT_DISTANCES

    def __post_init__(self):
        if not (self.azimuths and self.elevations and self.distances):
            raise DiagnoseError("grid lists must be non-empty")
        if any(d <= 0 for d in self.distances):
            raise DiagnoseError("distances must be positive")


@dataclass(frozen=True)
class CellResult:
    azimuth: float
    elevation: float
    ap: Optional[float]  # None = target never visible in this cell
    visible_samples: int
    total_samples: int


@dataclass
class DiagnosisReport:
    grid: ViewGrid
    visibility_threshold: float
    cells: dict = field(default_factory=dict)  # (azimuth, elevation) -> CellResult


def orbit_pose(target_center: Vec3, azimuth: float, elevation: float,
               distance: float) -> CameraPose:
    """Camera on the orbit sphere, forward axis aimed exactly at the center."""
    az = math.radians(azimuth)
    el = math.radians(elevation)
    location = Vec3(
        target_center.x + distance * (math.cos(el) * math.cos(az)),
        target_center.y + distance * (math.cos(el) * math.sin(az)),
        target_center.z + distance * math.sin(el),
    )
    rotation = Rotation(yaw=(azimuth + 180.0) % 360.0, pitch=-elevation, roll=0.0)
    return CameraPose(location=location, rotation=rotation)


def bbox_from_mask(mask: np.ndarray, color) -> Optional[BBox]:
    """Tight box over pixels exactly matching the instance color."""
    r, g, b = color
    match = (mask[:, :, 0] == r) & (mask[:, :, 1] == g) & (mask[:, :, 2] == b)
    ys, xs = np.nonzero(match)
    if len(xs) == 0:
        return None
    return BBox(float(xs.min()), float(ys.min()),
                float(xs.max()) + 1.0, float(ys.max()) + 1.0)


def iou(a: BBox, b: BBox) -> float:
    inter_w = min(a.x1, b.x1) - max(a.x0, b.x0)
    inter_h = min(a.y1, b.y1) - max(a.y0, b.y0)
    if inter_w <= 0.0 or inter_h <= 0.0:
        return 0.0
    inter = inter_w * inter_h
    union = a.area() + b.area() - inter
    return inter / union if union > 0.0 else 0.0


def average_precision(detections: Sequence[Sequence[BBox]],
                      ground_truth: Sequence[BBox],
                      iou_threshold: float = IOU_THRESHOLD) -> float:
    """AP over images that each hold exactly one ground-truth box.

    Detections are pooled across images, ranked by descending score, and
    greedily matched (first detection wins a ground truth).  All-point
    interpolation integrates the precision-recall curve.
    """
    if len(detections) != len(ground_truth):
        raise ValueError("detections and ground_truth must align per image")
    if not ground_truth or any(gt is None for gt in ground_truth):
        raise ValueError("every image needs a ground-truth box")
    flat = []
    for img, dets in enumerate(detections):
        for order, det in enumerate(dets):
            if det.score is None or not 0.0 <= det.score <= 1.0:
                raise ValueError(f"detection {det} needs a score in [0, 1]")
            flat.append((-det.score, img, order, det))
    flat.sort(key=lambda item: item[:3])

    npos = len(ground_truth)
    matched = set()
    tp = fp = 0
    precisions = []
    recalls = []
    for _neg_score, img, _order, det in flat:
        if img not in matched and iou(det, ground_truth[img]) >= iou_threshold:
            matched.add(img)
            tp += 1
        else:
            fp += 1
        precisions.append(tp / (tp + fp))
        recalls.append(tp / npos)

    mrec = [0.0] + recalls + [1.0]
    mpre = [0.0] + precisions + [0.0]
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    ap = 0.0
    for i in range(len(mrec) - 1):
        ap += (mrec[i + 1] - mrec[i]) * mpre[i + 1]
    return ap


def _run_detector(argv: list[str], image_path: str, mask_path: str,
                  target_color) -> list[BBox]:
    env = dict(os.environ)
    env["VIRTUCV_MASK_PATH"] = mask_path
    env["VIRTUCV_TARGET_COLOR"] = ",".join(str(c) for c in target_color)
    proc = subprocess.run(argv + [image_path], capture_output=True, text=True, env=env)
    if proc.returncode != 0:
        raise DiagnoseError(
            f"detector {argv} exited {proc.returncode} on {image_path}:\n{proc.stderr}")
    detections = []
    for line in proc.stdout.splitlines():
        line = line.strip()
        if not line:
            continue
        tokens = line.split()
        if len(tokens) != 5:
            raise DiagnoseError(f"detector line {line!r} is not 'x0 y0 x1 y1 score'")
        try:
            x0, y0, x1, y1, score = (float(t) for t in tokens)
        except ValueError:
            raise DiagnoseError(f"detector line {line!r} has non-numeric fields") from None
        if x0 >= x1 or y0 >= y1:
            raise DiagnoseError(f"detector line {line!r} has an empty box")
        detections.append(BBox(x0, y0, x1, y1, score))
    return detections


def run_diagnosis(conn: Connection, grid: ViewGrid, detector: list[str],
                  visibility_threshold: float = DEFAULT_VISIBILITY,
                  camera: int = 0) -> DiagnosisReport:
    objects = conn.list_objects()
    if grid.target not in objects:
        raise DiagnoseError(f"target {grid.target!r} not in scene objects {objects}")
    target_color = instance_color(objects.index(grid.target))
    (min_x, min_y, min_z), (max_x, max_y, max_z) = conn.get_object_bounds(grid.target)
    center = Vec3((min_x + max_x) / 2.0, (min_y + max_y) / 2.0, (min_z + max_z) / 2.0)

    report = DiagnosisReport(grid=grid, visibility_threshold=visibility_threshold)
    with ThreadPoolExecutor(max_workers=4) as pool:
        for elevation in grid.elevations:
            for azimuth in grid.azimuths:
                pending = []  # (ground truth, detector future) per visible sample
                for distance in grid.distances:
                    pose = orbit_pose(center, azimuth, elevation, distance)
                    conn.set_camera_location(camera, pose.location)
                    conn.set_camera_rotation(
                        camera,
                        (pose.rotation.yaw, pose.rotation.pitch, pose.rotation.roll))
                    image_path = conn.capture(camera, "image")
                    mask_path = conn.capture(camera, "object_mask")
                    mask = read_png(mask_path)
                    gt = bbox_from_mask(mask, target_color)
                    pixels = mask.shape[0] * mask.shape[1]
                    if gt is None or gt.area() < visibility_threshold * pixels:
                        continue
                    pending.append((gt, pool.submit(
                        _run_detector, detector, image_path, mask_path, target_color)))
                if pending:
                    gts = [gt for gt, _ in pending]
                    dets = [fut.result() for _, fut in pending]
                    ap = average_precision(dets, gts)
                else:
                    ap = None
                report.cells[(azimuth, elevation)] = CellResult(
                    azimuth=azimuth, elevation=elevation, ap=ap,
                    visible_samples=len(pending), total_samples=len(grid.distances))
    return report


# ---------------------------------------------------------------------------
# Report rendering.
# ---------------------------------------------------------------------------

def _label(value: float) -> str:
    return str(int(value)) if value == int(value) else str(value)


def report_text(report: DiagnosisReport) -> str:
    grid = report.grid
    width = 7
    lines = [
        f"AP of target '{grid.target}' by viewpoint "
        f"(IoU {IOU_THRESHOLD}, {len(grid.distances)} distances per cell, "
        f"'-' = never visible)",
        "",
    ]
    header = "elev \\ azim".rjust(12) + "".join(_label(az).rjust(width)
                                                for az in grid.azimuths)
    lines.append(header)
    for el in grid.elevations:
        row = _label(el).rjust(12)
        for az in grid.azimuths:
            cell = report.cells[(az, el)]
            row += ("-" if cell.ap is None else f"{cell.ap:.3f}").rjust(width)
        lines.append(row)
    return "\n".join(lines) + "\n"


def report_json(report: DiagnosisReport) -> str:
    grid = report.grid
    cells = []
    for el in grid.elevations:
        for az in grid.azimuths:
            cell = report.cells[(az, el)]
            cells.append({
                "azimuth": az,
                "elevation": el,
                "ap": cell.ap,
                "visible_samples": cell.visible_samples,
                "total_samples": cell.total_samples,
            })
    return json.dumps({
        "target": grid.target,
        "azimuths": list(grid.azimuths),
        "elevations": list(grid.elevations),
        "distances": list(grid.distances),
        "iou_threshold": IOU_THRESHOLD,
        "visibility_threshold": report.visibility_threshold,
        "cells": cells,
    }, indent=2) + "\n"


# ---------------------------------------------------------------------------
# CLI.
# ---------------------------------------------------------------------------

def _parse_angles(text: str):
    try:
        return tuple(float(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} must be comma-separated numbers") from None


def _parse_distances(text: str):
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise argparse.ArgumentTypeError(f"{text!r} must be start:stop:step")
        try:
            start, stop, step = (float(p) for p in parts)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{text!r} has non-numeric fields") from None
        if step <= 0:
            raise argparse.ArgumentTypeError("step must be positive")
        values = []
        value = start
        while value <= stop + 1e-9:
            values.append(value)
            value += step
        return tuple(values)
    return _parse_angles(text)


def main(argv=None) -> int:
    from .server import default_port

    parser = argparse.ArgumentParser(
        prog="virtucv-diagnose",
        description="Per-viewpoint AP of an external detector against mask ground truth.")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=default_port())
    parser.add_argument("--target", required=True, help="scene object to orbit")
    parser.add_argument("--detector", required=True,
                        help="detector command line; the image path is appended")
    parser.add_argument("--azimuths", type=_parse_angles,
                        default=DEFAULT_AZIMUTHS, metavar="90,135,...")
    parser.add_argument("--elevations", type=_parse_angles,
                        default=DEFAULT_ELEVATIONS, metavar="0,30,60")
    parser.add_argument("--distances", type=_parse_distances,
                        default=DEFAULT_DISTANCES, metavar="200:290:10")
    parser.add_argument("--vis-threshold", type=float, default=DEFAULT_VISIBILITY,
                        help="visible-sample cutoff as a fraction of image pixels")
    parser.add_argument("--out", required=True, help="report file (JSON twin written beside it)")
    args = parser.parse_args(argv)

    grid = ViewGrid(target=args.target, azimuths=args.azimuths,
                    elevations=args.elevations, distances=args.distances)
    detector = shlex.split(args.detector)
    if not detector:
        print("empty --detector command", file=sys.stderr)
        return 1

    try:
        with connect(args.host, args.port) as conn:
            report = run_diagnosis(conn, grid, detector, args.vis_threshold)
    except DiagnoseError as exc:
        print(f"diagnosis failed: {exc}", file=sys.stderr)
        return 1

    text = report_text(report)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(text, encoding="utf-8")
    out_path.with_suffix(".json").write_text(report_json(report), encoding="utf-8")
    sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
