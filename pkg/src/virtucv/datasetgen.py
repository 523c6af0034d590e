"""Dataset generation CLI: sample camera poses, capture, write a manifest.

Command sequence per run (the generation template):

    vget /objects                           once, first
    vget /scene/bounds                      once, to sample poses
    per record:
        vset /object/<name>/color r g b     only when color variations are on
        vset /camera/0/location x y z
        vset /camera/0/rotation yaw 0 0
        vget /camera/0/image
        vget /camera/0/depth
        vget /camera/0/object_mask
        vget /camera/0/normal

Captured files are copied into the output directory under generator-local
names ``<seq:06>_<modality>.<ext>`` so a rerun with the same seed produces a
byte-identical manifest regardless of server-side counters.

The manifest is JSON Lines: one record object per line, then one trailing
status object (``{"status": "complete", ...}``).  A run that aborts writes
``"incomplete"`` instead and keeps the files already captured.
"""

from __future__ import annotations

import argparse
import json
import random
import shutil
import sys
from dataclasses import dataclass
from pathlib import Path

from .client import ClientError, Connection, connect
from .protocol import fmt_real

DEFAULT_HEIGHTS = (("eye", 165.0), ("roomba", 9.0))

MODALITIES = ("image", "depth", "object_mask", "normal")


class GenError(Exception):
    pass


@dataclass
class GenConfig:
    out_dir: str
    host: str = "127.0.0.1"
    port: int = 9000
    seed: int = 0
    count: int = 1  # images per height level
    heights: tuple = DEFAULT_HEIGHTS  # (label, z-cm) pairs
    sofa_colors: tuple = ()  # RGB triples; empty = no variation
    vary_object: str = "sofa"
    camera: int = 0

    def __post_init__(self):
        if self.count < 1:
            raise GenError(f"count must be >= 1, got {self.count}")
        if not self.heights:
            raise GenError("heights must be non-empty")


def sample_pose(bounds, rng: random.Random, height: float):
    """One random pose: x,y uniform over the bounds footprint, z fixed,
    yaw uniform in [0, 360), pitch and roll zero."""
    (min_x, min_y, _min_z), (max_x, max_y, _max_z) = bounds
    x = rng.uniform(min_x, max_x)
    y = rng.uniform(min_y, max_y)
    yaw = rng.uniform(0.0, 360.0)
    return (x, y, height), (yaw, 0.0, 0.0)


def _check_heights(config: GenConfig, bounds) -> None:
    (_, _, min_z), (_, _, max_z) = bounds
    if min_z >= max_z:
        raise GenError(f"degenerate free-space bounds: z range [{min_z}, {max_z}]")
    for label, z in config.heights:
        if not min_z <= z <= max_z:
            raise GenError(
                f"height {label}={z} outside the scene's free z range [{min_z}, {max_z}]")


def _capture_record(conn: Connection, config: GenConfig, seq: int,
                    location, rotation, out_dir: Path) -> dict:
    x, y, z = location
    yaw, pitch, roll = rotation
    conn.request(f"vset /camera/{config.camera}/location "
                 f"{fmt_real(x)} {fmt_real(y)} {fmt_real(z)}")
    conn.request(f"vset /camera/{config.camera}/rotation "
                 f"{fmt_real(yaw)} {fmt_real(pitch)} {fmt_real(roll)}")
    files = {}
    for modality in MODALITIES:
        src = Path(conn.capture(config.camera, modality))
        dst_name = f"{seq:06d}_{modality}{src.suffix}"
        shutil.copyfile(src, out_dir / dst_name)
        files[modality] = dst_name
    return {
        "seq": seq,
        "location": [x, y, z],
        "rotation": [yaw, pitch, roll],
        **files,
    }


def generate(config: GenConfig) -> str:
    """Run the full generation loop; returns the manifest path."""
    out_dir = Path(config.out_dir).absolute()
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = out_dir / "manifest.jsonl"

    conn = connect(config.host, config.port)
    records = 0
    rng = random.Random(config.seed)
    variations = list(config.sofa_colors) or [None]
    with open(manifest_path, "w", encoding="utf-8") as manifest, conn:
        try:
            objects = conn.list_objects()
            if config.sofa_colors and config.vary_object not in objects:
                raise GenError(f"object {config.vary_object!r} not in scene")
            bounds = conn.get_scene_bounds()
            _check_heights(config, bounds)
            for label, z in config.heights:
                for _ in range(config.count):
                    location, rotation = sample_pose(bounds, rng, z)
                    for color in variations:
                        if color is not None:
                            conn.set_object_color(config.vary_object, color)
                        record = _capture_record(
                            conn, config, records, location, rotation, out_dir)
                        record["height"] = label
                        record["variation"] = (
                            None if color is None else ",".join(str(c) for c in color))
                        manifest.write(json.dumps(record) + "\n")
                        records += 1
        except (ClientError, GenError, OSError) as exc:
            manifest.write(json.dumps(
                {"status": "incomplete", "records": records, "error": str(exc)}) + "\n")
            raise GenError(f"aborted after {records} records: {exc}") from exc
        manifest.write(json.dumps({"status": "complete", "records": records}) + "\n")
    return str(manifest_path)


def _parse_heights(text: str):
    heights = []
    for part in text.split(","):
        label, sep, value = part.partition("=")
        if not sep or not label:
            raise argparse.ArgumentTypeError(
                f"height {part!r} must look like label=z")
        try:
            heights.append((label, float(value)))
        except ValueError:
            raise argparse.ArgumentTypeError(f"height {part!r}: z must be numeric") from None
    return tuple(heights)


def _parse_colors(text: str):
    colors = []
    for part in text.split(";"):
        if not part:
            continue
        tokens = part.split(",")
        if len(tokens) != 3:
            raise argparse.ArgumentTypeError(f"color {part!r} must be r,g,b")
        try:
            rgb = tuple(int(t) for t in tokens)
        except ValueError:
            raise argparse.ArgumentTypeError(f"color {part!r} must be integers") from None
        if any(not 0 <= v <= 255 for v in rgb):
            raise argparse.ArgumentTypeError(f"color {part!r} out of [0, 255]")
        colors.append(rgb)
    return tuple(colors)


def main(argv=None) -> int:
    from .server import default_port

    parser = argparse.ArgumentParser(
        prog="virtucv-gen",
        description="Capture a pose-sampled dataset from a running server.")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=default_port())
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--count", type=int, default=1,
                        help="images per height level")
    parser.add_argument("--heights", type=_parse_heights,
                        default=DEFAULT_HEIGHTS, metavar="eye=165,roomba=9")
    parser.add_argument("--sofa-colors", type=_parse_colors, default=(),
                        metavar="R,G,B;R,G,B", help="capture each pose once per color")
    parser.add_argument("--vary-object", default="sofa",
                        help="object recolored by --sofa-colors")
    parser.add_argument("--out", required=True, help="dataset output directory")
    args = parser.parse_args(argv)

    config = GenConfig(
        out_dir=args.out, host=args.host, port=args.port, seed=args.seed,
        count=args.count, heights=args.heights, sofa_colors=args.sofa_colors,
        vary_object=args.vary_object)
    try:
        manifest = generate(config)
    except (GenError, ClientError) as exc:
        print(f"generation failed: {exc}", file=sys.stderr)
        return 1
    print(manifest)
    return 0


if __name__ == "__main__":
    sys.exit(main())
