"""Minimal capture loop: list objects, then per pose grab image + ground truth.

Run with a server up:  python -m virtucv.alg1_demo [--host H] [--port P]

The fixed integer poses keep the transcript reproducible; other clients
replaying the same loop should produce an identical server command log.
"""

from __future__ import annotations

import argparse

from .client import connect
from .server import default_port

POSES = (
    (0, -150, 165, 0),
    (100, -200, 165, 90),
    (-100, -100, 9, 180),
    (50, -250, 9, 270),
)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="python -m virtucv.alg1_demo")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=default_port())
    args = parser.parse_args(argv)
    with connect(args.host, args.port) as conn:
        print(conn.request("vget /objects"))
        for x, y, z, yaw in POSES:
            conn.request(f"vset /camera/0/location {x} {y} {z}")
            conn.request(f"vset /camera/0/rotation {yaw} 0 0")
            for modality in ("image", "depth", "object_mask"):
                print(conn.request(f"vget /camera/0/{modality}"))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
