import argparse
import json
import random

import numpy as np
import pytest

from virtucv.datasetgen import (
    DEFAULT_HEIGHTS,
    GenConfig,
    GenError,
    _parse_colors,
    _parse_heights,
    generate,
    sample_pose,
)
from virtucv.imgio import read_pfm, read_png
from virtucv.server import Server

from test_server import tiny_scene

HEIGHTS = (("low", 0.0), ("high", 10.0))


@pytest.fixture
def live(tmp_path):
    server = Server(tiny_scene(), port=0, output_dir=str(tmp_path / "srv"))
    server.start()
    yield server
    server.stop()


class TestSamplePose:
    BOUNDS = ((-50.0, -40.0, 0.0), (50.0, 40.0, 30.0))

    def test_deterministic_for_seed(self):
        a = [sample_pose(self.BOUNDS, random.Random(3), 10.0) for _ in range(20)]
        b = [sample_pose(self.BOUNDS, random.Random(3), 10.0) for _ in range(20)]
        assert a == b

    def test_ranges(self):
        rng = random.Random(1)
        for _ in range(500):
            (x, y, z), (yaw, pitch, roll) = sample_pose(self.BOUNDS, rng, 7.5)
            assert -50 <= x <= 50 and -40 <= y <= 40
            assert z == 7.5
            assert 0 <= yaw < 360
            assert pitch == 0.0 and roll == 0.0

    def test_spreads_over_the_footprint(self):
        rng = random.Random(2)
        xs = [sample_pose(self.BOUNDS, rng, 0.0)[0][0] for _ in range(200)]
        assert min(xs) < -25 and max(xs) > 25


class TestConfig:
    def test_defaults(self):
        config = GenConfig(out_dir="x")
        assert config.heights == DEFAULT_HEIGHTS
        assert config.count == 1

    def test_rejects_bad_count(self):
        with pytest.raises(GenError):
            GenConfig(out_dir="x", count=0)

    def test_rejects_empty_heights(self):
        with pytest.raises(GenError):
            GenConfig(out_dir="x", heights=())


class TestArgParsers:
    def test_heights(self):
        assert _parse_heights("eye=165,roomba=9") == (("eye", 165.0), ("roomba", 9.0))

    def test_heights_malformed(self):
        for text in ("eye", "=165", "eye=tall"):
            with pytest.raises(argparse.ArgumentTypeError):
                _parse_heights(text)

    def test_colors(self):
        assert _parse_colors("255,0,0;0,255,0") == ((255, 0, 0), (0, 255, 0))

    def test_colors_malformed(self):
        for text in ("255,0", "1,2,x", "300,0,0"):
            with pytest.raises(argparse.ArgumentTypeError):
                _parse_colors(text)


class TestGenerate:
    def config(self, live, tmp_path, name, **kw):
        kw.setdefault("heights", HEIGHTS)
        kw.setdefault("count", 2)
        return GenConfig(out_dir=str(tmp_path / name), port=live.port, **kw)

    def read_manifest(self, path):
        lines = [json.loads(l) for l in open(path)]
        return lines[:-1], lines[-1]

    def test_record_and_file_counts(self, live, tmp_path):
        manifest = generate(self.config(live, tmp_path, "a"))
        records, status = self.read_manifest(manifest)
        assert status == {"status": "complete", "records": 4}
        assert len(records) == 4
        assert [r["height"] for r in records] == ["low", "low", "high", "high"]
        out = tmp_path / "a"
        pngs = sorted(p.name for p in out.glob("*.png"))
        pfms = sorted(p.name for p in out.glob("*.pfm"))
        assert len(pngs) == 12 and len(pfms) == 4
        for r in records:
            for modality in ("image", "depth", "object_mask", "normal"):
                assert (out / r[modality]).is_file()

    def test_files_reread_exactly(self, live, tmp_path):
        manifest = generate(self.config(live, tmp_path, "b", count=1))
        records, _ = self.read_manifest(manifest)
        out = tmp_path / "b"
        for r in records:
            img = read_png(str(out / r["image"]))
            assert img.shape == (12, 16, 3) and img.dtype == np.uint8
            depth = read_pfm(str(out / r["depth"]))
            assert depth.shape == (12, 16)
            assert np.all((depth > 0) | np.isinf(depth))

    def test_command_log_matches_template(self, live, tmp_path):
        generate(self.config(live, tmp_path, "c", count=1, seed=5))
        lines = live.log_path.read_text().splitlines()
        assert lines[0] == "vget /objects"
        assert lines[1] == "vget /scene/bounds"
        body = lines[2:]
        assert len(body) == 2 * 6
        for i in range(2):
            block = body[6 * i:6 * (i + 1)]
            assert block[0].startswith("vset /camera/0/location ")
            assert block[1].startswith("vset /camera/0/rotation ")
            assert block[1].endswith(" 0 0")
            assert block[2:] == [
                "vget /camera/0/image", "vget /camera/0/depth",
                "vget /camera/0/object_mask", "vget /camera/0/normal"]

    def test_rerun_same_seed_identical_manifest(self, live, tmp_path):
        first = generate(self.config(live, tmp_path, "d1", seed=9))
        second = generate(self.config(live, tmp_path, "d2", seed=9))
        assert open(first, "rb").read() == open(second, "rb").read()

    def test_different_seed_differs(self, live, tmp_path):
        first = generate(self.config(live, tmp_path, "e1", seed=1))
        second = generate(self.config(live, tmp_path, "e2", seed=2))
        a, _ = self.read_manifest(first)
        b, _ = self.read_manifest(second)
        assert [r["location"] for r in a] != [r["location"] for r in b]

    def test_color_variations_expand_records(self, live, tmp_path):
        config = self.config(live, tmp_path, "f", count=1,
                             sofa_colors=((255, 0, 0), (0, 0, 255)),
                             vary_object="ball")
        records, status = self.read_manifest(generate(config))
        assert status["records"] == 4
        assert [r["variation"] for r in records] == [
            "255,0,0", "0,0,255", "255,0,0", "0,0,255"]
        lines = live.log_path.read_text().splitlines()
        recolors = [l for l in lines if l.startswith("vset /object/ball/color")]
        assert recolors == ["vset /object/ball/color 255 0 0",
                            "vset /object/ball/color 0 0 255"] * 2

    def test_variation_shares_pose_and_mask(self, live, tmp_path):
        config = self.config(live, tmp_path, "g", count=1, heights=(("low", 0.0),),
                             sofa_colors=((250, 10, 10), (10, 10, 250)),
                             vary_object="ball")
        records, _ = self.read_manifest(generate(config))
        assert len(records) == 2
        assert records[0]["location"] == records[1]["location"]
        out = tmp_path / "g"
        mask_a = read_png(str(out / records[0]["object_mask"]))
        mask_b = read_png(str(out / records[1]["object_mask"]))
        assert np.array_equal(mask_a, mask_b)

    def test_unknown_vary_object_marks_incomplete(self, live, tmp_path):
        config = self.config(live, tmp_path, "h",
                             sofa_colors=((1, 2, 3),), vary_object="ghost")
        with pytest.raises(GenError, match="aborted after 0 records"):
            generate(config)
        records, status = self.read_manifest(tmp_path / "h" / "manifest.jsonl")
        assert records == []
        assert status["status"] == "incomplete"
        assert "ghost" in status["error"]

    def test_height_outside_bounds_aborts(self, live, tmp_path):
        config = self.config(live, tmp_path, "i", heights=(("orbit", 999.0),))
        with pytest.raises(GenError, match="orbit"):
            generate(config)

    def test_unreachable_server(self, tmp_path):
        import socket
        probe = socket.socket()
        probe.bind(("127.0.0.1", 0))
        port = probe.getsockname()[1]
        probe.close()
        config = GenConfig(out_dir=str(tmp_path / "j"), port=port)
        with pytest.raises(Exception):
            generate(config)
