import pytest

from virtucv.scene import bundled_scene_path, load_scene
from virtucv.server import Server


@pytest.fixture
def room_scene():
    return load_scene(bundled_scene_path())


@pytest.fixture
def server(tmp_path, room_scene):
    """A live server on an ephemeral port, outputs under tmp_path."""
    srv = Server(room_scene, port=0, output_dir=str(tmp_path / "out"))
    srv.start()
    yield srv
    srv.stop()
