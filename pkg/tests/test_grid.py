"""Tests for comparison montages."""

import pytest
from PIL import Image

from vhs2hd.errors import EmptySourceError, GridMismatchError, UsageError
from vhs2hd.grid import BANNER_HEIGHT, PANEL_GAP, compose_row, render_grid, shared_names

from tests.conftest import write_images


@pytest.fixture
def method_dirs(tmp_path):
    """Same three frame names in an input and an output directory, different sizes."""
    write_images(tmp_path / "input", 3, 20, 30, seed=1)
    write_images(tmp_path / "ours", 3, 40, 60, seed=2)
    return tmp_path / "input", tmp_path / "ours"


class TestRenderGrid:
    """Tests for render_grid."""

    def test_one_montage_per_frame(self, method_dirs, tmp_path):
        written = render_grid(method_dirs, tmp_path / "grid", labels=["VHS", "ours"])
        assert [p.name for p in written] == ["frame_000.png", "frame_001.png", "frame_002.png"]
        with Image.open(written[0]) as img:
            # второй кадр масштабируется до высоты первого
            assert img.size == (30 + PANEL_GAP + 30, 20 + BANNER_HEIGHT)

    def test_single_directory(self, method_dirs, tmp_path):
        written = render_grid(method_dirs[:1], tmp_path / "grid")
        assert len(written) == 3
        with Image.open(written[0]) as img:
            assert img.size == (30, 20 + BANNER_HEIGHT)

    def test_mismatch_lists_names(self, method_dirs, tmp_path):
        (method_dirs[1] / "frame_002.png").unlink()
        with pytest.raises(GridMismatchError) as info:
            render_grid(method_dirs, tmp_path / "grid")
        assert info.value.differing == ["frame_002.png"]
        assert not (tmp_path / "grid").exists()

    def test_label_count(self, method_dirs, tmp_path):
        with pytest.raises(UsageError, match="labels"):
            render_grid(method_dirs, tmp_path / "grid", labels=["only one"])

    def test_missing_directory(self, tmp_path):
        with pytest.raises(UsageError):
            render_grid([tmp_path / "absent"], tmp_path / "grid")

    def test_empty_directories(self, tmp_path):
        (tmp_path / "a").mkdir()
        with pytest.raises(EmptySourceError):
            render_grid([tmp_path / "a"], tmp_path / "grid")


class TestHelpers:
    """Tests for shared_names and compose_row."""

    def test_shared_names_sorted(self, method_dirs):
        assert shared_names(list(method_dirs)) == ["frame_000.png", "frame_001.png", "frame_002.png"]

    def test_compose_row_width(self):
        panels = [Image.new("RGB", (10, 8)), Image.new("RGB", (5, 4))]
        row = compose_row(panels, ["a", "b"])
        assert row.size == (10 + PANEL_GAP + 10, 8 + BANNER_HEIGHT)
