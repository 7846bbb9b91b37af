"""Unit tests for Frame and extract_frames."""

import asyncio

import numpy as np
import pytest
import torch

from vhs2hd import frames, metrics
from vhs2hd.errors import EmptySourceError, FrameDecodeError, FrameSizeError
from vhs2hd.frames import Frame, crop_to_multiple, extract_frames, frame_name, load_frame, save_frame
from vhs2hd.timeouts import DecoderTimeouts
from vhs2hd.utils.imageio import list_images, read_rgb8

from tests.conftest import textured_rgb, write_images


class TestFrame:
    """Tests for the Frame type."""

    def test_rejects_wrong_channels(self):
        with pytest.raises(FrameSizeError):
            Frame(pixels=torch.zeros(1, 32, 32))

    def test_rejects_tiny_frames(self):
        """Frames below 16×16 are rejected."""
        with pytest.raises(FrameSizeError):
            Frame(pixels=torch.zeros(3, 8, 32))

    def test_range_conversion(self):
        """0 -> -1, 1 -> 1 and back."""
        pixels = torch.zeros(3, 16, 16)
        pixels[:, :8] = 1.0
        signed = Frame(pixels=pixels).to_signed()
        assert signed.value_range == "signed"
        assert signed.pixels.min() == -1.0 and signed.pixels.max() == 1.0
        assert torch.equal(signed.to_unit().pixels, pixels)

    def test_assert_range(self):
        """Out-of-range values fail the range assertion."""
        frame = Frame(pixels=torch.full((3, 16, 16), 1.5))
        assert not frame.in_range()
        with pytest.raises(AssertionError):
            frame.assert_range()

    def test_rgb8_round_trip(self):
        """8-bit pixels survive Frame conversion exactly."""
        rgb = textured_rgb(20, 24)
        frame = Frame.from_rgb8(rgb)
        assert (frame.height, frame.width) == (20, 24)
        assert np.array_equal(frame.to_rgb8(), rgb)

    def test_crop_to_multiple(self):
        """Center crop to a multiple; no-op when already aligned."""
        frame = Frame(pixels=torch.rand(3, 50, 37))
        cropped = crop_to_multiple(frame, 4)
        assert (cropped.height, cropped.width) == (48, 36)
        assert torch.equal(cropped.pixels, frame.pixels[:, 1:49, 0:36])
        assert crop_to_multiple(cropped, 4) is cropped

    def test_save_and_load(self, tmp_path):
        rgb = textured_rgb(16, 16)
        path = tmp_path / "f.png"
        save_frame(Frame.from_rgb8(rgb), path)
        assert np.array_equal(load_frame(path).to_rgb8(), rgb)

    def test_frame_name(self):
        assert frame_name("tape", 12) == "tape_000012.png"


class TestExtractFrames:
    """Tests for extract_frames on directories, images and (stubbed) video."""

    @pytest.mark.asyncio
    async def test_directory_with_stride(self, tmp_path):
        """Every second frame is kept and named by its source index."""
        src = tmp_path / "src"
        write_images(src, 5, 16, 16)
        count = await extract_frames(src, tmp_path / "out", stride=2, source="tape")
        assert count == 3
        names = [p.name for p in list_images(tmp_path / "out")]
        assert names == ["tape_000000.png", "tape_000002.png", "tape_000004.png"]
        assert "vhs2hd_frames_written_total 3" in metrics.render_prometheus()

    @pytest.mark.asyncio
    async def test_single_image(self, tmp_path):
        """A single image is a one-frame source."""
        src = write_images(tmp_path / "src", 1, 16, 16)[0]
        assert await extract_frames(src, tmp_path / "out") == 1
        assert np.array_equal(read_rgb8(tmp_path / "out" / frame_name(src.stem, 0)), read_rgb8(src))

    @pytest.mark.asyncio
    async def test_missing_input(self, tmp_path):
        with pytest.raises(FrameDecodeError):
            await extract_frames(tmp_path / "nothing.mp4", tmp_path / "out")

    @pytest.mark.asyncio
    async def test_empty_directory(self, tmp_path):
        (tmp_path / "empty").mkdir()
        with pytest.raises(EmptySourceError):
            await extract_frames(tmp_path / "empty", tmp_path / "out")

    @pytest.mark.asyncio
    async def test_bad_stride(self, tmp_path):
        with pytest.raises(ValueError):
            await extract_frames(tmp_path, tmp_path / "out", stride=0)

    @pytest.mark.asyncio
    async def test_video_source(self, tmp_path, monkeypatch):
        """Decoded video frames are written in order."""
        video = tmp_path / "clip.mp4"
        video.write_bytes(b"")

        async def fake_decode(path, ffmpeg, ffprobe, timeouts):
            for i in range(4):
                yield i, textured_rgb(16, 16, seed=i)

        monkeypatch.setattr(frames, "_decode_video", fake_decode)
        count = await extract_frames(video, tmp_path / "out")
        assert count == 4
        assert np.array_equal(read_rgb8(tmp_path / "out" / "clip_000003.png"), textured_rgb(16, 16, seed=3))

    @pytest.mark.asyncio
    async def test_decode_timeout(self, tmp_path, monkeypatch):
        """Total decode timeout surfaces as FrameDecodeError."""
        video = tmp_path / "slow.mp4"
        video.write_bytes(b"")

        async def slow_decode(path, ffmpeg, ffprobe, timeouts):
            yield 0, textured_rgb(16, 16)
            await asyncio.sleep(1.0)
            yield 1, textured_rgb(16, 16)

        monkeypatch.setattr(frames, "_decode_video", slow_decode)
        with pytest.raises(FrameDecodeError):
            await extract_frames(video, tmp_path / "out", timeouts=DecoderTimeouts(total_ms=100))
