"""
Frame type and frame ingestion.

A Frame is one RGB image as a float32 tensor. Channel-first (3×H×W) layout is
used throughout so frames feed torch convolutions without transposes.
Video decode is delegated to ffmpeg running as a subprocess; raw RGB frames are
streamed from its stdout and written as lossless PNG files.
"""

import asyncio
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import AsyncIterator, Literal, Optional, Tuple, Union

import numpy as np
import torch

from vhs2hd import metrics
from vhs2hd.errors import EmptySourceError, FrameDecodeError, FrameSizeError
from vhs2hd.limits import WorkerLimitManager
from vhs2hd.logger import get_logger
from vhs2hd.timeouts import DEFAULT_DECODER_TIMEOUTS, DecoderTimeouts
from vhs2hd.utils.imageio import is_image, list_images, read_rgb8, write_rgb8

logger = get_logger()

ValueRange = Literal["unit", "signed"]

MIN_SIDE = 16
_RANGE_BOUNDS = {"unit": (0.0, 1.0), "signed": (-1.0, 1.0)}


@dataclass
class Frame:
    """
    One image.

    Attributes:
        pixels: 3×H×W float32 tensor
        value_range: "unit" for [0, 1], "signed" for [-1, 1]
        source_id: originating file (and frame index for video sources)
    """
    pixels: torch.Tensor
    value_range: ValueRange = "unit"
    source_id: str = ""

    def __post_init__(self):
        if self.pixels.ndim != 3 or self.pixels.shape[0] != 3:
            raise FrameSizeError("Frame must be 3×H×W, got %s" % (tuple(self.pixels.shape),))
        if self.height < MIN_SIDE or self.width < MIN_SIDE:
            raise FrameSizeError(
                "Frame %s is %d×%d, minimum is %d×%d"
                % (self.source_id or "<anonymous>", self.height, self.width, MIN_SIDE, MIN_SIDE)
            )
        if self.value_range not in _RANGE_BOUNDS:
            raise ValueError("Unknown value range %r" % (self.value_range,))

    @property
    def height(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def width(self) -> int:
        return int(self.pixels.shape[2])

    def in_range(self) -> bool:
        lo, hi = _RANGE_BOUNDS[self.value_range]
        return bool(((self.pixels >= lo) & (self.pixels <= hi)).all())

    def assert_range(self) -> None:
        if not self.in_range():
            raise AssertionError(
                "Frame %s has values outside its %s range" % (self.source_id, self.value_range)
            )

    def to_signed(self) -> "Frame":
        if self.value_range == "signed":
            return self
        return replace(self, pixels=self.pixels * 2.0 - 1.0, value_range="signed")

    def to_unit(self) -> "Frame":
        if self.value_range == "unit":
            return self
        return replace(self, pixels=((self.pixels + 1.0) / 2.0).clamp(0.0, 1.0), value_range="unit")

    def to_rgb8(self) -> np.ndarray:
        unit = self.to_unit().pixels.detach().cpu().clamp(0.0, 1.0)
        return (unit * 255.0).round().to(torch.uint8).permute(1, 2, 0).contiguous().numpy()

    @classmethod
    def from_rgb8(cls, pixels: np.ndarray, source_id: str = "") -> "Frame":
        t = torch.from_numpy(np.ascontiguousarray(pixels)).permute(2, 0, 1).to(torch.float32) / 255.0
        return cls(pixels=t.contiguous(), value_range="unit", source_id=source_id)


def crop_to_multiple(frame: Frame, multiple: int) -> Frame:
    """Center-crop so both sides are divisible by multiple; no-op when they already are."""
    h = frame.height - frame.height % multiple
    w = frame.width - frame.width % multiple
    if (h, w) == (frame.height, frame.width):
        return frame
    if h == 0 or w == 0:
        raise FrameSizeError(
            "Frame %s (%d×%d) is smaller than %d" % (frame.source_id, frame.height, frame.width, multiple)
        )
    top = (frame.height - h) // 2
    left = (frame.width - w) // 2
    return replace(frame, pixels=frame.pixels[:, top:top + h, left:left + w].contiguous())


def load_frame(path: Union[str, Path]) -> Frame:
    path = Path(path)
    return Frame.from_rgb8(read_rgb8(path), source_id=str(path))


def save_frame(frame: Frame, path: Union[str, Path]) -> None:
    write_rgb8(path, frame.to_rgb8())


def frame_name(source: str, index: int) -> str:
    return "%s_%06d.png" % (source, index)


# --- extraction ---


async def _probe_size(path: Path, ffprobe: str, timeouts: DecoderTimeouts) -> Tuple[int, int]:
    try:
        proc = await asyncio.create_subprocess_exec(
            ffprobe, "-v", "error", "-select_streams", "v:0",
            "-show_entries", "stream=width,height", "-of", "json", str(path),
            stdout=asyncio.subprocess.PIPE,
            stderr=asyncio.subprocess.PIPE,
        )
    except FileNotFoundError as e:
        raise FrameDecodeError("Decoder probe %r not found" % ffprobe) from e
    try:
        out, err = await timeouts.with_probe_timeout(proc.communicate())
    except asyncio.TimeoutError as e:
        proc.kill()
        raise FrameDecodeError("Probing %s timed out after %dms" % (path, timeouts.probe_ms)) from e
    if proc.returncode != 0:
        raise FrameDecodeError("Cannot probe %s: %s" % (path, err.decode("utf-8", "replace").strip()))
    try:
        stream = json.loads(out)["streams"][0]
        return int(stream["width"]), int(stream["height"])
    except (ValueError, KeyError, IndexError) as e:
        raise FrameDecodeError("No video stream in %s" % path) from e


async def _decode_video(
    path: Path,
    ffmpeg: str = "ffmpeg",
    ffprobe: str = "ffprobe",
    timeouts: DecoderTimeouts = DEFAULT_DECODER_TIMEOUTS,
) -> AsyncIterator[Tuple[int, np.ndarray]]:
    """
    Yield (index, H×W×3 uint8) for every decoded frame.
    Frames are streamed from ffmpeg's stdout; nothing is buffered beyond one frame.
    """
    width, height = await _probe_size(path, ffprobe, timeouts)
    frame_bytes = width * height * 3
    try:
        proc = await asyncio.create_subprocess_exec(
            ffmpeg, "-v", "error", "-nostdin", "-i", str(path),
            "-vsync", "0", "-f", "rawvideo", "-pix_fmt", "rgb24", "-",
            stdout=asyncio.subprocess.PIPE,
            stderr=asyncio.subprocess.PIPE,
        )
    except FileNotFoundError as e:
        raise FrameDecodeError("Decoder %r not found" % ffmpeg) from e
    index = 0
    try:
        while True:
            try:
                chunk = await timeouts.with_read_timeout(proc.stdout.readexactly(frame_bytes))
            except asyncio.IncompleteReadError as e:
                if e.partial:
                    await logger.warning(
                        "Dropping truncated trailing frame %d of %s (%d of %d bytes)"
                        % (index, path, len(e.partial), frame_bytes)
                    )
                break
            except asyncio.TimeoutError as e:
                raise FrameDecodeError(
                    "Reading frame %d of %s timed out after %dms" % (index, path, timeouts.read_ms)
                ) from e
            yield index, np.frombuffer(chunk, dtype=np.uint8).reshape(height, width, 3)
            index += 1
        err = await proc.stderr.read()
        await proc.wait()
        if proc.returncode != 0:
            raise FrameDecodeError(
                "Decoder failed on %s (exit %d): %s"
                % (path, proc.returncode, err.decode("utf-8", "replace").strip()[-500:])
            )
    finally:
        if proc.returncode is None:
            proc.kill()
            await proc.wait()


async def _iter_sources(path: Path, ffmpeg: str, ffprobe: str, timeouts: DecoderTimeouts):
    if path.is_dir():
        for index, image_path in enumerate(list_images(path)):
            yield index, await asyncio.to_thread(read_rgb8, image_path)
    elif path.is_file() and is_image(path):
        yield 0, await asyncio.to_thread(read_rgb8, path)
    elif path.is_file():
        async for item in _decode_video(path, ffmpeg=ffmpeg, ffprobe=ffprobe, timeouts=timeouts):
            yield item
    else:
        raise FrameDecodeError("Input %s does not exist" % path)


async def extract_frames(
    video_path: Union[str, Path],
    out_dir: Union[str, Path],
    stride: int = 1,
    *,
    source: Optional[str] = None,
    ffmpeg: str = "ffmpeg",
    ffprobe: str = "ffprobe",
    timeouts: DecoderTimeouts = DEFAULT_DECODER_TIMEOUTS,
    limits: Optional[WorkerLimitManager] = None,
) -> int:
    """
    Write every stride-th frame of a video (or image directory / single image)
    to out_dir as `<source>_<index:06d>.png`; index is the frame's position in
    the source. Returns the number of files written.

    Raises:
        ValueError: stride < 1
        FrameDecodeError: unreadable input or decoder failure
        EmptySourceError: zero frames decoded
    """
    if stride < 1:
        raise ValueError("stride must be >= 1, got %d" % stride)
    video_path = Path(video_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    limits = limits or WorkerLimitManager()
    source = source or video_path.stem
    decoded = 0
    writes = []

    async def write_one(index: int, pixels: np.ndarray) -> None:
        try:
            await limits.run(write_rgb8, out_dir / frame_name(source, index), pixels)
        finally:
            limits.frame_slot().release()

    async def consume() -> None:
        nonlocal decoded
        async for index, pixels in _iter_sources(video_path, ffmpeg, ffprobe, timeouts):
            decoded += 1
            if index % stride:
                continue
            # Backpressure: decoding waits while too many frames are pending encode.
            await limits.frame_slot().acquire()
            writes.append(asyncio.create_task(write_one(index, pixels)))

    try:
        await timeouts.with_total_timeout(consume())
    except asyncio.TimeoutError as e:
        raise FrameDecodeError("Decoding %s exceeded %dms" % (video_path, timeouts.total_ms)) from e
    finally:
        if writes:
            await asyncio.gather(*writes)
    if decoded == 0:
        raise EmptySourceError("No frames decoded from %s" % video_path)
    metrics.record_frames_written(len(writes))
    await logger.info(
        "Extracted %d of %d frames from %s into %s (stride=%d)"
        % (len(writes), decoded, video_path, out_dir, stride)
    )
    return len(writes)
