"""
Inference with a trained generator: arbitrary frame sizes via reflect padding,
optional tile-and-blend for frames too large to run in one pass.
"""

import asyncio
import tempfile
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import torch
import torch.nn.functional as F

from vhs2hd.checkpoint import check_compatible, load_checkpoint
from vhs2hd.config import ModelConfig
from vhs2hd.errors import EmptySourceError
from vhs2hd.frames import Frame, extract_frames, load_frame, save_frame
from vhs2hd.limits import WorkerLimitManager
from vhs2hd.logger import get_logger
from vhs2hd.models import UnetGenerator
from vhs2hd.timeouts import DEFAULT_DECODER_TIMEOUTS, DecoderTimeouts
from vhs2hd.utils.imageio import is_image, list_images

logger = get_logger()

DEFAULT_OVERLAP = 32


def load_generator(ckpt_path: Union[str, Path], config: Optional[Dict[str, Any]] = None) -> UnetGenerator:
    """
    Build G from a checkpoint. When `config` (a config document) is given, its
    model section must match the checkpoint's.

    Raises:
        CheckpointIncompatibleError: model section differs
    """
    ckpt = load_checkpoint(ckpt_path)
    if config is not None:
        check_compatible(ckpt, config, sections=("model",))
    gen_cfg = ModelConfig.model_validate(ckpt.config["model"]).generator
    G = UnetGenerator(
        depth=gen_cfg.depth,
        base_channels=gen_cfg.base_channels,
        max_channels=gen_cfg.max_channels,
        norm=gen_cfg.norm,
        residual_bypass=gen_cfg.residual_bypass,
    )
    G.load_state_dict(ckpt.models["G"])
    G.eval()
    return G


def _pad_mode(pad: int, size: int) -> str:
    # reflect needs pad < size; tiny frames fall back to edge replication
    return "reflect" if pad < size else "replicate"


def run_padded(G: UnetGenerator, x: torch.Tensor) -> torch.Tensor:
    """G on (N, 3, H, W) of any size: pad bottom/right up to a multiple of 2^depth, then crop back."""
    h, w = x.shape[-2:]
    m = G.multiple
    ph, pw = (-h) % m, (-w) % m
    if ph or pw:
        mode = "reflect" if _pad_mode(ph, h) == "reflect" and _pad_mode(pw, w) == "reflect" else "replicate"
        x = F.pad(x, (0, pw, 0, ph), mode=mode)
    return G(x)[..., :h, :w]


def _starts(size: int, tile: int, overlap: int) -> List[int]:
    if size <= tile:
        return [0]
    step = tile - overlap
    starts = list(range(0, size - tile, step))
    starts.append(size - tile)
    return starts


def _ramp(length: int, overlap: int) -> torch.Tensor:
    r = torch.ones(length)
    n = min(overlap, length // 2)
    if n > 0:
        edge = torch.arange(1, n + 1, dtype=torch.float32) / (n + 1)
        r[:n] = edge
        r[length - n:] = edge.flip(0)
    return r


def run_tiled(G: UnetGenerator, x: torch.Tensor, tile: int, overlap: int = DEFAULT_OVERLAP) -> torch.Tensor:
    """
    Split into tile×tile windows overlapping by `overlap` pixels, run each through
    G and blend with linear feathering weights.
    """
    if overlap >= tile:
        raise ValueError("overlap (%d) must be smaller than tile (%d)" % (overlap, tile))
    h, w = x.shape[-2:]
    if h <= tile and w <= tile:
        return run_padded(G, x)
    out = torch.zeros_like(x)
    weight = torch.zeros((1, 1, h, w), dtype=x.dtype)
    for top in _starts(h, tile, overlap):
        for left in _starts(w, tile, overlap):
            th, tw = min(tile, h), min(tile, w)
            window = x[..., top:top + th, left:left + tw]
            mask = torch.outer(_ramp(th, overlap), _ramp(tw, overlap)).to(x.dtype).view(1, 1, th, tw)
            out[..., top:top + th, left:left + tw] += run_padded(G, window) * mask
            weight[..., top:top + th, left:left + tw] += mask
    return out / weight


def translate_frame(
    G: UnetGenerator,
    frame: Frame,
    tile: Optional[int] = None,
    overlap: int = DEFAULT_OVERLAP,
) -> Frame:
    x = frame.to_signed().pixels.unsqueeze(0)
    with torch.no_grad():
        y = run_tiled(G, x, tile, overlap) if tile else run_padded(G, x)
    out = Frame(pixels=y.squeeze(0).clamp(-1.0, 1.0), value_range="signed", source_id=frame.source_id)
    return out.to_unit()


async def translate_dir(
    ckpt_path: Union[str, Path],
    input_path: Union[str, Path],
    out_dir: Union[str, Path],
    *,
    tile: Optional[int] = None,
    overlap: int = DEFAULT_OVERLAP,
    config: Optional[Dict[str, Any]] = None,
    stride: int = 1,
    ffmpeg: str = "ffmpeg",
    ffprobe: str = "ffprobe",
    timeouts: DecoderTimeouts = DEFAULT_DECODER_TIMEOUTS,
    limits: Optional[WorkerLimitManager] = None,
) -> int:
    """
    Translate every image of a directory (or a single image, or the frames of a
    video) and write one output per input under the same file name.
    Returns the number of frames written.
    """
    G = await asyncio.to_thread(load_generator, ckpt_path, config)
    input_path = Path(input_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    limits = limits or WorkerLimitManager()

    with tempfile.TemporaryDirectory(prefix="vhs2hd_frames_") as tmp:
        if input_path.is_dir():
            sources = list_images(input_path)
        elif input_path.is_file() and is_image(input_path):
            sources = [input_path]
        else:
            await extract_frames(
                input_path, tmp, stride, ffmpeg=ffmpeg, ffprobe=ffprobe, timeouts=timeouts, limits=limits,
            )
            sources = list_images(tmp)
        if not sources:
            raise EmptySourceError("No frames to translate in %s" % input_path)

        def one(path: Path) -> None:
            save_frame(translate_frame(G, load_frame(path), tile=tile, overlap=overlap), out_dir / path.name)

        for path in sources:
            await asyncio.to_thread(one, path)
    await logger.info("Translated %d frames from %s into %s" % (len(sources), input_path, out_dir))
    return len(sources)
