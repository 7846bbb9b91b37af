"""
Synthetic low-resolution domain: Gaussian blur, downscale, optional upscale back.
"""

import math
from typing import Literal, Optional

import torch
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, ValidationError, model_validator

from vhs2hd.errors import DegradationConfigError, FrameSizeError
from vhs2hd.frames import Frame, crop_to_multiple


class DegradationConfig(BaseModel):
    """
    How a clean frame y becomes its low-resolution counterpart z.

    Attributes:
        blur_sigma: Gaussian standard deviation in pixels
        kernel_radius: half-width of the kernel; defaults to ceil(2 * blur_sigma)
        scale_factor: integer downscale factor (>= 2)
        resample: interpolation used for both down- and upscaling
        restore_size: upscale z back to the size of y so the two stay pixel-aligned
    """
    model_config = ConfigDict(extra="forbid")

    blur_sigma: float = 2.0
    kernel_radius: Optional[int] = None
    scale_factor: int = 4
    resample: Literal["bicubic", "bilinear"] = "bicubic"
    restore_size: bool = True

    def __init__(self, **data):
        # Direct construction reports DegradationConfigError; nested in a config
        # document the ValidationError surfaces as ConfigError instead.
        try:
            super().__init__(**data)
        except ValidationError as e:
            raise DegradationConfigError(
                "Invalid degradation config: %s" % "; ".join(err["msg"] for err in e.errors())
            ) from e

    @model_validator(mode="after")
    def resolve(self) -> "DegradationConfig":
        check_degradation(self)
        if self.kernel_radius is None:
            self.kernel_radius = math.ceil(2.0 * self.blur_sigma)
        return self

    @property
    def kernel_width(self) -> int:
        return 2 * self.kernel_radius + 1


def check_degradation(cfg: DegradationConfig) -> None:
    if cfg.scale_factor < 2:
        raise DegradationConfigError("scale_factor must be >= 2, got %d" % cfg.scale_factor)
    if cfg.blur_sigma <= 0:
        raise DegradationConfigError("blur_sigma must be > 0, got %r" % cfg.blur_sigma)
    if cfg.kernel_radius is not None and cfg.kernel_radius < 0:
        raise DegradationConfigError("kernel_radius must be >= 0, got %d" % cfg.kernel_radius)


def gaussian_kernel(sigma: float, radius: int) -> torch.Tensor:
    """1-D Gaussian of width 2*radius+1, normalized to sum 1 (computed in float64)."""
    x = torch.arange(-radius, radius + 1, dtype=torch.float64)
    k = torch.exp(-(x ** 2) / (2.0 * sigma ** 2))
    return k / k.sum()


def gaussian_kernel_2d(sigma: float, radius: int) -> torch.Tensor:
    k = gaussian_kernel(sigma, radius)
    return torch.outer(k, k)


def blur(pixels: torch.Tensor, sigma: float, radius: int) -> torch.Tensor:
    """
    Separable Gaussian blur with reflect padding.

    Args:
        pixels: (N, C, H, W) or (C, H, W)
    """
    squeeze = pixels.ndim == 3
    if squeeze:
        pixels = pixels.unsqueeze(0)
    _, c, h, w = pixels.shape
    if radius >= h or radius >= w:
        raise FrameSizeError(
            "Frame %d×%d is smaller than the blur kernel (width %d)" % (h, w, 2 * radius + 1)
        )
    if radius == 0:
        return pixels.squeeze(0) if squeeze else pixels
    k = gaussian_kernel(sigma, radius).to(pixels.dtype)
    kx = k.view(1, 1, 1, -1).repeat(c, 1, 1, 1)
    ky = k.view(1, 1, -1, 1).repeat(c, 1, 1, 1)
    out = F.pad(pixels, (radius, radius, radius, radius), mode="reflect")
    out = F.conv2d(out, kx, groups=c)
    out = F.conv2d(out, ky, groups=c)
    return out.squeeze(0) if squeeze else out


def degrade(pixels: torch.Tensor, cfg: DegradationConfig) -> torch.Tensor:
    """Tensor form of synthesize_lowres; H and W must already be multiples of scale_factor."""
    check_degradation(cfg)
    squeeze = pixels.ndim == 3
    if squeeze:
        pixels = pixels.unsqueeze(0)
    h, w = pixels.shape[-2:]
    s = cfg.scale_factor
    if h % s or w % s:
        raise FrameSizeError("Frame %d×%d is not a multiple of scale_factor %d" % (h, w, s))
    out = blur(pixels, cfg.blur_sigma, cfg.kernel_radius)
    out = F.interpolate(out, size=(h // s, w // s), mode=cfg.resample, align_corners=False)
    if cfg.restore_size:
        out = F.interpolate(out, size=(h, w), mode=cfg.resample, align_corners=False)
    out = out.clamp(0.0, 1.0)
    return out.squeeze(0) if squeeze else out


def synthesize_lowres(y: Frame, cfg: DegradationConfig) -> Frame:
    """
    Blur (reflect padding), downscale by scale_factor and, if restore_size, upscale
    back so z and y are pixel-aligned. Frames whose sides are not multiples of
    scale_factor are center-cropped first. Deterministic.
    """
    check_degradation(cfg)
    y = crop_to_multiple(y.to_unit(), cfg.scale_factor)
    z = degrade(y.pixels, cfg)
    return Frame(pixels=z, value_range="unit", source_id=y.source_id)
