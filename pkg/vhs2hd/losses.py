"""
Objective terms: adversarial (least-squares or log form), cycle consistency,
perceptual distance and the weighted generator total.

Every term is a per-element mean, so values do not depend on resolution.
"""

import json
import math
from dataclasses import asdict, dataclass, fields
from typing import Literal, Mapping, Optional, Union

import torch
import torch.nn.functional as F

from vhs2hd import metrics
from vhs2hd.errors import LossShapeError, NonFiniteLossError

GanForm = Literal["least_squares", "vanilla_log"]
PercNorm = Literal["mse", "l2"]

LOG_EPS = 1e-7

Scalar = Union[float, torch.Tensor]


@dataclass(frozen=True)
class LossWeights:
    lambda_cyc: float = 0.1
    kappa_perc: float = 0.05
    gan_form: GanForm = "least_squares"
    perc_norm: PercNorm = "mse"

    def __post_init__(self):
        if self.lambda_cyc < 0 or self.kappa_perc < 0:
            raise ValueError("Loss weights must be >= 0")
        if self.gan_form not in ("least_squares", "vanilla_log"):
            raise ValueError("Unknown gan_form %r" % (self.gan_form,))
        if self.perc_norm not in ("mse", "l2"):
            raise ValueError("Unknown perc_norm %r" % (self.perc_norm,))


def _log_guarded(p: torch.Tensor) -> torch.Tensor:
    """log(p) with p clamped to [1e-7, 1 - 1e-7]; clamped entries are counted."""
    outside = (p < LOG_EPS) | (p > 1.0 - LOG_EPS)
    clamped = int(outside.sum().item())
    if clamped:
        metrics.record_log_guard(clamped)
    return torch.log(p.clamp(LOG_EPS, 1.0 - LOG_EPS))


def adversarial_loss_D(d_real: torch.Tensor, d_fake: torch.Tensor, form: GanForm = "least_squares") -> torch.Tensor:
    """Discriminator side, to be minimized."""
    if d_real.shape != d_fake.shape:
        raise LossShapeError(
            "Realness maps differ in shape: %s vs %s" % (tuple(d_real.shape), tuple(d_fake.shape))
        )
    if form == "least_squares":
        return ((d_real - 1.0) ** 2).mean() + (d_fake ** 2).mean()
    return -_log_guarded(d_real).mean() - _log_guarded(1.0 - d_fake).mean()


def adversarial_loss_G(d_fake: torch.Tensor, form: GanForm = "least_squares") -> torch.Tensor:
    """Generator side (non-saturating for the log form)."""
    if form == "least_squares":
        return ((d_fake - 1.0) ** 2).mean()
    return -_log_guarded(d_fake).mean()


def cycle_loss(x: torch.Tensor, rec_x: torch.Tensor, y: torch.Tensor, rec_y: torch.Tensor) -> torch.Tensor:
    if x.shape != rec_x.shape or y.shape != rec_y.shape:
        raise LossShapeError(
            "Reconstruction shapes %s/%s do not match sources %s/%s"
            % (tuple(rec_x.shape), tuple(rec_y.shape), tuple(x.shape), tuple(y.shape))
        )
    return (rec_x - x).abs().mean() + (rec_y - y).abs().mean()


def perceptual_loss(feat_a: torch.Tensor, feat_b: torch.Tensor, norm: PercNorm = "mse") -> torch.Tensor:
    """
    "mse": mean squared difference over all feature elements.
    "l2": unsquared L2 norm of the difference per sample, averaged over the batch.
    """
    if feat_a.shape != feat_b.shape:
        raise LossShapeError(
            "Feature maps differ in shape %s vs %s; the degraded input must keep the size of "
            "its target (degradation.restore_size: true)" % (tuple(feat_a.shape), tuple(feat_b.shape))
        )
    if norm == "mse":
        return F.mse_loss(feat_a, feat_b)
    diff = (feat_a - feat_b).flatten(start_dim=1)
    return diff.norm(dim=1).mean()


def _value(v: Scalar) -> float:
    return float(v.detach()) if isinstance(v, torch.Tensor) else float(v)


def total_generator_objective(
    w: LossWeights,
    gan_G_Y: Scalar = 0.0,
    gan_F_X: Scalar = 0.0,
    gan_G_Z: Scalar = 0.0,
    cyc: Scalar = 0.0,
    perc: Scalar = 0.0,
) -> Scalar:
    """
    gan_G_Y + gan_F_X + gan_G_Z + lambda_cyc * cyc + kappa_perc * perc.
    Tensor parts keep their graph; the result is a tensor when any part is one.

    Raises:
        NonFiniteLossError: naming the first non-finite part
    """
    parts = {"gan_G_Y": gan_G_Y, "gan_F_X": gan_F_X, "gan_G_Z": gan_G_Z, "cyc": cyc, "perc": perc}
    for term, v in parts.items():
        value = _value(v)
        if not math.isfinite(value):
            raise NonFiniteLossError(term, value)
    return gan_G_Y + gan_F_X + gan_G_Z + w.lambda_cyc * cyc + w.kappa_perc * perc


def check_finite(term: str, v: Scalar) -> None:
    value = _value(v)
    if not math.isfinite(value):
        raise NonFiniteLossError(term, value)


@dataclass
class LossReport:
    """One logging record; absent terms are 0.0."""
    step: int = 0
    gan_G_Y: float = 0.0
    gan_F_X: float = 0.0
    gan_G_Z: float = 0.0
    cyc: float = 0.0
    perc: float = 0.0
    total_G: float = 0.0
    total_D_X: float = 0.0
    total_D_Y: float = 0.0
    total_D_Z: float = 0.0

    def recompute_total(self, w: LossWeights) -> float:
        return float(total_generator_objective(
            w, gan_G_Y=self.gan_G_Y, gan_F_X=self.gan_F_X, gan_G_Z=self.gan_G_Z, cyc=self.cyc, perc=self.perc,
        ))

    def merge(self, other: Mapping[str, float]) -> "LossReport":
        for key, value in other.items():
            setattr(self, key, float(value))
        return self

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=False, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "LossReport":
        data = json.loads(line)
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in names})


def build_report(
    step: int,
    w: LossWeights,
    style: Optional[Mapping[str, float]] = None,
    resolution: Optional[Mapping[str, float]] = None,
) -> LossReport:
    """Combine one style-step fragment and the averaged resolution fragments; total_G from the parts."""
    report = LossReport(step=step)
    report.merge(style or {})
    report.merge(resolution or {})
    report.total_G = report.recompute_total(w)
    return report
