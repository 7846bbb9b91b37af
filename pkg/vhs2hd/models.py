"""
Networks: U-net generators (G, F), pointwise discriminators (D_X, D_Y, D_Z) and
the frozen VGG19 feature extractor used by the perceptual loss.

The resolution branch ("Enhance Net") is not a separate module: ModelBundle
hands out G itself, so both branches always read and write the same tensors.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence, Union

import torch
import torch.nn as nn
from torchvision.models import vgg19

from vhs2hd.errors import FeatureWeightsMissingError, ShapeError
from vhs2hd.utils.archive import load_archive, save_archive, tensor_digest

INIT_STD = 0.02

# End index (exclusive) into torchvision's vgg19().features for each tap.
VGG19_TAPS: Dict[str, int] = {
    "relu1_2": 4,
    "relu2_2": 9,
    "relu3_4": 18,
    "relu4_4": 27,
    "relu5_4": 36,
}
# (channels, pooling steps before the tap)
VGG19_TAP_SHAPES: Dict[str, tuple] = {
    "relu1_2": (64, 0),
    "relu2_2": (128, 1),
    "relu3_4": (256, 2),
    "relu4_4": (512, 3),
    "relu5_4": (512, 4),
}
IDENTITY_TAP = "identity"

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


def _norm(kind: str, channels: int) -> nn.Module:
    if kind == "instance":
        return nn.InstanceNorm2d(channels, affine=False, track_running_stats=False)
    return nn.Identity()


class UnetGenerator(nn.Module):
    """
    U-net with `depth` stride-2 levels and skip connections between mirrored levels.

    Encoder level i: [LeakyReLU(0.2)] Conv4x4/s2 [norm]; the outermost level has no
    activation in front, and neither the outermost nor the innermost level is
    normalized. Decoder level i: ReLU ConvTranspose4x4/s2 [norm]; the outermost
    decoder ends in Tanh. Channels double per level from base_channels, capped at
    max_channels.
    """

    def __init__(
        self,
        depth: int = 6,
        base_channels: int = 64,
        max_channels: int = 512,
        norm: Literal["instance", "none"] = "instance",
        residual_bypass: bool = False,
    ):
        super().__init__()
        if depth < 1:
            raise ValueError("depth must be >= 1")
        self.depth = depth
        self.residual_bypass = residual_bypass
        ch = [min(base_channels * 2 ** i, max_channels) for i in range(depth)]
        self.channels = ch

        down: List[nn.Module] = []
        for i in range(depth):
            layers: List[nn.Module] = []
            if i > 0:
                layers.append(nn.LeakyReLU(0.2))
            layers.append(nn.Conv2d(3 if i == 0 else ch[i - 1], ch[i], 4, stride=2, padding=1))
            if 0 < i < depth - 1:
                layers.append(_norm(norm, ch[i]))
            down.append(nn.Sequential(*layers))
        self.down = nn.ModuleList(down)

        up: List[nn.Module] = []
        for i in range(depth):
            c_in = ch[i] if i == depth - 1 else ch[i] * 2
            c_out = 3 if i == 0 else ch[i - 1]
            layers = [nn.ReLU(), nn.ConvTranspose2d(c_in, c_out, 4, stride=2, padding=1)]
            layers.append(nn.Tanh() if i == 0 else _norm(norm, c_out))
            up.append(nn.Sequential(*layers))
        self.up = nn.ModuleList(up)

    @property
    def multiple(self) -> int:
        return 2 ** self.depth

    def final_layer(self) -> nn.ConvTranspose2d:
        return self.up[0][1]

    def zero_final_layer(self) -> None:
        with torch.no_grad():
            self.final_layer().weight.zero_()
            self.final_layer().bias.zero_()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeError("Generator expects (N, 3, H, W), got %s" % (tuple(x.shape),))
        h, w = x.shape[-2:]
        m = self.multiple
        if h % m or w % m:
            raise ShapeError(
                "Generator of depth %d needs H and W divisible by %d, got %d×%d" % (self.depth, m, h, w)
            )
        skips = []
        out = x
        for level in self.down:
            out = level(out)
            skips.append(out)
        out = self.up[-1](skips[-1])
        for i in range(self.depth - 2, -1, -1):
            out = self.up[i](torch.cat([out, skips[i]], dim=1))
        if self.residual_bypass:
            out = (x + out).clamp(-1.0, 1.0)
        return out


class PixelDiscriminator(nn.Module):
    """1x1 convolution stack 3 -> widths... -> 1; every output pixel sees only its input pixel."""

    def __init__(self, widths: Sequence[int] = (64, 128), final: Literal["sigmoid", "linear"] = "linear"):
        super().__init__()
        self.final = final
        layers: List[nn.Module] = []
        c_in = 3
        for width in widths:
            layers += [nn.Conv2d(c_in, width, 1), nn.LeakyReLU(0.2)]
            c_in = width
        layers.append(nn.Conv2d(c_in, 1, 1))
        if final == "sigmoid":
            layers.append(nn.Sigmoid())
        self.net = nn.Sequential(*layers)

    def final_layer(self) -> nn.Conv2d:
        return [m for m in self.net if isinstance(m, nn.Conv2d)][-1]

    def zero_final_layer(self) -> None:
        with torch.no_grad():
            self.final_layer().weight.zero_()
            self.final_layer().bias.zero_()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


class FeatureExtractor(nn.Module):
    """
    Frozen VGG19 prefix ending at `tap_stage`. Input is signed [-1, 1]; it is
    remapped to [0, 1] and ImageNet-normalized before the first convolution.
    The "identity" tap returns the input unchanged.
    """

    def __init__(self, tap_stage: str = "relu4_4"):
        super().__init__()
        if tap_stage != IDENTITY_TAP and tap_stage not in VGG19_TAPS:
            raise ValueError(
                "Unknown tap stage %r (known: %s)" % (tap_stage, ", ".join([IDENTITY_TAP, *VGG19_TAPS]))
            )
        self.tap_stage = tap_stage
        if tap_stage == IDENTITY_TAP:
            self.features = nn.Sequential()
        else:
            self.features = vgg19(weights=None).features[: VGG19_TAPS[tap_stage]]
        self.register_buffer("mean", torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1), persistent=False)
        self.register_buffer("std", torch.tensor(IMAGENET_STD).view(1, 3, 1, 1), persistent=False)
        self.freeze()

    @property
    def is_identity(self) -> bool:
        return self.tap_stage == IDENTITY_TAP

    def freeze(self) -> None:
        for p in self.parameters():
            p.requires_grad_(False)
        super().train(False)

    def train(self, mode: bool = True) -> "FeatureExtractor":
        # Stays in eval mode whatever the caller asks.
        return super().train(False)

    def weight_tensors(self) -> Dict[str, torch.Tensor]:
        return {"features.%s" % name: t for name, t in self.features.state_dict().items()}

    def load_weights(self, path: Union[str, Path]) -> None:
        """Load `features.<index>.<weight|bias>` tensors (torchvision naming) from an archive."""
        if self.is_identity:
            return
        try:
            tensors, _ = load_archive(path)
        except FileNotFoundError as e:
            raise FeatureWeightsMissingError("Feature extractor weights not found: %s" % path) from e
        wanted = {name[len("features."):]: t for name, t in tensors.items() if name.startswith("features.")}
        own = self.features.state_dict()
        missing = sorted(set(own) - set(wanted))
        if missing:
            raise ValueError("Weight archive %s lacks tensors: %s" % (path, ", ".join(missing[:5])))
        self.features.load_state_dict({name: wanted[name] for name in own})
        self.freeze()

    def randomize(self, seed: int) -> None:
        """Fixed-seed He-normal weights; for tests and weightless smoke runs only."""
        g = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for module in self.features:
                if isinstance(module, nn.Conv2d):
                    fan_in = module.in_channels * module.kernel_size[0] * module.kernel_size[1]
                    module.weight.copy_(torch.randn(module.weight.shape, generator=g) * (2.0 / fan_in) ** 0.5)
                    module.bias.zero_()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if self.is_identity:
            return x
        x = ((x + 1.0) / 2.0 - self.mean) / self.std
        return self.features(x)


def save_feature_weights(extractor: FeatureExtractor, path: Union[str, Path]) -> None:
    save_archive(path, extractor.weight_tensors(), {"kind": "vgg19_features", "tap_stage": extractor.tap_stage})


def build_feature_extractor(
    tap_stage: str = "relu4_4",
    weights_path: Optional[Union[str, Path]] = None,
    allow_random_weights: bool = False,
    random_seed: int = 0,
) -> FeatureExtractor:
    """
    Raises:
        FeatureWeightsMissingError: no weight archive and random fallback disabled
    """
    extractor = FeatureExtractor(tap_stage)
    if extractor.is_identity:
        return extractor
    if weights_path is not None and Path(weights_path).is_file():
        extractor.load_weights(weights_path)
    elif allow_random_weights:
        extractor.randomize(random_seed)
    else:
        raise FeatureWeightsMissingError(
            "Feature extractor weights not found: %s (set model.features.weights_path, "
            "or allow_random_weights for smoke runs)" % weights_path
        )
    return extractor


# --- initialization and hashing ---


def init_weights(module: nn.Module, generator: torch.Generator, std: float = INIT_STD) -> None:
    """N(0, std) for every conv weight, zero biases; draws come from `generator` in module order."""
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
                m.weight.copy_(torch.randn(m.weight.shape, generator=generator) * std)
                if m.bias is not None:
                    m.bias.zero_()


def parameter_hash(module: nn.Module) -> str:
    return tensor_digest(module.state_dict())


GROUPS = ("G", "F", "D_X", "D_Y", "D_Z")


@dataclass
class ModelBundle:
    G: UnetGenerator
    F: UnetGenerator
    D_X: PixelDiscriminator
    D_Y: PixelDiscriminator
    D_Z: PixelDiscriminator
    features: FeatureExtractor
    seed: int = 0

    @property
    def enhance_net(self) -> UnetGenerator:
        """The resolution-branch generator; the very same module (and storage) as G."""
        return self.G

    def groups(self) -> Dict[str, nn.Module]:
        return {name: getattr(self, name) for name in GROUPS}

    def hashes(self) -> Dict[str, str]:
        out = {name: parameter_hash(m) for name, m in self.groups().items()}
        out["features"] = parameter_hash(self.features)
        return out

    def shares_storage(self) -> bool:
        """True when every Enhance-Net parameter is the same tensor storage as G's."""
        g = dict(self.G.named_parameters())
        e = dict(self.enhance_net.named_parameters())
        return g.keys() == e.keys() and all(
            g[name].data_ptr() == e[name].data_ptr() and g[name] is e[name] for name in g
        )

    def train(self, mode: bool = True) -> None:
        for m in self.groups().values():
            m.train(mode)


def init_models(cfg, seed: int = 0, gan_form: str = "least_squares", features: Optional[FeatureExtractor] = None) -> ModelBundle:
    """
    Build and initialize every network from a ModelConfig.
    Each group draws from its own generator seeded by (seed, group index), so the
    bundle is a pure function of (cfg, seed).
    """
    gen_cfg = cfg.generator
    final = "sigmoid" if gan_form == "vanilla_log" else "linear"

    def generator() -> UnetGenerator:
        return UnetGenerator(
            depth=gen_cfg.depth,
            base_channels=gen_cfg.base_channels,
            max_channels=gen_cfg.max_channels,
            norm=gen_cfg.norm,
            residual_bypass=gen_cfg.residual_bypass,
        )

    def discriminator() -> PixelDiscriminator:
        return PixelDiscriminator(cfg.discriminator.widths, final=final)

    nets = {"G": generator(), "F": generator(), "D_X": discriminator(), "D_Y": discriminator(), "D_Z": discriminator()}
    for index, name in enumerate(GROUPS):
        init_weights(nets[name], torch.Generator().manual_seed(seed * len(GROUPS) + index))
    if features is None:
        feat_cfg = cfg.features
        features = build_feature_extractor(
            tap_stage=feat_cfg.tap_stage,
            weights_path=feat_cfg.weights_path,
            allow_random_weights=feat_cfg.allow_random_weights,
            random_seed=feat_cfg.random_seed,
        )
    return ModelBundle(features=features, seed=seed, **nets)
