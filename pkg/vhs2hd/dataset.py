"""
Dataset manifest (deterministic per-domain split) and seeded crop sampling.

Domain X holds analog-era frames, domain Y clean HDTV frames; domain Z is never
stored, it is synthesized from Y on load with the manifest's DegradationConfig.
"""

import json
import threading
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple, Union

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict

from vhs2hd.degradation import DegradationConfig, degrade
from vhs2hd.errors import EmptySourceError, FrameSizeError
from vhs2hd.frames import crop_to_multiple, load_frame
from vhs2hd.utils.imageio import list_images

Domain = Literal["X", "Y", "Z"]
Split = Literal["train", "test"]

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1


class DatasetManifest(BaseModel):
    """
    Frame lists of both domains and their split.

    Item references are "<domain>/<file name>"; files live in x_dir / y_dir.
    """
    model_config = ConfigDict(extra="forbid")

    format_version: int = MANIFEST_VERSION
    x_dir: str
    y_dir: str
    domain_x_items: List[str]
    domain_y_items: List[str]
    split: Dict[str, Split]
    seed: int
    train_frac: float
    degradation: DegradationConfig
    warnings: List[str] = []

    def items(self, domain: Domain, split: Optional[Split] = "train") -> List[str]:
        """Item references of a domain (Z shares Y's items), filtered by split; sorted."""
        refs = self.domain_x_items if domain == "X" else self.domain_y_items
        if split is None:
            return list(refs)
        return [ref for ref in refs if self.split[ref] == split]

    def path_of(self, ref: str) -> Path:
        domain, name = ref.split("/", 1)
        return Path(self.x_dir if domain == "X" else self.y_dir) / name

    def counts(self) -> Dict[str, Dict[str, int]]:
        return {
            domain: {split: len(self.items(domain, split)) for split in ("train", "test")}
            for domain in ("X", "Y")
        }

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"


def split_items(refs: List[str], train_frac: float, seed: int, domain_index: int) -> Dict[str, Split]:
    """Seeded shuffle, then the first round(n * train_frac) items (at least one) go to train."""
    n = len(refs)
    rng = np.random.default_rng([seed, domain_index])
    order = rng.permutation(n)
    n_train = min(n, max(1, int(np.floor(n * train_frac + 0.5))))
    train = set(int(i) for i in order[:n_train])
    return {ref: ("train" if i in train else "test") for i, ref in enumerate(refs)}


def build_manifest(
    x_dir: Union[str, Path],
    y_dir: Union[str, Path],
    train_frac: float = 0.95,
    seed: int = 0,
    cfg: Optional[DegradationConfig] = None,
    manifest_path: Optional[Union[str, Path]] = None,
) -> DatasetManifest:
    """
    List both domains, split each deterministically and write the manifest
    (default: manifest.json next to x_dir).

    Raises:
        EmptySourceError: a domain directory is missing or holds no images
    """
    if not 0.0 < train_frac <= 1.0:
        raise ValueError("train_frac must be in (0, 1], got %r" % train_frac)
    cfg = cfg or DegradationConfig()
    dirs = {"X": Path(x_dir).resolve(), "Y": Path(y_dir).resolve()}
    refs: Dict[str, List[str]] = {}
    for domain, directory in dirs.items():
        if not directory.is_dir():
            raise EmptySourceError("Domain %s directory %s does not exist" % (domain, directory))
        names = [p.name for p in list_images(directory)]
        if not names:
            raise EmptySourceError("Domain %s directory %s holds no images" % (domain, directory))
        refs[domain] = ["%s/%s" % (domain, name) for name in names]

    split: Dict[str, Split] = {}
    warnings: List[str] = []
    for index, domain in enumerate(("X", "Y")):
        assignment = split_items(refs[domain], train_frac, seed, index)
        split.update(assignment)
        if "test" not in assignment.values():
            warnings.append("domain %s: test split is empty (train_frac=%g)" % (domain, train_frac))

    manifest = DatasetManifest(
        x_dir=str(dirs["X"]),
        y_dir=str(dirs["Y"]),
        domain_x_items=refs["X"],
        domain_y_items=refs["Y"],
        split=split,
        seed=seed,
        train_frac=train_frac,
        degradation=cfg,
        warnings=warnings,
    )
    save_manifest(manifest, manifest_path or default_manifest_path(x_dir))
    return manifest


def default_manifest_path(x_dir: Union[str, Path]) -> Path:
    return Path(x_dir).resolve().parent / MANIFEST_NAME


def save_manifest(manifest: DatasetManifest, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(manifest.to_json(), encoding="utf-8")
    tmp.replace(path)
    return path


def load_manifest(path: Union[str, Path]) -> DatasetManifest:
    return DatasetManifest.model_validate_json(Path(path).read_text(encoding="utf-8"))


class FrameCache:
    """
    Bounded LRU of decoded frames (unit range, cropped to a multiple of the
    degradation scale). Z entries are synthesized from the matching Y entry.
    Safe to share between sampling threads.
    """

    def __init__(self, manifest: DatasetManifest, capacity: int = 256):
        self.manifest = manifest
        self.capacity = capacity
        self._entries: "OrderedDict[Tuple[str, str], torch.Tensor]" = OrderedDict()
        self._lock = threading.Lock()

    def _load(self, domain: Domain, ref: str) -> torch.Tensor:
        if domain == "Z":
            return degrade(self.get("Y", ref), self.manifest.degradation)
        frame = load_frame(self.manifest.path_of(ref))
        if domain == "Y":
            frame = crop_to_multiple(frame, self.manifest.degradation.scale_factor)
        return frame.pixels

    def get(self, domain: Domain, ref: str) -> torch.Tensor:
        key = (domain, ref)
        with self._lock:
            if key in self._entries:
                self._entries.move_to_end(key)
                return self._entries[key]
        pixels = self._load(domain, ref)
        with self._lock:
            self._entries[key] = pixels
            self._entries.move_to_end(key)
            while len(self._entries) > self.capacity:
                self._entries.popitem(last=False)
        return pixels


def _window(t: torch.Tensor, top: int, left: int, size: int, flip: bool) -> torch.Tensor:
    out = t[:, top:top + size, left:left + size]
    return out.flip(-1) if flip else out


def _draw_sample(
    cache: FrameCache,
    refs: List[str],
    domain: Domain,
    crop: int,
    hflip: bool,
    seed: int,
) -> Union[torch.Tensor, Tuple[torch.Tensor, torch.Tensor]]:
    g = torch.Generator().manual_seed(seed)
    ref = refs[int(torch.randint(len(refs), (1,), generator=g))]
    source = cache.get("Y" if domain == "Z" else domain, ref)
    h, w = source.shape[-2:]
    if crop > min(h, w):
        raise FrameSizeError("Crop %d is larger than frame %s (%d×%d)" % (crop, ref, h, w))
    deg = cache.manifest.degradation
    step = 1 if domain != "Z" or deg.restore_size else deg.scale_factor
    top = int(torch.randint((h - crop) // step + 1, (1,), generator=g)) * step
    left = int(torch.randint((w - crop) // step + 1, (1,), generator=g)) * step
    flip = bool(hflip and torch.rand((), generator=g) < 0.5)
    y = _window(source, top, left, crop, flip) * 2.0 - 1.0
    if domain != "Z":
        return y
    z_full = cache.get("Z", ref)
    if deg.restore_size:
        z = _window(z_full, top, left, crop, flip)
    else:
        s = deg.scale_factor
        z = _window(z_full, top // s, left // s, max(1, crop // s), flip)
    return z * 2.0 - 1.0, y


def sample_batch(
    manifest: DatasetManifest,
    domain: Domain,
    batch: int,
    crop: int,
    rng_state: torch.Generator,
    *,
    split: Split = "train",
    hflip: bool = True,
    cache: Optional[FrameCache] = None,
    workers: int = 0,
) -> Union[torch.Tensor, Tuple[torch.Tensor, torch.Tensor]]:
    """
    Random square crops as an (N, 3, crop, crop) tensor in [-1, 1].
    Domain Z returns (z_crops, y_crops) cut at identical windows.

    One seed per sample is drawn from rng_state up front; each sample is then a
    function of its seed alone, so the batch is the same for any `workers`.
    """
    if batch < 1:
        raise ValueError("batch must be >= 1")
    cache = cache or FrameCache(manifest)
    refs = manifest.items(domain, split)
    if not refs:
        raise EmptySourceError("Domain %s has no %s items" % (domain, split))
    seeds = torch.randint(0, 2 ** 62, (batch,), generator=rng_state).tolist()

    def draw(seed: int):
        return _draw_sample(cache, refs, domain, crop, hflip, seed)

    if workers > 0:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            samples = list(pool.map(draw, seeds))
    else:
        samples = [draw(seed) for seed in seeds]
    if domain == "Z":
        return torch.stack([s[0] for s in samples]), torch.stack([s[1] for s in samples])
    return torch.stack(samples)
