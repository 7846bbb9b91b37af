"""Side-by-side comparison montages (input / baselines / ours) with label banners."""

from pathlib import Path
from typing import List, Optional, Sequence, Union

from PIL import Image, ImageDraw, ImageFont

from vhs2hd.errors import EmptySourceError, GridMismatchError, UsageError
from vhs2hd.utils.imageio import list_images

BANNER_HEIGHT = 24
PANEL_GAP = 4
BACKGROUND = (255, 255, 255)
TEXT_COLOR = (0, 0, 0)


def shared_names(dirs: Sequence[Path]) -> List[str]:
    """
    File names present in every directory, sorted.

    Raises:
        GridMismatchError: listing the names missing from at least one directory
    """
    sets = [{p.name for p in list_images(d)} for d in dirs]
    union = set().union(*sets)
    common = set.intersection(*sets)
    if union != common:
        raise GridMismatchError(list(union - common))
    return sorted(common)


def _banner(label: str, width: int, font) -> Image.Image:
    banner = Image.new("RGB", (width, BANNER_HEIGHT), BACKGROUND)
    draw = ImageDraw.Draw(banner)
    left, top, right, bottom = draw.textbbox((0, 0), label, font=font)
    x = max((width - (right - left)) // 2, 0)
    y = max((BANNER_HEIGHT - (bottom - top)) // 2 - top, 0)
    draw.text((x, y), label, fill=TEXT_COLOR, font=font)
    return banner


def compose_row(panels: Sequence[Image.Image], labels: Sequence[str]) -> Image.Image:
    """Panels scaled to the first panel's height, each under its label banner."""
    height = panels[0].height
    scaled = []
    for img in panels:
        img = img.convert("RGB")
        if img.height != height:
            img = img.resize((max(1, round(img.width * height / img.height)), height), Image.BICUBIC)
        scaled.append(img)
    width = sum(p.width for p in scaled) + PANEL_GAP * (len(scaled) - 1)
    canvas = Image.new("RGB", (width, height + BANNER_HEIGHT), BACKGROUND)
    font = ImageFont.load_default()
    x = 0
    for img, label in zip(scaled, labels):
        canvas.paste(_banner(label, img.width, font), (x, 0))
        canvas.paste(img, (x, BANNER_HEIGHT))
        x += img.width + PANEL_GAP
    return canvas


def render_grid(
    dirs: Sequence[Union[str, Path]],
    out_dir: Union[str, Path],
    labels: Optional[Sequence[str]] = None,
) -> List[Path]:
    """
    One PNG montage per shared frame name, panels in the order of `dirs`.
    Labels default to the directory names.
    """
    dirs = [Path(d) for d in dirs]
    if not dirs:
        raise UsageError("--dirs: at least one directory is required")
    for d in dirs:
        if not d.is_dir():
            raise UsageError("--dirs: not a directory: %s" % d)
    labels = list(labels) if labels else [d.name for d in dirs]
    if len(labels) != len(dirs):
        raise UsageError("--labels: got %d labels for %d directories" % (len(labels), len(dirs)))
    names = shared_names(dirs)
    if not names:
        raise EmptySourceError("No images in %s" % ", ".join(str(d) for d in dirs))

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name in names:
        panels = []
        for d in dirs:
            with Image.open(d / name) as img:
                panels.append(img.convert("RGB"))
        path = out_dir / (Path(name).stem + ".png")
        compose_row(panels, labels).save(path, format="PNG", compress_level=6)
        written.append(path)
    return written
