"""
Command-line surface: prepare, train, translate, evaluate, grid.

Every command loads the config (file -> preset -> overrides), echoes the
effective config into its output directory before doing any work, and maps
errors to exit codes: 0 ok, 1 usage/config, 2 runtime, 3 numeric divergence.
"""

import argparse
import asyncio
import sys
import time
from pathlib import Path
from typing import List, Optional, Sequence

from vhs2hd import __version__, metrics
from vhs2hd.config import ConfigHolder, ConfigModel, load_config
from vhs2hd.dataset import build_manifest, default_manifest_path, load_manifest
from vhs2hd.degradation import synthesize_lowres
from vhs2hd.errors import UsageError, Vhs2HdError
from vhs2hd.evaluation import evaluate_dir, normalize_metrics, write_comparison, write_report
from vhs2hd.frames import extract_frames, load_frame, save_frame
from vhs2hd.grid import render_grid
from vhs2hd.logger import get_logger, run_context, setup_aiologger
from vhs2hd.trainer import CONFIG_NAME, train
from vhs2hd.translate import DEFAULT_OVERLAP, translate_dir
from vhs2hd.utils.imageio import list_images

logger = get_logger()

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class ArgumentParser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; usage errors exit with 1 here."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, "%s: error: %s\n" % (self.prog, message))


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="YAML/JSON config document")
    p.add_argument("--preset", default=None, choices=["full", "desk"], help="built-in preset applied under the config file")
    p.add_argument(
        "--override", action="append", default=[], metavar="KEY=VALUE",
        help="config override, e.g. train.lr=2e-4 or res_steps_per_cycle_step=0 (repeatable)",
    )


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = ArgumentParser(prog="vhs2hd", description="Analog video to HDTV frame translation", formatter_class=fmt)
    parser.add_argument("--version", action="version", version="%(prog)s " + __version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=ArgumentParser)

    p = sub.add_parser("prepare", help="extract frames and build the dataset manifest", formatter_class=fmt)
    _add_common(p)
    p.add_argument("--x-dir", default=None, help="domain X frames directory or video (default: data.x_dir)")
    p.add_argument("--y-dir", default=None, help="domain Y frames directory or video (default: data.y_dir)")
    p.add_argument("--out", default=None, help="where extracted frames, Z previews and the manifest go (default: next to --x-dir)")
    p.add_argument("--train-frac", type=float, default=None, help="share of each domain used for training (default: data.train_frac, 0.95)")
    p.add_argument("--seed", type=int, default=None, help="split seed (default: data.seed)")
    p.add_argument("--stride", type=int, default=None, help="keep every n-th decoded video frame (default: data.stride)")
    p.add_argument("--write-z", action="store_true", help="also write the synthesized low-resolution domain Z for inspection")

    p = sub.add_parser("train", help="train both branches", formatter_class=fmt)
    _add_common(p)
    p.add_argument("--manifest", default=None, help="dataset manifest (default: data.manifest_path)")
    p.add_argument("--run-dir", default=None, help="run directory (default: runs/run_<timestamp>)")
    p.add_argument("--resume", action="store_true", help="continue from the latest checkpoint in --run-dir")

    p = sub.add_parser("translate", help="translate frames with a trained generator", formatter_class=fmt)
    _add_common(p)
    p.add_argument("--checkpoint", required=True, help="training checkpoint")
    p.add_argument("--input", required=True, help="frames directory, image or video")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--tile", type=int, default=None, help="tile size for tile-and-blend inference (default: whole frame)")
    p.add_argument("--overlap", type=int, default=DEFAULT_OVERLAP, help="tile overlap in pixels")
    p.add_argument("--check-config", action="store_true", help="require the config's model section to match the checkpoint")

    p = sub.add_parser("evaluate", help="no-reference IQA of one or more method directories", formatter_class=fmt)
    _add_common(p)
    p.add_argument("--dirs", nargs="+", required=True, help="method directories")
    p.add_argument("--labels", nargs="+", default=None, help="method labels (default: directory names)")
    p.add_argument("--metric", nargs="+", default=["brisque", "piqe"], help="brisque, piqe (alias pique)")
    p.add_argument("--model", default=None, help="BRISQUE regression model (default: iqa.model_path)")
    p.add_argument("--out", required=True, help="report directory")

    p = sub.add_parser("grid", help="side-by-side comparison montages", formatter_class=fmt)
    _add_common(p)
    p.add_argument("--dirs", nargs="+", required=True, help="directories sharing file names, in panel order")
    p.add_argument("--labels", nargs="+", default=None, help="panel labels (default: directory names)")
    p.add_argument("--out", required=True, help="montage directory")
    return parser


def _echo_config(config: ConfigModel, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / CONFIG_NAME).write_text(config.to_json(), encoding="utf-8")


def _labels(args, dirs: Sequence[Path]) -> List[str]:
    labels = list(args.labels) if args.labels else [d.name for d in dirs]
    if len(labels) != len(dirs):
        raise UsageError("--labels: got %d labels for %d directories" % (len(labels), len(dirs)))
    if len(set(labels)) != len(labels):
        raise UsageError("--labels: labels must be unique")
    return labels


# --- commands ---


async def _domain_frames(holder: ConfigHolder, source: Path, out_dir: Path, domain: str, stride: int) -> Path:
    """A frames directory is used in place; a video is extracted into out_dir/<domain>."""
    if source.is_dir():
        return source
    target = out_dir / domain
    dec = holder.model.data.decoder
    await extract_frames(
        source, target, stride,
        ffmpeg=dec.ffmpeg, ffprobe=dec.ffprobe,
        timeouts=holder.decoder_timeouts, limits=holder.worker_limits,
    )
    return target


async def cmd_prepare(args, holder: ConfigHolder) -> int:
    data = holder.model.data
    x_src = args.x_dir or data.x_dir
    y_src = args.y_dir or data.y_dir
    for flag, value in (("--x-dir", x_src), ("--y-dir", y_src)):
        if value is None:
            raise UsageError("%s is required (or set data.%s)" % (flag, flag[2:].replace("-", "_")))
        if not Path(value).exists():
            raise UsageError("%s: no such file or directory: %s" % (flag, value))
    x_src, y_src = Path(x_src), Path(y_src)
    out_dir = Path(args.out) if args.out else x_src.resolve().parent
    _echo_config(holder.model, out_dir)

    stride = args.stride if args.stride is not None else data.stride
    x_dir = await _domain_frames(holder, x_src, out_dir, "X", stride)
    y_dir = await _domain_frames(holder, y_src, out_dir, "Y", stride)

    manifest_path = data.manifest_path or (out_dir / "manifest.json" if args.out else default_manifest_path(x_dir))
    manifest = await asyncio.to_thread(
        build_manifest,
        x_dir, y_dir,
        train_frac=args.train_frac if args.train_frac is not None else data.train_frac,
        seed=args.seed if args.seed is not None else data.seed,
        cfg=holder.degradation,
        manifest_path=manifest_path,
    )
    for warning in manifest.warnings:
        await logger.warning(warning)

    if args.write_z:
        z_dir = out_dir / "Z"

        def write_z(path: Path) -> None:
            save_frame(synthesize_lowres(load_frame(path), holder.degradation), z_dir / path.name)

        for path in list_images(y_dir):
            await holder.worker_limits.run(write_z, path)

    counts = manifest.counts()
    for domain, splits in counts.items():
        print("%s: train=%d test=%d" % (domain, splits["train"], splits["test"]))
    await logger.info("Manifest written to %s: %s" % (manifest_path, counts))
    return EXIT_OK


def _resolve_manifest(args, holder: ConfigHolder) -> Path:
    data = holder.model.data
    if args.manifest:
        path = Path(args.manifest)
    elif data.manifest_path:
        path = Path(data.manifest_path)
    elif data.x_dir:
        path = default_manifest_path(data.x_dir)
    else:
        raise UsageError("--manifest is required (or set data.manifest_path)")
    if not path.is_file():
        raise UsageError("--manifest: file not found: %s (run `vhs2hd prepare` first)" % path)
    return path


async def cmd_train(args, holder: ConfigHolder) -> int:
    if args.resume and not args.run_dir:
        raise UsageError("--resume needs --run-dir")
    manifest = load_manifest(_resolve_manifest(args, holder))
    run_dir = Path(args.run_dir) if args.run_dir else Path("runs") / time.strftime("run_%Y%m%d_%H%M%S")
    _echo_config(holder.model, run_dir)
    await train(manifest, holder.model, run_dir, resume=args.resume)
    print(str(run_dir))
    return EXIT_OK


async def cmd_translate(args, holder: ConfigHolder) -> int:
    if not Path(args.checkpoint).is_file():
        raise UsageError("--checkpoint: file not found: %s" % args.checkpoint)
    if not Path(args.input).exists():
        raise UsageError("--input: no such file or directory: %s" % args.input)
    if args.tile is not None and args.tile <= args.overlap:
        raise UsageError("--tile must be larger than --overlap (%d)" % args.overlap)
    out_dir = Path(args.out)
    _echo_config(holder.model, out_dir)
    dec = holder.model.data.decoder
    count = await translate_dir(
        args.checkpoint, args.input, out_dir,
        tile=args.tile,
        overlap=args.overlap,
        config=holder.model.model_dump(mode="json") if args.check_config else None,
        stride=holder.model.data.stride,
        ffmpeg=dec.ffmpeg,
        ffprobe=dec.ffprobe,
        timeouts=holder.decoder_timeouts,
        limits=holder.worker_limits,
    )
    print("%d frames written to %s" % (count, out_dir))
    return EXIT_OK


async def cmd_evaluate(args, holder: ConfigHolder) -> int:
    dirs = [Path(d) for d in args.dirs]
    for d in dirs:
        if not d.is_dir():
            raise UsageError("--dirs: not a directory: %s" % d)
    labels = _labels(args, dirs)
    wanted = normalize_metrics(args.metric)
    model_path = args.model or holder.model.iqa.model_path
    out_dir = Path(args.out)
    _echo_config(holder.model, out_dir)

    reports = {}
    for label, d in zip(labels, dirs):
        report = await evaluate_dir(
            d, wanted,
            model_path=model_path,
            range_path=holder.model.iqa.range_path,
            limits=holder.worker_limits,
        )
        write_report(report, out_dir, label)
        if report.notice:
            print("notice: %s" % report.notice, file=sys.stderr)
        reports[label] = report
    path = write_comparison(reports, out_dir / "comparison.csv")
    print("Report written to %s (lower is better)" % path)
    return EXIT_OK


async def cmd_grid(args, holder: ConfigHolder) -> int:
    dirs = [Path(d) for d in args.dirs]
    for d in dirs:
        if not d.is_dir():
            raise UsageError("--dirs: not a directory: %s" % d)
    labels = _labels(args, dirs)
    out_dir = Path(args.out)
    _echo_config(holder.model, out_dir)
    written = await asyncio.to_thread(render_grid, dirs, out_dir, labels)
    print("%d montages written to %s" % (len(written), out_dir))
    return EXIT_OK


COMMANDS = {
    "prepare": cmd_prepare,
    "train": cmd_train,
    "translate": cmd_translate,
    "evaluate": cmd_evaluate,
    "grid": cmd_grid,
}


async def run_command(args, holder: ConfigHolder) -> int:
    """Run one command with its own run id and logger; returns the exit code."""
    setup_aiologger(level=holder.model.logging.level)
    metrics.reset()
    with run_context(args.command):
        try:
            await logger.info("Command %s started" % args.command)
            code = await COMMANDS[args.command](args, holder)
            await logger.info("Command %s finished" % args.command)
            return code
        except (Vhs2HdError, OSError) as e:
            await logger.error("%s failed: %s" % (args.command, e))
            raise
        finally:
            await logger.shutdown()


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        holder = load_config(args.config, preset=args.preset, overrides=args.override)
        return asyncio.run(run_command(args, holder))
    except Vhs2HdError as e:
        print("error: %s" % e, file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print("error: %s" % e, file=sys.stderr)
        return EXIT_RUNTIME
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return EXIT_RUNTIME
