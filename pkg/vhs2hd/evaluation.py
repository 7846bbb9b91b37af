"""
Directory-level IQA evaluation: one row per image, mean/std per metric,
CSV/JSON reports and a per-method comparison table.
"""

import asyncio
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from vhs2hd import metrics
from vhs2hd.errors import EmptySourceError, UsageError, Vhs2HdError
from vhs2hd.iqa import BRISQUE_FEATURES, brisque_features, brisque_score, piqe_score
from vhs2hd.limits import WorkerLimitManager
from vhs2hd.logger import get_logger
from vhs2hd.utils.imageio import list_images, read_rgb8

logger = get_logger()

METRICS = ("brisque", "piqe")
METRIC_ALIASES = {"pique": "piqe"}

FEATURES_ONLY_NOTICE = (
    "BRISQUE regression model not available (%s); writing features only, no BRISQUE scores"
)


def normalize_metrics(names: Iterable[str]) -> Tuple[str, ...]:
    """Lower-case, resolve aliases ("pique" -> "piqe"), keep canonical order."""
    wanted = set()
    for name in names:
        key = METRIC_ALIASES.get(name.strip().lower(), name.strip().lower())
        if key not in METRICS:
            raise UsageError("--metric: unknown metric %r (known: brisque, piqe, pique)" % name)
        wanted.add(key)
    return tuple(m for m in METRICS if m in wanted)


@dataclass
class IqaRow:
    name: str
    brisque: Optional[float] = None
    piqe: Optional[float] = None
    no_active_blocks: bool = False
    features: Optional[List[float]] = None
    error: Optional[str] = None


@dataclass
class IqaReport:
    directory: str
    metrics: Tuple[str, ...]
    rows: List[IqaRow] = field(default_factory=list)
    features_only: bool = False
    notice: Optional[str] = None

    def values(self, metric: str) -> List[float]:
        return [getattr(r, metric) for r in self.rows if r.error is None and getattr(r, metric) is not None]

    def mean(self, metric: str) -> Optional[float]:
        v = self.values(metric)
        return float(np.mean(v)) if v else None

    def std(self, metric: str) -> Optional[float]:
        v = self.values(metric)
        return float(np.std(v)) if v else None

    @property
    def errors(self) -> int:
        return sum(1 for r in self.rows if r.error is not None)

    def columns(self) -> List[str]:
        cols = ["name"]
        if "brisque" in self.metrics and not self.features_only:
            cols.append("brisque")
        if "piqe" in self.metrics:
            cols += ["piqe", "no_active_blocks"]
        return cols + ["error"]

    def to_frame(self) -> pd.DataFrame:
        """Per-image rows followed by a "mean" and a "std" row."""
        cols = self.columns()
        rows = [{c: getattr(r, c) for c in cols} for r in self.rows]
        for stat in ("mean", "std"):
            summary = {c: None for c in cols}
            summary["name"] = stat
            for m in ("brisque", "piqe"):
                if m in cols:
                    summary[m] = getattr(self, stat)(m)
            rows.append(summary)
        return pd.DataFrame(rows, columns=cols)

    def features_frame(self) -> pd.DataFrame:
        cols = ["f%02d" % (i + 1) for i in range(BRISQUE_FEATURES)]
        data = [[r.name] + list(r.features) for r in self.rows if r.features is not None]
        return pd.DataFrame(data, columns=["name"] + cols)

    def to_json(self) -> str:
        doc = {
            "directory": self.directory,
            "metrics": list(self.metrics),
            "features_only": self.features_only,
            "notice": self.notice,
            "lower_is_better": True,
            "rows": [asdict(r) for r in self.rows],
            "mean": {m: self.mean(m) for m in self.metrics},
            "std": {m: self.std(m) for m in self.metrics},
        }
        return json.dumps(doc, indent=2) + "\n"


def _model_available(model_path: Optional[Union[str, Path]]) -> bool:
    return model_path is not None and Path(model_path).is_file()


def score_image(
    path: Path,
    wanted: Sequence[str],
    model_path: Optional[Union[str, Path]] = None,
    range_path: Optional[Union[str, Path]] = None,
) -> IqaRow:
    """Score one file; pure apart from reading it."""
    rgb = read_rgb8(path)
    row = IqaRow(name=path.name)
    if "brisque" in wanted:
        feats = brisque_features(rgb)
        row.features = [float(v) for v in feats]
        if _model_available(model_path):
            row.brisque = brisque_score(feats, model_path, range_path)
    if "piqe" in wanted:
        result = piqe_score(rgb)
        row.piqe = result.score
        row.no_active_blocks = result.no_active_blocks
    return row


async def evaluate_dir(
    directory: Union[str, Path],
    wanted: Sequence[str] = METRICS,
    model_path: Optional[Union[str, Path]] = None,
    range_path: Optional[Union[str, Path]] = None,
    limits: Optional[WorkerLimitManager] = None,
) -> IqaReport:
    """
    Score every image in `directory`. Images are scored concurrently (bounded by
    `limits`); rows are ordered by file name. A file that cannot be scored becomes
    a row with `error` set and is left out of the aggregates.

    Raises:
        EmptySourceError: directory missing or without images
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise EmptySourceError("Not a directory: %s" % directory)
    paths = list_images(directory)
    if not paths:
        raise EmptySourceError("No images in %s" % directory)
    wanted = normalize_metrics(wanted)
    limits = limits or WorkerLimitManager()

    report = IqaReport(directory=str(directory), metrics=wanted)
    if "brisque" in wanted and not _model_available(model_path):
        report.features_only = True
        report.notice = FEATURES_ONLY_NOTICE % (model_path or "no iqa.model_path configured")
        await logger.warning(report.notice)

    async def one(path: Path) -> IqaRow:
        try:
            row = await limits.run(score_image, path, wanted, model_path, range_path)
        except (Vhs2HdError, OSError, ValueError) as e:
            metrics.record_iqa_image(ok=False)
            await logger.warning("IQA failed for %s: %s" % (path, e))
            return IqaRow(name=path.name, error="%s: %s" % (type(e).__name__, e))
        metrics.record_iqa_image(ok=True)
        return row

    rows = await asyncio.gather(*(one(p) for p in paths))
    report.rows = sorted(rows, key=lambda r: r.name)
    await logger.info(
        "Evaluated %s: %d images, %d errors, %s"
        % (directory, len(report.rows), report.errors,
           ", ".join("%s mean=%s" % (m, _fmt(report.mean(m))) for m in wanted))
    )
    return report


def _fmt(v: Optional[float]) -> str:
    return "n/a" if v is None or math.isnan(v) else "%.4f" % v


# --- writers ---


def write_report(report: IqaReport, out_dir: Union[str, Path], stem: str) -> List[Path]:
    """<stem>.csv, <stem>.json and, for BRISQUE, <stem>_brisque_features.csv."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    csv_path = out_dir / ("%s.csv" % stem)
    report.to_frame().to_csv(csv_path, index=False)
    written.append(csv_path)
    json_path = out_dir / ("%s.json" % stem)
    json_path.write_text(report.to_json(), encoding="utf-8")
    written.append(json_path)
    if "brisque" in report.metrics:
        feat_path = out_dir / ("%s_brisque_features.csv" % stem)
        report.features_frame().to_csv(feat_path, index=False)
        written.append(feat_path)
    return written


def comparison_frame(reports: Dict[str, IqaReport]) -> pd.DataFrame:
    """
    One row per method with mean/std per metric. `<metric>_best` marks the lowest
    mean (lower is better for both metrics).
    """
    rows = []
    for label, report in reports.items():
        row = {"method": label, "directory": report.directory, "images": len(report.rows), "errors": report.errors}
        for m in report.metrics:
            if m == "brisque" and report.features_only:
                continue
            row["%s_mean" % m] = report.mean(m)
            row["%s_std" % m] = report.std(m)
        rows.append(row)
    df = pd.DataFrame(rows)
    for m in METRICS:
        col = "%s_mean" % m
        if col in df.columns:
            scores = pd.to_numeric(df[col], errors="coerce")
            df["%s_best" % m] = scores.notna() & (scores == scores.min())
    return df


def write_comparison(reports: Dict[str, IqaReport], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    comparison_frame(reports).to_csv(path, index=False)
    return path
