"""
Minimal metrics for training and evaluation: counters and step duration.
Rendered in Prometheus text format; the trainer drops it next to its checkpoints.
"""

import threading
import time
from pathlib import Path
from typing import Dict, Union

# All counters and sums; guarded by _lock (losses and IQA workers update from threads).
_lock = threading.Lock()
_steps_total: Dict[str, int] = {}
_step_aborts_total: Dict[str, int] = {}
_log_guard_clamps_total: int = 0
_step_duration_sum: float = 0.0
_step_duration_count: int = 0
_checkpoints_written_total: int = 0
_frames_written_total: int = 0
_iqa_images_total: Dict[str, int] = {"ok": 0, "error": 0}


def reset() -> None:
    """Zero every counter (used between runs in one process and by tests)."""
    global _log_guard_clamps_total, _step_duration_sum, _step_duration_count
    global _checkpoints_written_total, _frames_written_total
    with _lock:
        _steps_total.clear()
        _step_aborts_total.clear()
        _log_guard_clamps_total = 0
        _step_duration_sum = 0.0
        _step_duration_count = 0
        _checkpoints_written_total = 0
        _frames_written_total = 0
        _iqa_images_total.update({"ok": 0, "error": 0})


def record_step_start() -> float:
    """Returns start time for duration."""
    return time.monotonic()


def record_step_done(kind: str, start_time: float) -> None:
    """kind: 'style' or 'resolution'."""
    global _step_duration_sum, _step_duration_count
    duration = time.monotonic() - start_time
    with _lock:
        _steps_total[kind] = _steps_total.get(kind, 0) + 1
        _step_duration_sum += duration
        _step_duration_count += 1


def record_step_abort(kind: str) -> None:
    with _lock:
        _step_aborts_total[kind] = _step_aborts_total.get(kind, 0) + 1


def record_log_guard(clamped: int) -> None:
    """Number of probabilities clamped before a log() in a vanilla GAN loss."""
    global _log_guard_clamps_total
    if clamped <= 0:
        return
    with _lock:
        _log_guard_clamps_total += clamped


def record_checkpoint() -> None:
    global _checkpoints_written_total
    with _lock:
        _checkpoints_written_total += 1


def record_frames_written(count: int) -> None:
    global _frames_written_total
    with _lock:
        _frames_written_total += count


def record_iqa_image(ok: bool) -> None:
    with _lock:
        key = "ok" if ok else "error"
        _iqa_images_total[key] = _iqa_images_total.get(key, 0) + 1


def log_guard_clamps() -> int:
    with _lock:
        return _log_guard_clamps_total


def steps_total(kind: str) -> int:
    with _lock:
        return _steps_total.get(kind, 0)


def step_aborts(kind: str) -> int:
    with _lock:
        return _step_aborts_total.get(kind, 0)


def _render_prometheus_sync() -> str:
    """Render from current in-memory state (caller must hold _lock)."""
    lines = []
    lines.append("# TYPE vhs2hd_steps_total counter")
    for kind in sorted(set(_steps_total) | {"style", "resolution"}):
        lines.append(f'vhs2hd_steps_total{{kind="{kind}"}} {_steps_total.get(kind, 0)}')
    lines.append("# TYPE vhs2hd_step_aborts_total counter")
    for kind in sorted(set(_step_aborts_total) | {"style", "resolution"}):
        lines.append(f'vhs2hd_step_aborts_total{{kind="{kind}"}} {_step_aborts_total.get(kind, 0)}')
    lines.append("# TYPE vhs2hd_log_guard_clamps_total counter")
    lines.append(f"vhs2hd_log_guard_clamps_total {_log_guard_clamps_total}")
    lines.append("# TYPE vhs2hd_step_duration_seconds summary")
    lines.append(f"vhs2hd_step_duration_seconds_sum {_step_duration_sum:.6f}")
    lines.append(f"vhs2hd_step_duration_seconds_count {_step_duration_count}")
    lines.append("# TYPE vhs2hd_checkpoints_written_total counter")
    lines.append(f"vhs2hd_checkpoints_written_total {_checkpoints_written_total}")
    lines.append("# TYPE vhs2hd_frames_written_total counter")
    lines.append(f"vhs2hd_frames_written_total {_frames_written_total}")
    lines.append("# TYPE vhs2hd_iqa_images_total counter")
    for status in ["ok", "error"]:
        lines.append(f'vhs2hd_iqa_images_total{{status="{status}"}} {_iqa_images_total.get(status, 0)}')
    return "\n".join(lines) + "\n"


def render_prometheus() -> str:
    """Return current metrics in Prometheus text format (thread-safe)."""
    with _lock:
        return _render_prometheus_sync()


def write_textfile(path: Union[str, Path]) -> None:
    """Write metrics for a node-exporter style textfile collector (temp + rename)."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(render_prometheus(), encoding="utf-8")
    tmp.replace(path)
