"""Concurrency limits for CPU-bound work offloaded from the event loop, using asyncio.Semaphore."""

import asyncio
from dataclasses import dataclass
from typing import Any, Callable, Optional


@dataclass
class WorkerLimits:
    """
    Worker limits configuration.

    Attributes:
        max_workers: Maximum number of jobs (image scoring, PNG encoding) running in threads at once
        max_pending_frames: Maximum number of decoded frames held in memory waiting to be written
    """
    max_workers: int = 4
    max_pending_frames: int = 8

    def __post_init__(self):
        if self.max_workers < 1 or self.max_pending_frames < 1:
            raise ValueError("Worker limits must be >= 1")


class WorkerLimitManager:
    """
    Bounds thread-offloaded work with asyncio.Semaphore.

    Каждый кадр/изображение обрабатывается в отдельном потоке через asyncio.to_thread,
    семафор ограничивает, сколько таких задач выполняется одновременно.
    Если лимит достигнут, корутина ждёт (не блокируя event loop).

        limits = WorkerLimitManager(WorkerLimits(max_workers=2))
        score = await limits.run(piqe_score, image)

    Semaphores are bound to the running loop lazily, so one manager can be reused
    across several asyncio.run() calls (CLI commands, tests).
    """

    def __init__(self, limits: Optional[WorkerLimits] = None):
        self.limits = limits or WorkerLimits()
        self._loop: Optional[asyncio.AbstractEventLoop] = None
        self._worker_semaphore: Optional[asyncio.Semaphore] = None
        self._frame_semaphore: Optional[asyncio.Semaphore] = None

    def _bind(self) -> None:
        loop = asyncio.get_running_loop()
        if loop is not self._loop:
            self._loop = loop
            self._worker_semaphore = asyncio.Semaphore(self.limits.max_workers)
            self._frame_semaphore = asyncio.Semaphore(self.limits.max_pending_frames)

    def worker_slot(self) -> asyncio.Semaphore:
        """
        Semaphore for one thread-offloaded job.

            async with limits.worker_slot():
                await asyncio.to_thread(work)
        """
        self._bind()
        return self._worker_semaphore

    def frame_slot(self) -> asyncio.Semaphore:
        """Semaphore for one decoded frame that is still waiting to be encoded."""
        self._bind()
        return self._frame_semaphore

    async def run(self, func: Callable[..., Any], *args: Any, **kwargs: Any) -> Any:
        """Run func(*args, **kwargs) in a worker thread once a worker slot is free."""
        async with self.worker_slot():
            return await asyncio.to_thread(func, *args, **kwargs)

    def get_stats(self) -> dict:
        """
        Get current slot statistics.

        Returns:
            Dictionary with available/limit counts for both semaphores
        """
        return {
            "workers_available": self._worker_semaphore._value if self._worker_semaphore else self.limits.max_workers,
            "workers_limit": self.limits.max_workers,
            "frames_available": self._frame_semaphore._value if self._frame_semaphore else self.limits.max_pending_frames,
            "frames_limit": self.limits.max_pending_frames,
        }


# Default worker limits (can be overridden via configuration)
DEFAULT_LIMITS = WorkerLimits(
    max_workers=4,
    max_pending_frames=8,
)
