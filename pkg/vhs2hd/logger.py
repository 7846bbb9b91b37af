"""
Async logging via aiologger for the command layer (frame extraction, training
loop, IQA scoring). Every record carries the command name and a run id taken
from context variables; the level comes from `logging.level` in the config.
"""

import contextvars
import sys
import uuid
from contextlib import contextmanager
from typing import Iterator, Optional

from aiologger import Logger
from aiologger.formatters.base import Formatter
from aiologger.handlers.streams import AsyncStreamHandler
from aiologger.levels import LogLevel

run_id_ctx: contextvars.ContextVar[str] = contextvars.ContextVar("run_id", default="")
command_ctx: contextvars.ContextVar[str] = contextvars.ContextVar("command", default="")

DEFAULT_FMT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s%(run_fmt)s"

_root_logger: Optional[Logger] = None


class RunContextFormatter(Formatter):
    """Appends ` cmd=<command> run_id=<id>` for whatever is set in context."""

    def format(self, record):
        parts = []
        if command_ctx.get():
            parts.append("cmd=" + command_ctx.get())
        if run_id_ctx.get():
            parts.append("run_id=" + run_id_ctx.get())
        setattr(record, "run_fmt", (" " + " ".join(parts)) if parts else "")
        return super().format(record)


class _LoggerProxy:
    """
    Resolves the root logger when a message is sent, not when the module is
    imported. Modules keep `logger = get_logger()` at import time; until
    setup_aiologger() runs (library use, tests) every call is a no-op.
    """

    async def _emit(self, level: str, msg, *args, **kwargs):
        if _root_logger is None:
            return None
        return await getattr(_root_logger, level)(msg, *args, **kwargs)

    async def debug(self, msg, *args, **kwargs):
        return await self._emit("debug", msg, *args, **kwargs)

    async def info(self, msg, *args, **kwargs):
        return await self._emit("info", msg, *args, **kwargs)

    async def warning(self, msg, *args, **kwargs):
        return await self._emit("warning", msg, *args, **kwargs)

    async def error(self, msg, *args, **kwargs):
        return await self._emit("error", msg, *args, **kwargs)

    async def shutdown(self):
        """Flush and drop the root logger; the next command sets up its own."""
        global _root_logger
        logger, _root_logger = _root_logger, None
        if logger is not None:
            await logger.shutdown()


_logger_proxy = _LoggerProxy()


def _level_from_str(level: str) -> LogLevel:
    return getattr(LogLevel, (level or "info").strip().upper(), LogLevel.INFO)


def setup_aiologger(level: str = "info", name: str = "vhs2hd") -> Logger:
    """
    Create the root aiologger Logger writing to stderr (stdout carries command
    results). Must be called inside the running loop; cli.run_command does it.
    """
    global _root_logger
    handler = AsyncStreamHandler(
        stream=sys.stderr,
        level=LogLevel.DEBUG,
        formatter=RunContextFormatter(fmt=DEFAULT_FMT),
    )
    _root_logger = Logger(name=name, level=_level_from_str(level))
    _root_logger.add_handler(handler)
    return _root_logger


def get_logger() -> _LoggerProxy:
    return _logger_proxy


def new_run_id() -> str:
    return uuid.uuid4().hex[:12]


@contextmanager
def run_context(command: str, run_id: Optional[str] = None) -> Iterator[str]:
    """Set command and run id for everything logged inside the block."""
    run_id = run_id or new_run_id()
    cmd_token = command_ctx.set(command)
    run_token = run_id_ctx.set(run_id)
    try:
        yield run_id
    finally:
        run_id_ctx.reset(run_token)
        command_ctx.reset(cmd_token)
