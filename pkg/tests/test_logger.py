"""Tests for the run context and the logger proxy."""

import pytest

from vhs2hd import logger as logger_module
from vhs2hd.logger import command_ctx, get_logger, new_run_id, run_context, run_id_ctx, setup_aiologger


class TestRunContext:
    """Tests for run_context."""

    def test_sets_and_resets(self):
        with run_context("train", run_id="abc123") as run_id:
            assert run_id == "abc123"
            assert command_ctx.get() == "train"
            assert run_id_ctx.get() == "abc123"
        assert command_ctx.get() == ""
        assert run_id_ctx.get() == ""

    def test_fresh_ids(self):
        ids = {new_run_id() for _ in range(10)}
        assert len(ids) == 10
        assert all(len(i) == 12 for i in ids)


class TestLoggerProxy:
    """Tests for the import-time logger proxy."""

    @pytest.mark.asyncio
    async def test_noop_without_setup(self):
        assert logger_module._root_logger is None
        assert await get_logger().info("nothing configured") is None

    @pytest.mark.asyncio
    async def test_setup_and_shutdown(self):
        root = setup_aiologger(level="warning")
        assert logger_module._root_logger is root
        await get_logger().debug("below level")
        await get_logger().shutdown()
        assert logger_module._root_logger is None
