"""Timeout policy for the external video decoder subprocess."""

import asyncio
from dataclasses import dataclass


@dataclass
class DecoderTimeouts:
    """
    Configurable timeouts around the decoder subprocess.

    All timeouts are in milliseconds. Use asyncio.wait_for() to apply them.

    Attributes:
        probe_ms: Timeout for the stream probe (ffprobe) to finish (default: 10s)
        read_ms: Timeout for reading one decoded frame from the decoder pipe (default: 15s)
        total_ms: Total timeout for decoding a whole source (default: 1h)
    """

    probe_ms: int = 10000
    read_ms: int = 15000
    total_ms: int = 3600000

    def probe_timeout(self) -> float:
        """Return probe timeout in seconds for asyncio.wait_for()."""
        return self.probe_ms / 1000.0

    def read_timeout(self) -> float:
        """Return per-frame read timeout in seconds for asyncio.wait_for()."""
        return self.read_ms / 1000.0

    def total_timeout(self) -> float:
        """Return total decode timeout in seconds for asyncio.wait_for()."""
        return self.total_ms / 1000.0

    async def with_probe_timeout(self, coro):
        """
        Wrap a coroutine with the probe timeout.

        Args:
            coro: Coroutine to execute (typically process.communicate() of ffprobe).
                  Pass the coroutine itself, not the awaited result.

        Raises:
            asyncio.TimeoutError: If probing takes longer than probe_ms
        """
        return await asyncio.wait_for(coro, timeout=self.probe_timeout())

    async def with_read_timeout(self, coro):
        """
        Wrap a coroutine with the per-frame read timeout.

        Raises:
            asyncio.TimeoutError: If one frame takes longer than read_ms to arrive
        """
        return await asyncio.wait_for(coro, timeout=self.read_timeout())

    async def with_total_timeout(self, coro):
        """
        Wrap a coroutine with the total timeout (the whole decode of one source).

        Raises:
            asyncio.TimeoutError: If decoding takes longer than total_ms
        """
        return await asyncio.wait_for(coro, timeout=self.total_timeout())


# Default decoder timeouts (can be overridden via configuration)
DEFAULT_DECODER_TIMEOUTS = DecoderTimeouts()
