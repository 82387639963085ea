# Copyright AGNTCY Contributors (https://github.com/agntcy)
# SPDX-License-Identifier: Apache-2.0

"""
Time sources.

Every component reads time through a `Clock`. Services use `SystemClock`; the
workflow simulator shares one `VirtualClock` across all components so expiry
scenarios run in milliseconds and deterministically.
"""

import asyncio
import heapq
import itertools
import logging
import time
from typing import Protocol

logger = logging.getLogger(__name__)


class Clock(Protocol):
    def now(self) -> int: ...

    async def sleep(self, seconds: float) -> None: ...


class SystemClock:
    """Wall-clock time in integer seconds since the epoch."""

    def now(self) -> int:
        return int(time.time())

    async def sleep(self, seconds: float) -> None:
        await asyncio.sleep(seconds)


class VirtualClock:
    """
    A clock that advances only when every participant is asleep.

    Each job (and each scheduled fault) joins the clock as a participant. When
    all active participants are blocked in `sleep`, time jumps to the earliest
    wake-up and exactly those sleepers resume. Work that awaits I/O does not
    count as asleep, so time never moves under an in-flight request.
    """

    def __init__(self, start: int = 1_700_000_000):
        self._now = start
        self._participants = 0
        self._sleepers: list[tuple[int, int, asyncio.Future[None]]] = []
        self._seq = itertools.count()

    def now(self) -> int:
        return self._now

    def advance(self, seconds: int) -> None:
        """Move time forward directly; only valid when nobody is participating."""
        if self._participants:
            raise RuntimeError("advance() with active participants, use sleep()")
        self._now += seconds

    def join(self) -> None:
        self._participants += 1

    def leave(self) -> None:
        self._participants -= 1
        self._maybe_advance()

    async def sleep(self, seconds: float) -> None:
        if self._participants == 0:
            self._now += int(seconds)
            return

        loop = asyncio.get_running_loop()
        waiter: asyncio.Future[None] = loop.create_future()
        wake_at = self._now + int(seconds)
        heapq.heappush(self._sleepers, (wake_at, next(self._seq), waiter))
        self._maybe_advance()
        await waiter

    def _maybe_advance(self) -> None:
        if not self._sleepers or len(self._sleepers) < self._participants:
            return

        wake_at = self._sleepers[0][0]
        if wake_at > self._now:
            logger.debug(
                "Virtual clock advance", extra={"from_time": self._now, "to_time": wake_at}
            )
            self._now = wake_at
        while self._sleepers and self._sleepers[0][0] <= self._now:
            _, _, waiter = heapq.heappop(self._sleepers)
            if not waiter.done():
                waiter.set_result(None)
