"""
Match manager: fans per-target matching out over a pool of queue workers.
"""

import asyncio
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from config import MAX_WORKERS
from errors import PositioningError
from models import MatchResult, TargetCase, Window

logger = logging.getLogger(__name__)

Matcher = Callable[[Window], MatchResult]


class MatchManager:
    """Queue-based matcher pool. Must be created inside a running event loop."""

    def __init__(self, matcher: Matcher, max_workers: int = MAX_WORKERS):
        self.matcher = matcher
        self.max_workers = max(1, max_workers)
        self.queue: asyncio.Queue = asyncio.Queue()
        self.lock = asyncio.Lock()

        self.processing = 0
        self.job_counter = 0
        self.results: Dict[str, MatchResult] = {}
        self.failures: Dict[str, BaseException] = {}

        self._executor = ThreadPoolExecutor(
            max_workers=self.max_workers, thread_name_prefix="matcher"
        )
        self._workers: List[asyncio.Task] = [
            asyncio.create_task(self._worker_loop(idx)) for idx in range(self.max_workers)
        ]

    async def add_job(self, case_id: str, target: Window) -> int:
        """Queue one target; returns the job number."""
        async with self.lock:
            self.job_counter += 1
            job_id = self.job_counter
        await self.queue.put((job_id, case_id, target))
        return job_id

    async def _worker_loop(self, worker_id: int) -> None:
        """Consume queue entries until sentinel is received."""
        loop = asyncio.get_running_loop()
        while True:
            item = await self.queue.get()
            if item is None:
                self.queue.task_done()
                break

            job_id, case_id, target = item
            await self._mark_job_started()
            try:
                result = await loop.run_in_executor(self._executor, self.matcher, target)
                async with self.lock:
                    self.results[case_id] = result
            except PositioningError as error:
                logger.warning("Matching failed (case=%s): %s", case_id, error)
                async with self.lock:
                    self.failures[case_id] = error
            except Exception as error:
                logger.exception("Unexpected worker error (worker=%s job=%s)", worker_id, job_id)
                async with self.lock:
                    self.failures[case_id] = error
            finally:
                await self._mark_job_finished()
                self.queue.task_done()

    async def _mark_job_started(self) -> None:
        async with self.lock:
            self.processing += 1

    async def _mark_job_finished(self) -> None:
        async with self.lock:
            if self.processing > 0:
                self.processing -= 1

    async def join(self) -> None:
        await self.queue.join()

    def get_active_count(self) -> int:
        return self.processing

    def get_queue_size(self) -> int:
        return self.queue.qsize()

    async def stop(self) -> None:
        """Stop worker tasks gracefully and release the executor."""
        for _ in self._workers:
            await self.queue.put(None)

        for worker in self._workers:
            try:
                await worker
            except Exception:
                logger.exception("Worker stop failed")

        self._executor.shutdown(wait=True)


async def _run_pool(
    matcher: Matcher, cases: Sequence[TargetCase], max_workers: int
) -> Tuple[Dict[str, MatchResult], Dict[str, BaseException]]:
    manager = MatchManager(matcher, max_workers=max_workers)
    try:
        for case in cases:
            await manager.add_job(case.case_id, case.window)
        await manager.join()
    finally:
        await manager.stop()
    return manager.results, manager.failures


def run_matches(
    matcher: Matcher, cases: Sequence[TargetCase], max_workers: int = MAX_WORKERS
) -> Dict[str, MatchResult]:
    """
    Match every case and return results keyed by case id.

    With one worker the cases run inline. Otherwise they go through a
    `MatchManager`; the first failure in case order is re-raised so errors
    do not depend on scheduling.
    """
    if max_workers <= 1:
        return {case.case_id: matcher(case.window) for case in cases}

    results, failures = asyncio.run(_run_pool(matcher, cases, max_workers))
    first_failure: Optional[BaseException] = None
    for case in cases:
        if case.case_id in failures:
            first_failure = failures[case.case_id]
            break
    if first_failure is not None:
        raise first_failure
    return {case.case_id: results[case.case_id] for case in cases}
