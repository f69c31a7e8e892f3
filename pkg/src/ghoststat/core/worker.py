"""
ghoststat Frame Worker
Splits a frame range into fixed chunks, runs them on a thread pool and hands
results back in chunk order. The chunk plan depends only on M, never on the
worker count, so merged results are identical for any --threads value.
"""

import time
import uuid
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, TypeVar

from ghoststat.utils.hardware import resolve_threads

logger = logging.getLogger("ghoststat.worker")

R = TypeVar("R")

CHUNK_WORDS = 2 ** 21
MIN_CHUNK_FRAMES = 16
MAX_CHUNK_FRAMES = 4096


class JobStatus(str, Enum):
    QUEUED = "queued"
    RUNNING = "running"
    COMPLETED = "completed"
    FAILED = "failed"


@dataclass
class FrameJob:
    id: str
    name: str
    start: int
    stop: int
    status: JobStatus = JobStatus.QUEUED
    error: str = ""
    created_at: float = field(default_factory=time.time)
    started_at: float = 0.0
    completed_at: float = 0.0


def frames_per_chunk(M: int) -> int:
    """About two million pattern values per chunk, clamped to [16, 4096] frames."""
    return max(MIN_CHUNK_FRAMES, min(MAX_CHUNK_FRAMES, CHUNK_WORDS // max(1, M)))


def chunk_plan(T: int, M: int) -> List[Tuple[int, int]]:
    step = frames_per_chunk(M)
    return [(start, min(start + step, T)) for start in range(0, T, step)]


def tree_reduce(items: Sequence[R], merge: Callable[[R, R], R]) -> R:
    """Pairwise reduction that keeps the left-to-right order of items."""
    if not items:
        raise ValueError("nothing to reduce")
    level = list(items)
    while len(level) > 1:
        nxt = [merge(level[i], level[i + 1]) for i in range(0, len(level) - 1, 2)]
        if len(level) % 2:
            nxt.append(level[-1])
        level = nxt
    return level[0]


ProgressCallback = Callable[[int, int], None]


class FrameWorker:
    """Thread pool over frame chunks. numpy releases the GIL in the heavy kernels."""

    def __init__(self, threads: int = 0):
        self._threads = resolve_threads(threads)
        # in-flight chunks only
        self._jobs: Dict[str, FrameJob] = {}
        self._completed = 0
        self._failed = 0
        self._last_error = ""
        self._lock = threading.Lock()

    @property
    def threads(self) -> int:
        return self._threads

    def map_frames(
        self,
        name: str,
        T: int,
        M: int,
        fn: Callable[[int, int], R],
        on_progress: Optional[ProgressCallback] = None,
    ) -> List[R]:
        """Run fn(start, stop) over the chunk plan; results come back in frame order."""
        plan = chunk_plan(T, M)
        jobs = [
            FrameJob(id=f"fj_{uuid.uuid4().hex[:10]}", name=name, start=start, stop=stop)
            for start, stop in plan
        ]
        with self._lock:
            self._jobs.update({job.id: job for job in jobs})

        done = [0]
        total = len(jobs)

        def run(job: FrameJob) -> R:
            job.status = JobStatus.RUNNING
            job.started_at = time.time()
            try:
                result = fn(job.start, job.stop)
            except Exception as e:
                job.status = JobStatus.FAILED
                job.error = str(e)
                job.completed_at = time.time()
                with self._lock:
                    self._failed += 1
                    self._last_error = f"{name} {job.start}-{job.stop}: {e}"
                raise
            job.status = JobStatus.COMPLETED
            job.completed_at = time.time()
            with self._lock:
                self._completed += 1
                done[0] += 1
                finished = done[0]
            if on_progress:
                on_progress(finished, total)
            return result

        logger.debug("%s: %d frames in %d chunks on %d threads", name, T, total, self._threads)
        try:
            if self._threads == 1 or total == 1:
                return [run(job) for job in jobs]
            with ThreadPoolExecutor(max_workers=min(self._threads, total), thread_name_prefix="ghoststat") as pool:
                futures = [pool.submit(run, job) for job in jobs]
                return [f.result() for f in futures]
        finally:
            with self._lock:
                for job in jobs:
                    self._jobs.pop(job.id, None)

    def reduce_frames(
        self,
        name: str,
        T: int,
        M: int,
        fn: Callable[[int, int], R],
        merge: Callable[[R, R], R],
        on_progress: Optional[ProgressCallback] = None,
    ) -> R:
        return tree_reduce(self.map_frames(name, T, M, fn, on_progress), merge)

    def get_stats(self) -> Dict[str, Any]:
        """Chunk counters since construction, for run reports."""
        with self._lock:
            return {
                "threads": self._threads,
                "active": len(self._jobs),
                "completed": self._completed,
                "failed": self._failed,
                "last_error": self._last_error,
            }
