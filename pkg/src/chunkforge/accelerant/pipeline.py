"""Batch task pipeline: idle/outstanding/running job queues, round-robin
dispatch to per-device manager threads, pooled staging buffers and
copy-in/compute overlap.

Typical use::

    with Pipeline(PipelineConfig(devices=2)) as pipe:
        ticket = pipe.submit(TaskKind.DIRECT_HASH_BATCH, data, SegmentedHashParams())
        digests = ticket.wait()
"""

from __future__ import annotations

import itertools
import logging
import queue
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

from ..errors import ConfigError, PipelineClosed, TaskFailed
from ..hashcore import SegmentedHashParams, WindowHashParams
from .backends import Backend, Job, StageCosts, TaskKind, make_backend
from .pool import BufferHandle, BufferPool

log = logging.getLogger(__name__)

STAGES = ("pre", "copy_in", "compute", "copy_out", "post")
_STOP = object()


@dataclass
class PipelineConfig:
    devices: int = 1
    workers: int = 1
    overlap: bool = True
    reuse: bool = True
    pool_depth: int = 4
    max_buffer: int = 64 * 1024 * 1024
    backend: str = "cpu_parallel"
    costs: Optional[StageCosts] = None

    def __post_init__(self):
        if self.devices < 1:
            raise ConfigError("devices must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.pool_depth < 0:
            raise ConfigError("pool_depth must be >= 0")


@dataclass(frozen=True)
class PipelineStats:
    allocations_total: int = 0
    pool_hits: int = 0
    device_tasks: tuple[int, ...] = ()
    stage_seconds: dict = field(default_factory=dict)
    overlap_seconds: float = 0.0
    submitted: int = 0
    completed: int = 0
    failed: int = 0

    @property
    def total_tasks(self) -> int:
        return sum(self.device_tasks)

    def stage_fractions(self) -> dict:
        total = sum(self.stage_seconds.values()) or 1.0
        return {k: v / total for k, v in self.stage_seconds.items()}


class Ticket:
    """Handle for one submitted task."""

    def __init__(self, task_id: int):
        self.id = task_id
        self._done = threading.Event()
        self._result: Any = None
        self._error: Optional[BaseException] = None
        self._settled = False

    def _settle(self, result=None, error=None) -> None:
        if self._settled:
            raise RuntimeError(f"task {self.id} completed twice")
        self._settled = True
        self._result, self._error = result, error
        self._done.set()

    def done(self) -> bool:
        return self._done.is_set()

    @property
    def error(self) -> Optional[BaseException]:
        return self._error

    def wait(self, timeout: Optional[float] = None):
        if not self._done.wait(timeout):
            raise TimeoutError(f"task {self.id} still running after {timeout}s")
        if self._error is not None:
            raise TaskFailed(f"task {self.id} failed: {self._error}") from self._error
        return self._result

    def __repr__(self):
        return f"<Ticket {self.id} done={self.done()}>"


class JobQueues:
    """idle (recycled job shells), outstanding (FIFO) and running sets."""

    def __init__(self, prealloc: int = 0):
        self.lock = threading.Condition()
        self.idle: deque[Job] = deque(Job() for _ in range(prealloc))
        self.outstanding: deque[Job] = deque()
        self.running: dict[int, Job] = {}
        self.created = prealloc

    def take_idle(self) -> Job:
        with self.lock:
            if self.idle:
                return self.idle.popleft()
            self.created += 1
        return Job()

    def enqueue(self, job: Job) -> None:
        with self.lock:
            self.outstanding.append(job)
            self.lock.notify()

    def next_outstanding(self) -> Job:
        with self.lock:
            while not self.outstanding:
                self.lock.wait()
            job = self.outstanding.popleft()
            if job is not _STOP:
                self.running[job.id] = job
            return job

    def finish(self, job: Job) -> None:
        with self.lock:
            self.running.pop(job.id, None)
            job.reset()
            self.idle.append(job)

    def counts(self) -> tuple[int, int, int]:
        with self.lock:
            return len(self.idle), len(self.outstanding), len(self.running)


class _Device:
    """Manager for one backend device: a single worker, or two (stager and
    executor) when overlap is on."""

    def __init__(self, index: int, pipe: "Pipeline"):
        self.index = index
        self.pipe = pipe
        self.inbox: queue.Queue = queue.Queue(maxsize=1)
        self.handoff: queue.Queue = queue.Queue()
        self.slots = threading.Semaphore(2)
        self.free_slots = deque([0, 1])
        self.tasks = 0
        self._compute_spans: deque = deque(maxlen=4)
        self._computing_since: Optional[float] = None
        self.threads: list[threading.Thread] = []

    def start(self) -> None:
        name = f"chunkforge-dev{self.index}"
        if self.pipe.config.overlap:
            self.threads = [
                threading.Thread(target=self._stage_loop, name=name + "-in", daemon=True),
                threading.Thread(target=self._exec_loop, name=name + "-exec", daemon=True),
            ]
        else:
            self.threads = [threading.Thread(target=self._serial_loop, name=name, daemon=True)]
        for t in self.threads:
            t.start()

    # --- loops -----------------------------------------------------------
    def _serial_loop(self) -> None:
        while True:
            job = self.inbox.get()
            if job is _STOP:
                return
            self.slots.acquire()
            job.slot = self.free_slots.popleft()
            if self._front(job):
                self._back(job)

    def _stage_loop(self) -> None:
        while True:
            job = self.inbox.get()
            if job is _STOP:
                self.handoff.put(_STOP)
                return
            self.slots.acquire()
            job.slot = self.free_slots.popleft()
            if self._front(job):
                self.handoff.put(job)

    def _exec_loop(self) -> None:
        while True:
            job = self.handoff.get()
            if job is _STOP:
                return
            self._back(job)

    # --- stages ----------------------------------------------------------
    def _front(self, job: Job) -> bool:
        pipe, backend = self.pipe, self.pipe.backend
        try:
            t0 = time.perf_counter()
            pipe._pre(job)
            t1 = time.perf_counter()
            backend.copy_in(self.index, job)
            t2 = time.perf_counter()
            pipe._release_staging(job)
        except Exception as exc:  # noqa: BLE001 - any stage failure fails the task
            self._fail(job, exc)
            return False
        pipe._account("pre", t1 - t0)
        pipe._account("copy_in", t2 - t1)
        pipe._account_overlap(self._overlap_with_compute(t1, t2))
        return True

    def _back(self, job: Job) -> None:
        pipe, backend = self.pipe, self.pipe.backend
        try:
            t0 = time.perf_counter()
            self._computing_since = t0
            try:
                backend.compute(self.index, job)
            finally:
                t1 = time.perf_counter()
                self._compute_spans.append((t0, t1))
                self._computing_since = None
            backend.copy_out(self.index, job)
            t2 = time.perf_counter()
        except Exception as exc:  # noqa: BLE001
            self._fail(job, exc)
            return
        pipe._account("compute", t1 - t0)
        pipe._account("copy_out", t2 - t1)
        self._release_slot(job)
        self.tasks += 1
        pipe._complete(job, result=job.result)

    def _fail(self, job: Job, exc: BaseException) -> None:
        self.pipe._release_staging(job)
        self._release_slot(job)
        self.tasks += 1
        self.pipe._complete(job, error=exc)

    def _release_slot(self, job: Job) -> None:
        if job.slot is not None:
            self.free_slots.append(job.slot)
            job.slot = None
            self.slots.release()

    def _overlap_with_compute(self, start: float, end: float) -> float:
        spans = list(self._compute_spans)
        if self._computing_since is not None:
            spans.append((self._computing_since, end))
        return sum(max(0.0, min(end, e) - max(start, s)) for s, e in spans)


class Pipeline:
    """Master: accepts tasks, owns the queues, pool, backend and devices."""

    def __init__(self, config: Optional[PipelineConfig] = None, backend: Optional[Backend] = None):
        self.config = config or PipelineConfig()
        self.backend = backend or make_backend(self.config.backend, self.config.costs)
        self.pool = BufferPool(
            depth=self.config.pool_depth,
            max_size=self.config.max_buffer,
            reuse=self.config.reuse,
            on_allocate=self.backend.on_allocate,
        )
        self.queues = JobQueues(prealloc=self.config.pool_depth)
        self.devices = [_Device(i, self) for i in range(self.config.devices)]
        self._ids = itertools.count(1)
        self._lock = threading.Lock()
        self._stage = dict.fromkeys(STAGES, 0.0)
        self._overlap = 0.0
        self._submitted = self._completed = self._failed = 0
        self._closed = False
        self._started = False
        self._dispatcher: Optional[threading.Thread] = None

    # --- lifecycle -------------------------------------------------------
    def start(self) -> "Pipeline":
        if self._started:
            return self
        self.backend.start(self.config.devices, self.config.workers)
        for d in self.devices:
            d.start()
        self._dispatcher = threading.Thread(target=self._dispatch_loop, name="chunkforge-dispatch", daemon=True)
        self._dispatcher.start()
        self._started = True
        return self

    def close(self) -> None:
        """Stop accepting work, drain what was submitted, stop the workers."""
        with self._lock:
            if self._closed:
                return
            self._closed = True
        if self._started:
            self.queues.enqueue(_STOP)
            self._dispatcher.join()
            for d in self.devices:
                for t in d.threads:
                    t.join()
            self.backend.close()
        self.pool.close()

    def __enter__(self) -> "Pipeline":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.close()

    @property
    def closed(self) -> bool:
        return self._closed

    # --- buffers ---------------------------------------------------------
    def acquire_buffer(self, size: int) -> BufferHandle:
        return self.pool.acquire(size)

    def release_buffer(self, handle: BufferHandle) -> None:
        self.pool.release(handle)

    # --- submission ------------------------------------------------------
    def submit(
        self,
        kind: TaskKind,
        data,
        params,
        *,
        lengths: Optional[tuple[int, ...]] = None,
        callback: Optional[Callable[[Ticket], None]] = None,
    ) -> Ticket:
        """Queue a task and return immediately.

        ``data`` is either bytes-like (copied into a pooled staging buffer when
        the task is dispatched) or a :class:`BufferHandle` from
        :meth:`acquire_buffer`, which the task owns until it completes.
        """
        kind = TaskKind(kind)
        expected = SegmentedHashParams if kind == TaskKind.DIRECT_HASH_BATCH else WindowHashParams
        if not isinstance(params, expected):
            raise ConfigError(f"{kind.value} needs {expected.__name__}")
        nbytes = data.used if isinstance(data, BufferHandle) else len(memoryview(data).cast("B"))
        if nbytes <= 0:
            raise ConfigError("task input must not be empty")
        if lengths is not None:
            lengths = tuple(int(n) for n in lengths)
            if kind != TaskKind.DIRECT_HASH_BATCH or sum(lengths) != nbytes or min(lengths) <= 0:
                raise ConfigError("lengths must be positive and sum to the input size")
        with self._lock:
            if self._closed:
                raise PipelineClosed("pipeline has been shut down")
            if not self._started:
                raise PipelineClosed("pipeline not started")
            task_id = next(self._ids)
            self._submitted += 1
        if isinstance(data, BufferHandle):
            self.pool._lend(data)
        job = self.queues.take_idle()
        job.id, job.kind, job.params, job.lengths = task_id, kind, params, lengths
        job.source, job.nbytes, job.callback = data, nbytes, callback
        job.ticket = Ticket(task_id)
        self.queues.enqueue(job)
        return job.ticket

    def run(self, kind: TaskKind, data, params, **kw):
        """Submit and wait."""
        return self.submit(kind, data, params, **kw).wait()

    def direct_hash_batch(self, blocks: list, params: SegmentedHashParams = SegmentedHashParams()):
        """Digests of several blocks computed by one task."""
        lengths = tuple(len(b) for b in blocks)
        return self.run(TaskKind.DIRECT_HASH_BATCH, b"".join(blocks), params, lengths=lengths)

    # --- internals -------------------------------------------------------
    def _dispatch_loop(self) -> None:
        rr = 0
        while True:
            job = self.queues.next_outstanding()
            if job is _STOP:
                for d in self.devices:
                    d.inbox.put(_STOP)
                return
            self.devices[rr].inbox.put(job)
            rr = (rr + 1) % len(self.devices)

    def _pre(self, job: Job) -> None:
        if isinstance(job.source, BufferHandle):
            return
        handle = self.pool.acquire(job.nbytes)
        handle.write(memoryview(job.source).cast("B"))
        job.staging = handle

    def _release_staging(self, job: Job) -> None:
        if job.staging is not None:
            handle, job.staging = job.staging, None
            self.pool.release(handle)

    def _complete(self, job: Job, result=None, error=None) -> None:
        t0 = time.perf_counter()
        if isinstance(job.source, BufferHandle):
            self.pool._return(job.source)
        ticket, callback = job.ticket, job.callback
        with self._lock:
            if error is None:
                self._completed += 1
            else:
                self._failed += 1
        ticket._settle(result, error)
        if callback is not None:
            try:
                callback(ticket)
            except Exception:  # noqa: BLE001 - callbacks must not kill a device
                log.exception("completion callback for task %s raised", ticket.id)
        self.queues.finish(job)
        self._account("post", time.perf_counter() - t0)

    def _account(self, stage: str, seconds: float) -> None:
        with self._lock:
            self._stage[stage] += seconds

    def _account_overlap(self, seconds: float) -> None:
        if seconds:
            with self._lock:
                self._overlap += seconds

    def stats(self) -> PipelineStats:
        with self._lock:
            return PipelineStats(
                allocations_total=self.pool.allocations_total,
                pool_hits=self.pool.pool_hits,
                device_tasks=tuple(d.tasks for d in self.devices),
                stage_seconds=dict(self._stage),
                overlap_seconds=self._overlap,
                submitted=self._submitted,
                completed=self._completed,
                failed=self._failed,
            )
