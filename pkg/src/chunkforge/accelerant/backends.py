"""Compute backends for the offload pipeline.

A backend owns the "device" side of a task: ``copy_in`` moves the staged
input into device memory, ``compute`` runs the hashing kernel there and
``copy_out`` materializes the result on the host. Stages of one job run in
that order; with overlap enabled the next job's ``copy_in`` may run while the
current job computes, so each device keeps two memory slots.
"""

from __future__ import annotations

import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Optional, Union

import numpy as np

from .. import hashcore
from ..errors import ConfigError
from ..hashcore import Digest, SegmentedHashParams, WindowHashParams
from . import kernels


class TaskKind(str, Enum):
    DIRECT_HASH_BATCH = "direct_hash_batch"
    WINDOW_HASH_BATCH = "window_hash_batch"


@dataclass
class WindowBatchResult:
    """Window digests for one buffer plus the offsets that are boundaries.

    Offsets are relative to the start of the task input.
    """

    offsets: np.ndarray
    digests: np.ndarray
    boundaries: list[int]
    algorithm: str = "md5"

    def entries(self) -> list[tuple[int, Digest]]:
        return [
            (int(o), Digest(self.digests[k].tobytes(), self.algorithm))
            for k, o in enumerate(self.offsets)
        ]

    def __len__(self):
        return len(self.offsets)


Params = Union[SegmentedHashParams, WindowHashParams]


@dataclass
class Job:
    """A job instance; recycled through the idle queue."""

    id: int = -1
    kind: Optional[TaskKind] = None
    params: Optional[Params] = None
    lengths: Optional[tuple[int, ...]] = None
    source: Any = None  # bytes-like or client BufferHandle
    staging: Any = None  # BufferHandle the pipeline acquired for the job
    nbytes: int = 0
    slot: int = 0
    device_data: Any = None
    device_result: Any = None
    result: Any = None
    ticket: Any = None
    callback: Any = None
    timings: dict = field(default_factory=dict)

    def reset(self) -> None:
        self.id = -1
        self.kind = self.params = self.lengths = None
        self.source = self.staging = self.device_data = None
        self.device_result = self.result = self.ticket = self.callback = None
        self.nbytes = self.slot = 0
        self.timings = {}


def _input_view(job: Job) -> memoryview:
    if job.staging is not None:
        return job.staging.view()
    return job.source.view()


def reference_compute(kind: TaskKind, data, params: Params, lengths=None):
    """Result of a task computed directly with the hashcore functions."""
    if kind == TaskKind.DIRECT_HASH_BATCH:
        view = memoryview(data).cast("B")
        out, pos = [], 0
        for n in lengths or (len(view),):
            out.append(hashcore.direct_hash(view[pos : pos + n], params))
            pos += n
        return out
    entries = list(hashcore.iter_window_hashes(data, params))
    size = hashcore.digest_size(params.algorithm)
    offsets = np.fromiter((i for i, _ in entries), dtype=np.int64, count=len(entries))
    digests = np.frombuffer(b"".join(d for _, d in entries), dtype=np.uint8).reshape(-1, size)
    boundaries = [
        i for i, d in entries if hashcore.is_boundary(d, params.boundary_bits, params.boundary_target)
    ]
    return WindowBatchResult(offsets, digests.copy(), boundaries, params.algorithm)


class Backend:
    """Base class; subclasses override the three device stages."""

    name = "base"

    def start(self, devices: int, workers: int) -> None:
        self.devices = devices
        self.workers = workers

    def close(self) -> None:
        pass

    def on_allocate(self, nbytes: int) -> None:
        """Hook charged for every fresh staging-buffer allocation."""

    def copy_in(self, device: int, job: Job) -> None:
        job.device_data = bytes(_input_view(job))

    def compute(self, device: int, job: Job) -> None:
        job.device_result = reference_compute(job.kind, job.device_data, job.params, job.lengths)

    def copy_out(self, device: int, job: Job) -> None:
        job.result = job.device_result
        job.device_data = job.device_result = None


class ReferenceBackend(Backend):
    """Stages realized directly on top of the hashcore reference functions."""

    name = "reference"


class CpuParallelBackend(Backend):
    """Device memory is a pair of numpy slots per device; compute spreads the
    work of one task over a private worker group of ``workers`` threads."""

    name = "cpu_parallel"

    def start(self, devices: int, workers: int) -> None:
        super().start(devices, workers)
        self._slots = [[np.empty(0, dtype=np.uint8), np.empty(0, dtype=np.uint8)] for _ in range(devices)]
        self._groups = [ThreadPoolExecutor(max_workers=max(1, workers)) for _ in range(devices)]
        kernels.warm_up()

    def close(self) -> None:
        for g in getattr(self, "_groups", []):
            g.shutdown(wait=True)

    def copy_in(self, device: int, job: Job) -> None:
        src = _input_view(job)
        n = len(src)
        slot = self._slots[device][job.slot]
        if slot.shape[0] < n:
            slot = np.empty(max(n, 2 * slot.shape[0]), dtype=np.uint8)
            self._slots[device][job.slot] = slot
        slot[:n] = np.frombuffer(src, dtype=np.uint8)
        job.device_data = slot[:n]

    def compute(self, device: int, job: Job) -> None:
        data = job.device_data
        group = self._groups[device]
        if job.kind == TaskKind.DIRECT_HASH_BATCH:
            job.device_result = self._direct(data, job.params, job.lengths, group)
        else:
            job.device_result = self._windows(data, job.params, group)

    def _direct(self, data: np.ndarray, params: SegmentedHashParams, lengths, group):
        seg = params.segment_size
        blocks, pos = [], 0
        for n in lengths or (data.shape[0],):
            blocks.append((pos, n))
            pos += n
        # one flat list of segments across every block, hashed by the worker group
        spans = [(b, s, min(seg, n - (s - p))) for b, (p, n) in enumerate(blocks) for s in range(p, p + n, seg)]
        mem = memoryview(data)
        ctor = hashcore.ALGORITHMS[params.algorithm][0]
        step = -(-len(spans) // self.workers) if spans else 1
        parts = [spans[i : i + step] for i in range(0, len(spans), step)]

        def run(part):
            return [ctor(mem[s : s + n]).digest() for _, s, n in part]

        if len(parts) > 1 and group is not None:
            hashed = [d for r in group.map(run, parts) for d in r]
        else:
            hashed = [d for p in parts for d in run(p)]
        per_block: list[list[bytes]] = [[] for _ in blocks]
        for (b, _, _), d in zip(spans, hashed):
            per_block[b].append(d)
        # final step stays sequential on the host
        return [hashcore.combine_segments(p, params.algorithm) for p in per_block]

    def _windows(self, data: np.ndarray, params: WindowHashParams, group):
        count = hashcore.window_count(data.shape[0], params.window, params.stride)
        if params.algorithm != "md5":
            raw = bytes(data)
            return reference_compute(TaskKind.WINDOW_HASH_BATCH, raw, params)
        out = np.empty((count, 16), dtype=np.uint8)
        step = max(kernels.LANES, -(-count // self.workers))
        ranges = [(k, min(step, count - k)) for k in range(0, count, step)]

        def run(r):
            k, n = r
            kernels.md5_windows(data, k * params.stride, n, params.stride, params.window, out[k : k + n])

        if len(ranges) > 1 and group is not None:
            list(group.map(run, ranges))
        else:
            for r in ranges:
                run(r)
        return out

    def copy_out(self, device: int, job: Job) -> None:
        job.result = _materialize(job.kind, job.params, job.device_result)
        job.device_data = job.device_result = None

    def solve(self, kind: TaskKind, data, params: Params, lengths=None):
        """Compute a task synchronously on the calling thread."""
        arr = np.frombuffer(data, dtype=np.uint8) if not isinstance(data, np.ndarray) else data
        if kind == TaskKind.DIRECT_HASH_BATCH:
            raw = self._direct(arr, params, lengths, None)
        else:
            raw = self._windows(arr, params, None)
        return _materialize(kind, params, raw)


def _materialize(kind: TaskKind, params: Params, res):
    if kind == TaskKind.DIRECT_HASH_BATCH:
        return [Digest(d, params.algorithm) for d in res]
    if isinstance(res, WindowBatchResult):
        return res
    flags = kernels.boundary_flags(res, params.boundary_bits, params.boundary_target)
    offsets = np.arange(res.shape[0], dtype=np.int64) * params.stride
    return WindowBatchResult(offsets, res, offsets[flags].tolist(), params.algorithm)


class InstantOracleBackend(Backend):
    """Answers from a memo table so compute takes (near) zero time.

    Results are learned out of band: the first time an input is seen it is
    computed with the reference functions and recorded (counted in
    ``misses``); later identical tasks are answered by lookup.
    """

    name = "instant"

    def __init__(self):
        self._teacher = CpuParallelBackend()
        self._teacher.workers = 1
        self._memo: dict = {}
        self._lock = threading.Lock()
        self.misses = 0
        self.hits = 0

    @staticmethod
    def _key(kind, params, lengths, data: bytes):
        return (kind, params, lengths, data)

    def prime(self, kind: TaskKind, data, params: Params, lengths=None) -> None:
        data = bytes(data)
        result = self._teacher.solve(kind, data, params, lengths)
        with self._lock:
            self._memo[self._key(kind, params, lengths, data)] = result

    def compute(self, device: int, job: Job) -> None:
        key = self._key(job.kind, job.params, job.lengths, job.device_data)
        with self._lock:
            found = self._memo.get(key)
            if found is not None:
                self.hits += 1
        if found is None:
            found = self._teacher.solve(job.kind, job.device_data, job.params, job.lengths)
            with self._lock:
                self._memo[key] = found
                self.misses += 1
        job.device_result = found

    def forget(self) -> None:
        with self._lock:
            self._memo.clear()


@dataclass(frozen=True)
class StageCosts:
    """Simulated per-stage delays in seconds (fixed part plus per-MiB part)."""

    alloc: float = 0.0
    copy_in: float = 0.0
    compute: float = 0.0
    copy_out: float = 0.0
    alloc_per_mib: float = 0.0
    copy_in_per_mib: float = 0.0
    compute_per_mib: float = 0.0
    copy_out_per_mib: float = 0.0


def _sleep(seconds: float) -> None:
    if seconds > 0:
        time.sleep(seconds)


class SimulatedBackend(Backend):
    """Wraps another backend and adds deterministic stage delays."""

    def __init__(self, inner: Backend, costs: StageCosts):
        self.inner = inner
        self.costs = costs
        self.name = f"simulated({inner.name})"

    def start(self, devices: int, workers: int) -> None:
        super().start(devices, workers)
        self.inner.start(devices, workers)

    def close(self) -> None:
        self.inner.close()

    def on_allocate(self, nbytes: int) -> None:
        _sleep(self.costs.alloc + self.costs.alloc_per_mib * nbytes / 2**20)
        self.inner.on_allocate(nbytes)

    def copy_in(self, device: int, job: Job) -> None:
        _sleep(self.costs.copy_in + self.costs.copy_in_per_mib * job.nbytes / 2**20)
        self.inner.copy_in(device, job)

    def compute(self, device: int, job: Job) -> None:
        _sleep(self.costs.compute + self.costs.compute_per_mib * job.nbytes / 2**20)
        self.inner.compute(device, job)

    def copy_out(self, device: int, job: Job) -> None:
        _sleep(self.costs.copy_out + self.costs.copy_out_per_mib * job.nbytes / 2**20)
        self.inner.copy_out(device, job)


BACKENDS = {
    "cpu_parallel": CpuParallelBackend,
    "instant": InstantOracleBackend,
    "reference": ReferenceBackend,
}


def make_backend(name: str, costs: Optional[StageCosts] = None) -> Backend:
    try:
        backend = BACKENDS[name]()
    except KeyError:
        raise ConfigError(f"unknown backend {name!r}; choose from {sorted(BACKENDS)}") from None
    if costs is not None:
        backend = SimulatedBackend(backend, costs)
    return backend
