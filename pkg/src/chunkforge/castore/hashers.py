"""How a write session gets its hashing done.

``InlineHasher`` runs the reference primitives on the caller's thread (the
CPU configuration). ``PipelineHasher`` sends window scans and block digests
through an offload :class:`~chunkforge.accelerant.Pipeline`.
"""

from __future__ import annotations

from bisect import bisect_left
from typing import Optional

from .. import hashcore
from ..accelerant import Pipeline, TaskKind
from ..chunker import BoundaryFinder, ChunkerState, ChunkingPolicy
from ..hashcore import SegmentedHashParams, WindowHashParams


class _Done:
    def __init__(self, value):
        self.value = value

    def result(self):
        return self.value


class InlineHasher:
    name = "inline"

    def finder(self, policy: ChunkingPolicy) -> Optional[BoundaryFinder]:
        return None

    def submit_digests(self, blocks: list[bytes], params: SegmentedHashParams):
        return _Done([hashcore.direct_hash(b, params).value for b in blocks])


class _PendingDigests:
    def __init__(self, pipeline: Pipeline, ticket, handle):
        self._pipeline = pipeline
        self._ticket = ticket
        self._handle = handle

    def result(self) -> list[bytes]:
        try:
            return [d.value for d in self._ticket.wait()]
        finally:
            if self._handle is not None:
                self._pipeline.release_buffer(self._handle)
                self._handle = None


class BatchBoundaryFinder:
    """Scans windows a whole buffer at a time through the pipeline.

    Boundaries are facts about absolute stream offsets, so a batch stays
    valid across cuts as long as the stride grid it was computed on lines up
    with the window positions being asked about.
    """

    def __init__(self, pipeline: Pipeline, params: WindowHashParams):
        self.pipeline = pipeline
        self.params = params
        self.batches = 0
        self._lo = 0
        self._hi = -1
        self._bounds: list[int] = []

    def _covers(self, lo: int, hi: int) -> bool:
        return self._lo <= lo and hi <= self._hi and (lo - self._lo) % self.params.stride == 0

    def _scan(self, state: ChunkerState, lo: int) -> None:
        a = lo - state.chunk_start
        n = len(state.pending) - a
        handle = self.pipeline.acquire_buffer(n)
        try:
            handle.write(memoryview(state.pending)[a:])
            res = self.pipeline.run(TaskKind.WINDOW_HASH_BATCH, handle, self.params)
        finally:
            self.pipeline.release_buffer(handle)
        self.batches += 1
        self._lo = lo
        self._hi = lo + (len(res) - 1) * self.params.stride
        self._bounds = [lo + b for b in res.boundaries]

    def __call__(self, state: ChunkerState, lo: int, hi: int, stride: int) -> Optional[int]:
        if not self._covers(lo, hi):
            self._scan(state, lo)
        k = bisect_left(self._bounds, lo)
        if k < len(self._bounds) and self._bounds[k] <= hi:
            return self._bounds[k]
        return None


class PipelineHasher:
    name = "pipeline"

    def __init__(self, pipeline: Pipeline):
        self.pipeline = pipeline

    def finder(self, policy: ChunkingPolicy) -> Optional[BoundaryFinder]:
        if policy.is_fixed:
            return None
        return BatchBoundaryFinder(self.pipeline, policy.window)

    def submit_digests(self, blocks: list[bytes], params: SegmentedHashParams):
        if not blocks:
            return _Done([])
        total = sum(len(b) for b in blocks)
        handle = self.pipeline.acquire_buffer(total)
        pos = 0
        for b in blocks:
            handle.buf[pos : pos + len(b)] = b
            pos += len(b)
        handle.used = total
        ticket = self.pipeline.submit(
            TaskKind.DIRECT_HASH_BATCH, handle, params, lengths=tuple(len(b) for b in blocks)
        )
        return _PendingDigests(self.pipeline, ticket, handle)
