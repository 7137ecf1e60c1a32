"""Fixed-size and content-defined chunking with streaming carry-over.

A content-defined cut is placed at the *end* of a boundary window. Windows
are only evaluated once the chunk has reached ``min_chunk`` bytes, and a cut
is forced at ``max_chunk``. The pending buffer holds the whole in-progress
chunk, so bytes may arrive in any partition and the emitted chunks are the
same as chunking the concatenation in one call.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable, Optional

from .errors import ConfigError
from .hashcore import (
    ALGORITHMS,
    BytesLike,
    Digest,
    SegmentedHashParams,
    WindowHashParams,
    direct_hash,
)

FIXED = "fixed"
CONTENT_DEFINED = "content_defined"

KiB = 1024
MiB = 1024 * KiB


@dataclass(frozen=True)
class ChunkingPolicy:
    variant: str
    fixed_size: int = MiB
    window: WindowHashParams = WindowHashParams()
    min_chunk: int = 2 * KiB
    max_chunk: int = 64 * KiB
    segment: SegmentedHashParams = SegmentedHashParams()

    def __post_init__(self):
        if self.variant not in (FIXED, CONTENT_DEFINED):
            raise ConfigError(f"unknown chunking variant {self.variant!r}")
        if self.fixed_size <= 0:
            raise ConfigError("fixed_size must be positive")
        if not 0 < self.min_chunk <= self.max_chunk:
            raise ConfigError("need 0 < min_chunk <= max_chunk")
        if self.window.window > self.max_chunk:
            raise ConfigError("window must not exceed max_chunk")

    @property
    def is_fixed(self) -> bool:
        return self.variant == FIXED

    @property
    def largest_chunk(self) -> int:
        return self.fixed_size if self.is_fixed else self.max_chunk

    @classmethod
    def fixed(cls, size: int = MiB, segment: SegmentedHashParams = SegmentedHashParams()):
        return cls(FIXED, fixed_size=size, min_chunk=size, max_chunk=size, segment=segment)

    @classmethod
    def content_defined(
        cls,
        window: int = 48,
        boundary_bits: int = 13,
        boundary_target: int = 0,
        stride: int = 1,
        min_chunk: int = 2 * KiB,
        max_chunk: int = 64 * KiB,
        segment: SegmentedHashParams = SegmentedHashParams(),
        algorithm: str = "md5",
    ):
        wp = WindowHashParams(window, stride, boundary_bits, boundary_target, algorithm)
        return cls(CONTENT_DEFINED, window=wp, min_chunk=min_chunk, max_chunk=max_chunk, segment=segment)

    @classmethod
    def large_blocks(cls):
        """256 KiB..4 MiB chunks averaging roughly 1.2 MiB (48-byte windows
        every 64 bytes, 14 boundary bits)."""
        return cls.content_defined(
            window=48, boundary_bits=14, stride=64, min_chunk=256 * KiB, max_chunk=4 * MiB
        )

    def expected_chunk_size(self) -> float:
        """Analytic mean chunk length for uniformly random input."""
        if self.is_fixed:
            return float(self.fixed_size)
        wp = self.window
        first_cut = max(self.min_chunk, wp.window)
        p = 2.0 ** -wp.boundary_bits
        q = 1.0 - p
        # candidate cuts first_cut + j*stride, j < n; geometric first success, else forced
        n = (self.max_chunk - first_cut) // wp.stride + 1
        e_j = q * (1 - n * q ** (n - 1) + (n - 1) * q**n) / p
        return first_cut * (1 - q**n) + wp.stride * e_j + q**n * self.max_chunk


@dataclass(frozen=True)
class Chunk:
    stream_offset: int
    length: int
    digest: Digest

    @property
    def end(self) -> int:
        return self.stream_offset + self.length


@dataclass
class ChunkerState:
    pending: bytearray = field(default_factory=bytearray)
    chunk_start: int = 0
    next_window: int = 0
    stream_len: int = 0


# (state, lo, hi, stride) -> first boundary window start in lo, lo+stride, ... <= hi
BoundaryFinder = Callable[[ChunkerState, int, int, int], Optional[int]]


def inline_finder(params: WindowHashParams) -> BoundaryFinder:
    """Evaluate windows one at a time, stopping at the first boundary."""
    ctor = ALGORITHMS[params.algorithm][0]
    w = params.window
    mask = params.mask
    target = params.boundary_target

    def find(state: ChunkerState, lo: int, hi: int, stride: int) -> Optional[int]:
        base = state.chunk_start
        with memoryview(state.pending) as view:
            for i in range(lo - base, hi - base + 1, stride):
                d = ctor(view[i : i + w]).digest()
                if int.from_bytes(d[:4], "little") & mask == target:
                    return i + base
        return None

    return find


def _cut(state: ChunkerState, end: int) -> tuple[int, bytes]:
    n = end - state.chunk_start
    data = bytes(state.pending[:n])
    del state.pending[:n]
    offset = state.chunk_start
    state.chunk_start = end
    state.next_window = end
    return offset, data


def _drain(state: ChunkerState, policy: ChunkingPolicy, finder: Optional[BoundaryFinder]) -> list[tuple[int, bytes]]:
    cuts = []
    if policy.is_fixed:
        while len(state.pending) >= policy.fixed_size:
            cuts.append(_cut(state, state.chunk_start + policy.fixed_size))
        return cuts

    wp = policy.window
    w, stride = wp.window, wp.stride
    skip = max(0, policy.min_chunk - w)
    find = finder or inline_finder(wp)
    while True:
        start = state.chunk_start
        lo = max(state.next_window, start + skip)
        hi = min(state.stream_len - w, start + policy.max_chunk - w)
        hit = find(state, lo, hi, stride) if lo <= hi else None
        if hit is not None:
            cuts.append(_cut(state, hit + w))
        elif state.stream_len - start >= policy.max_chunk:
            cuts.append(_cut(state, start + policy.max_chunk))
        else:
            if lo <= hi:
                lo += ((hi - lo) // stride + 1) * stride
            state.next_window = lo
            return cuts


def push_cuts(
    state: ChunkerState,
    buffer: BytesLike,
    policy: ChunkingPolicy,
    finder: Optional[BoundaryFinder] = None,
) -> list[tuple[int, bytes]]:
    """Append ``buffer`` and return every chunk it completes as ``(offset, bytes)``."""
    state.pending += buffer
    state.stream_len += len(buffer)
    return _drain(state, policy, finder)


def finish_cuts(state: ChunkerState) -> list[tuple[int, bytes]]:
    if not state.pending:
        return []
    cut = _cut(state, state.stream_len)
    return [cut]


def _digested(cuts: list[tuple[int, bytes]], policy: ChunkingPolicy) -> list[Chunk]:
    return [Chunk(off, len(data), direct_hash(data, policy.segment)) for off, data in cuts]


def push(state: ChunkerState, buffer: BytesLike, policy: ChunkingPolicy, finder=None) -> list[Chunk]:
    return _digested(push_cuts(state, buffer, policy, finder), policy)


def cdc_push(state: ChunkerState, buffer: BytesLike, policy: ChunkingPolicy, finder=None) -> list[Chunk]:
    if policy.is_fixed:
        raise ConfigError("cdc_push requires a content-defined policy")
    return push(state, buffer, policy, finder)


def cdc_finish(state: ChunkerState, policy: ChunkingPolicy) -> list[Chunk]:
    return _digested(finish_cuts(state), policy)


def chunk_whole(data: BytesLike, policy: ChunkingPolicy, finder=None) -> list[Chunk]:
    state = ChunkerState()
    return push(state, data, policy, finder) + cdc_finish(state, policy)


def chunk_fixed(
    data: BytesLike, size: int, segment: SegmentedHashParams = SegmentedHashParams()
) -> list[Chunk]:
    if size <= 0:
        raise ConfigError("block size must be positive")
    view = memoryview(data).cast("B")
    return [
        Chunk(i, len(view[i : i + size]), direct_hash(view[i : i + size], segment))
        for i in range(0, len(view), size)
    ]


class Chunker:
    """Stateful convenience wrapper around :func:`push` / :func:`cdc_finish`."""

    def __init__(self, policy: ChunkingPolicy, finder: Optional[BoundaryFinder] = None):
        self.policy = policy
        self.finder = finder
        self.state = ChunkerState()

    def push(self, buffer: BytesLike) -> list[Chunk]:
        return push(self.state, buffer, self.policy, self.finder)

    def push_cuts(self, buffer: BytesLike) -> list[tuple[int, bytes]]:
        return push_cuts(self.state, buffer, self.policy, self.finder)

    def finish(self) -> list[Chunk]:
        return cdc_finish(self.state, self.policy)

    def finish_cuts(self) -> list[tuple[int, bytes]]:
        return finish_cuts(self.state)
