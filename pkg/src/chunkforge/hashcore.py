"""Hashing primitives: base hashes, segmented (hash-of-hashes) block hashing,
sliding-window hashing and the chunk-boundary predicate.

Everything here is a pure function of its arguments and safe to call from
any number of threads.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import Executor, ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterator, Union

from .errors import ConfigError

BytesLike = Union[bytes, bytearray, memoryview]

# name -> (constructor, digest length)
ALGORITHMS: dict[str, tuple[Callable, int]] = {
    "md5": (hashlib.md5, 16),
    "sha1": (hashlib.sha1, 20),
    "sha256": (hashlib.sha256, 32),
}
DEFAULT_ALGORITHM = "md5"
DEFAULT_SEGMENT_SIZE = 64 * 1024


def _algorithm(name: str) -> tuple[Callable, int]:
    try:
        return ALGORITHMS[name]
    except KeyError:
        raise ConfigError(f"unknown hash algorithm {name!r}") from None


def digest_size(algorithm: str) -> int:
    return _algorithm(algorithm)[1]


@dataclass(frozen=True, order=True)
class Digest:
    """Content identity of a byte string."""

    value: bytes
    algorithm: str = DEFAULT_ALGORITHM

    def __post_init__(self):
        expected = digest_size(self.algorithm)
        if len(self.value) != expected:
            raise ConfigError(
                f"{self.algorithm} digest must be {expected} bytes, got {len(self.value)}"
            )

    def __bytes__(self) -> bytes:
        return self.value

    def hex(self) -> str:
        return self.value.hex()

    @classmethod
    def from_hex(cls, text: str, algorithm: str = DEFAULT_ALGORITHM) -> "Digest":
        return cls(bytes.fromhex(text), algorithm)

    def __repr__(self) -> str:
        return f"Digest({self.algorithm}:{self.value.hex()})"


@dataclass(frozen=True)
class SegmentedHashParams:
    segment_size: int = DEFAULT_SEGMENT_SIZE
    algorithm: str = DEFAULT_ALGORITHM

    def __post_init__(self):
        if self.segment_size <= 0:
            raise ConfigError("segment_size must be positive")
        _algorithm(self.algorithm)


@dataclass(frozen=True)
class WindowHashParams:
    """Sliding-window parameters.

    A window ``[i, i + window)`` is evaluated at every ``stride`` bytes and is
    a boundary when the low ``boundary_bits`` bits of its digest prefix equal
    ``boundary_target``.
    """

    window: int = 48
    stride: int = 1
    boundary_bits: int = 13
    boundary_target: int = 0
    algorithm: str = DEFAULT_ALGORITHM

    def __post_init__(self):
        if self.window < 1:
            raise ConfigError("window must be >= 1")
        if self.stride < 1:
            raise ConfigError("stride must be >= 1")
        if not 0 <= self.boundary_bits <= 32:
            raise ConfigError("boundary_bits must be in 0..32")
        if not 0 <= self.boundary_target < (1 << self.boundary_bits):
            raise ConfigError("boundary_target must be in [0, 2**boundary_bits)")
        _algorithm(self.algorithm)

    @property
    def mask(self) -> int:
        return (1 << self.boundary_bits) - 1


def raw_hash(data: BytesLike, algorithm: str = DEFAULT_ALGORITHM) -> bytes:
    return _algorithm(algorithm)[0](data).digest()


def base_hash(data: BytesLike, algorithm: str = DEFAULT_ALGORITHM) -> Digest:
    """Plain sequential hash of ``data``."""
    return Digest(raw_hash(data, algorithm), algorithm)


def segment_digests(
    data: BytesLike,
    segment_size: int,
    algorithm: str = DEFAULT_ALGORITHM,
    workers: int = 1,
    executor: Executor | None = None,
) -> list[bytes]:
    """Raw digests of each ``segment_size`` piece of ``data``, in order.

    With more than one worker the segments are split into contiguous runs and
    hashed concurrently; hashlib drops the GIL for large inputs.
    """
    ctor = _algorithm(algorithm)[0]
    view = memoryview(data).cast("B")
    starts = range(0, len(view), segment_size)
    if workers <= 1 or len(starts) <= 1:
        return [ctor(view[s : s + segment_size]).digest() for s in starts]

    groups = min(workers, len(starts))
    per = -(-len(starts) // groups)

    def run(group: range) -> list[bytes]:
        return [ctor(view[s : s + segment_size]).digest() for s in group]

    parts = [starts[g * per : (g + 1) * per] for g in range(groups)]
    if executor is not None:
        results = list(executor.map(run, parts))
    else:
        with ThreadPoolExecutor(max_workers=groups) as pool:
            results = list(pool.map(run, parts))
    return [d for part in results for d in part]


def combine_segments(segment_hashes: list[bytes], algorithm: str = DEFAULT_ALGORITHM) -> bytes:
    """Final sequential step: hash of the concatenated intermediate digests."""
    h = _algorithm(algorithm)[0]()
    for d in segment_hashes:
        h.update(d)
    return h.digest()


def direct_hash(
    data: BytesLike,
    params: SegmentedHashParams = SegmentedHashParams(),
    workers: int = 1,
    executor: Executor | None = None,
) -> Digest:
    """Hash-of-hashes over fixed-size segments.

    ``H(H(seg_0) || ... || H(seg_{n-1}))``; empty input has zero segments and
    therefore hashes to ``H(b"")``. The result does not depend on ``workers``.
    """
    parts = segment_digests(data, params.segment_size, params.algorithm, workers, executor)
    return Digest(combine_segments(parts, params.algorithm), params.algorithm)


def window_count(length: int, window: int, stride: int) -> int:
    if length < window:
        return 0
    return (length - window) // stride + 1


def iter_window_hashes(data: BytesLike, params: WindowHashParams) -> Iterator[tuple[int, bytes]]:
    ctor = _algorithm(params.algorithm)[0]
    view = memoryview(data).cast("B")
    w = params.window
    for i in range(0, window_count(len(view), w, params.stride) * params.stride, params.stride):
        yield i, ctor(view[i : i + w]).digest()


def window_hashes(data: BytesLike, params: WindowHashParams) -> list[tuple[int, Digest]]:
    """``(offset, digest)`` of every complete window, ascending by offset."""
    return [(i, Digest(d, params.algorithm)) for i, d in iter_window_hashes(data, params)]


def boundary_value(digest: Union[Digest, bytes]) -> int:
    """First 8 digest bytes as a little-endian unsigned integer."""
    raw = digest.value if isinstance(digest, Digest) else digest
    return int.from_bytes(raw[:8], "little")


def is_boundary(digest: Union[Digest, bytes], bits: int, target: int) -> bool:
    if not 0 <= bits <= 32 or not 0 <= target < (1 << bits):
        raise ConfigError("boundary predicate needs 0 <= bits <= 32 and 0 <= target < 2**bits")
    return boundary_value(digest) & ((1 << bits) - 1) == target
