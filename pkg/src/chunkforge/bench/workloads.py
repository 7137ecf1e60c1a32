"""Seeded synthetic workloads: different files, one repeated file, and
successive checkpoint-like versions produced by random edits."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from ..errors import ConfigError

DIFFERENT = "different"
SIMILAR = "similar"
CHECKPOINT = "checkpoint_synthetic"
KINDS = (DIFFERENT, SIMILAR, CHECKPOINT)


@dataclass(frozen=True)
class WorkloadSpec:
    kind: str = SIMILAR
    file_size: int = 16 * 1024 * 1024
    file_count: int = 10
    mutation_rate: float = 0.0
    edit_mix: tuple = (1.0, 1.0, 1.0)  # insert, delete, overwrite weights
    edit_size: int = 256  # mean bytes per edit
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown workload {self.kind!r}; choose from {KINDS}")
        if self.file_size < 0 or self.file_count < 0:
            raise ConfigError("file_size and file_count must be non-negative")
        if not 0.0 <= self.mutation_rate <= 1.0:
            raise ConfigError("mutation_rate must be in [0, 1]")
        if len(self.edit_mix) != 3 or min(self.edit_mix) < 0 or sum(self.edit_mix) <= 0:
            raise ConfigError("edit_mix needs three non-negative weights, not all zero")
        if self.edit_size < 1:
            raise ConfigError("edit_size must be >= 1")

    @property
    def total_bytes(self) -> int:
        """Bytes the workload writes (exact for different/similar, nominal for checkpoints)."""
        return self.file_size * self.file_count

    def file_ids(self) -> list[str]:
        """Different files get their own names; the other kinds rewrite one file."""
        if self.kind == DIFFERENT:
            return [f"file-{k:04d}" for k in range(self.file_count)]
        return ["file"] * self.file_count


def mutate(data: bytes, rate: float, rng: np.random.Generator, mix=(1.0, 1.0, 1.0), edit_size: int = 256) -> bytes:
    """Apply about ``rate * len(data)`` bytes worth of insert/delete/overwrite edits."""
    if rate <= 0 or not data:
        return bytes(data)
    buf = bytearray(data)
    n_edits = max(1, math.ceil(rate * len(data) / edit_size))
    p = np.asarray(mix, dtype=float)
    kinds = rng.choice(3, size=n_edits, p=p / p.sum())
    for kind in kinds:
        size = int(rng.integers(1, 2 * edit_size))
        pos = int(rng.integers(0, len(buf) + 1))
        if kind == 0:
            buf[pos:pos] = rng.bytes(size)
        elif kind == 1:
            del buf[pos : pos + size]
        else:
            chunk = rng.bytes(min(size, len(buf) - pos))
            buf[pos : pos + len(chunk)] = chunk
    return bytes(buf)


def iter_files(spec: WorkloadSpec) -> Iterator[bytes]:
    rng = np.random.default_rng(spec.seed)
    if spec.file_count == 0:
        return
    if spec.kind == DIFFERENT:
        for _ in range(spec.file_count):
            yield rng.bytes(spec.file_size)
        return
    current = rng.bytes(spec.file_size)
    yield current
    for _ in range(spec.file_count - 1):
        if spec.kind == CHECKPOINT:
            current = mutate(current, spec.mutation_rate, rng, spec.edit_mix, spec.edit_size)
        yield current


def generate(spec: WorkloadSpec) -> list[bytes]:
    return list(iter_files(spec))
