"""Batch offload pipeline for the hashing primitives."""

from .backends import (
    Backend,
    CpuParallelBackend,
    InstantOracleBackend,
    ReferenceBackend,
    SimulatedBackend,
    StageCosts,
    TaskKind,
    WindowBatchResult,
    make_backend,
    reference_compute,
)
from .config import load_config, parse_config
from .pipeline import JobQueues, Pipeline, PipelineConfig, PipelineStats, Ticket
from .pool import BufferHandle, BufferPool

__all__ = [
    "Backend",
    "BufferHandle",
    "BufferPool",
    "CpuParallelBackend",
    "InstantOracleBackend",
    "JobQueues",
    "Pipeline",
    "PipelineConfig",
    "PipelineStats",
    "ReferenceBackend",
    "SimulatedBackend",
    "StageCosts",
    "TaskKind",
    "Ticket",
    "WindowBatchResult",
    "load_config",
    "make_backend",
    "parse_config",
    "reference_compute",
]
