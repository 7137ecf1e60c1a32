"""Content-addressable store core: block-maps, write sessions and reads."""

from .blockmap import (
    NO_NODE,
    BlockMap,
    BlockRecord,
    NodeAddress,
    decode_blockmap,
    encode_blockmap,
)
from .hashers import BatchBoundaryFinder, InlineHasher, PipelineHasher
from .store import CommitResult, ContentStore, SimilarityReport, WriteSession, similarity

__all__ = [
    "NO_NODE",
    "BatchBoundaryFinder",
    "BlockMap",
    "BlockRecord",
    "CommitResult",
    "ContentStore",
    "InlineHasher",
    "NodeAddress",
    "PipelineHasher",
    "SimilarityReport",
    "WriteSession",
    "decode_blockmap",
    "encode_blockmap",
    "similarity",
]
