"""Storage-node and metadata-manager service logic.

These classes are transport-agnostic: the socket servers in
:mod:`chunkforge.netstore.server` wrap them, and the in-process harness
calls them directly.
"""

from __future__ import annotations

import copy
import os
import threading
from pathlib import Path
from typing import Optional, Union

from .. import hashcore
from ..castore.blockmap import BlockMap, NodeAddress, check_file_id
from ..errors import CapacityError, ConflictError, IntegrityError, MalformedError, NotFoundError
from ..hashcore import SegmentedHashParams


class StorageNode:
    """Block store keyed by digest.

    Identifiers whose length equals the configured hash's digest size are
    content addresses and are verified on put (and on get when
    ``verify_reads``). Other identifiers are opaque location keys, used by the
    non-content-addressed write mode, and are stored as-is.
    """

    def __init__(
        self,
        address: NodeAddress = NodeAddress("local", 0),
        data_dir: Union[str, Path, None] = None,
        capacity: Optional[int] = None,
        params: SegmentedHashParams = SegmentedHashParams(),
        verify_reads: bool = True,
    ):
        self.address = address
        self.params = params
        self.capacity = capacity
        self.verify_reads = verify_reads
        self.data_dir = Path(data_dir) if data_dir is not None else None
        self._mem: dict[bytes, bytes] = {}
        self._sizes: dict[bytes, int] = {}
        self._lock = threading.Lock()
        self.stored_bytes = 0
        self.puts = 0
        if self.data_dir is not None:
            self.data_dir.mkdir(parents=True, exist_ok=True)
            for p in self.data_dir.glob("*/*"):
                if p.suffix == ".tmp":
                    p.unlink()
                    continue
                self._sizes[bytes.fromhex(p.name)] = p.stat().st_size
            self.stored_bytes = sum(self._sizes.values())

    def is_content_address(self, digest: bytes) -> bool:
        return len(digest) == hashcore.digest_size(self.params.algorithm)

    def block_path(self, digest: bytes) -> Path:
        h = digest.hex()
        return self.data_dir / h[:2] / h

    def _check(self, digest: bytes, data) -> None:
        if self.is_content_address(digest):
            actual = hashcore.direct_hash(data, self.params).value
            if actual != digest:
                raise IntegrityError(f"digest mismatch for block {digest.hex()} (content hashes to {actual.hex()})")

    def put_block(self, digest: bytes, data) -> None:
        digest = bytes(digest)
        if not 0 < len(digest) <= 255:
            raise MalformedError("block id must be 1..255 bytes")
        self._check(digest, data)
        with self._lock:
            self.puts += 1
            if digest in self._sizes:
                return
            if self.capacity is not None and self.stored_bytes + len(data) > self.capacity:
                raise CapacityError(f"node {self.address} is full")
            if self.data_dir is None:
                self._mem[digest] = bytes(data)
            else:
                path = self.block_path(digest)
                path.parent.mkdir(exist_ok=True)
                tmp = path.with_suffix(".tmp")
                with open(tmp, "wb") as fh:
                    fh.write(data)
                os.replace(tmp, path)
            self._sizes[digest] = len(data)
            self.stored_bytes += len(data)

    def get_block(self, digest: bytes) -> bytes:
        digest = bytes(digest)
        with self._lock:
            if digest not in self._sizes:
                raise NotFoundError(f"no block {digest.hex()} on {self.address}")
            data = self._mem[digest] if self.data_dir is None else self.block_path(digest).read_bytes()
        if self.verify_reads:
            self._check(digest, data)
        return data

    def has_block(self, digest: bytes) -> bool:
        with self._lock:
            return bytes(digest) in self._sizes

    @property
    def block_count(self) -> int:
        return len(self._sizes)

    def corrupt(self, digest: bytes, data: bytes) -> None:
        """Overwrite a stored block without verification (fault injection)."""
        digest = bytes(digest)
        with self._lock:
            if self.data_dir is None:
                self._mem[digest] = data
            else:
                self.block_path(digest).write_bytes(data)


class MetadataManager:
    """Current block-map per file (compare-and-set commits) and the node list."""

    def __init__(self):
        self._maps: dict[str, BlockMap] = {}
        self._nodes: list[NodeAddress] = []
        self._lock = threading.Lock()

    def get_blockmap(self, file_id: str) -> Optional[BlockMap]:
        check_file_id(file_id)
        with self._lock:
            bm = self._maps.get(file_id)
            return copy.deepcopy(bm) if bm is not None else None

    def put_blockmap(self, bm: BlockMap, expected_version: Optional[int]) -> None:
        bm.validate()
        with self._lock:
            current = self._maps.get(bm.file_id)
            current_version = current.version if current is not None else None
            if current_version != expected_version:
                raise ConflictError(
                    f"{bm.file_id}: expected version {expected_version}, current is {current_version}"
                )
            if bm.version != (expected_version or 0) + 1:
                raise MalformedError(f"{bm.file_id}: new version must be {(expected_version or 0) + 1}")
            self._maps[bm.file_id] = copy.deepcopy(bm)

    def register_node(self, address: NodeAddress) -> None:
        with self._lock:
            if address not in self._nodes:
                self._nodes.append(address)

    def list_nodes(self) -> list[NodeAddress]:
        with self._lock:
            return list(self._nodes)

    def files(self) -> list[str]:
        with self._lock:
            return sorted(self._maps)
