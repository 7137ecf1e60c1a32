"""Client-side content-addressable store: write sessions, commit, read."""

from __future__ import annotations

import logging
import threading
import uuid
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .. import hashcore
from ..chunker import ChunkerState, ChunkingPolicy, MiB, finish_cuts, push_cuts
from ..errors import ConfigError, ConflictError, IntegrityError, NotFoundError, SessionFailed
from ..netstore.client import upload_striped
from .blockmap import NO_NODE, BlockMap, BlockRecord, NodeAddress
from .hashers import InlineHasher

log = logging.getLogger(__name__)

DEFAULT_BUFFER = 4 * MiB
_UNHASHED_PREFIX = b"NCA:"


@dataclass(frozen=True)
class SimilarityReport:
    total_blocks: int = 0
    matched_blocks: int = 0
    total_bytes: int = 0
    matched_bytes: int = 0

    @property
    def new_bytes(self) -> int:
        return self.total_bytes - self.matched_bytes

    @property
    def similarity_ratio(self) -> float:
        return self.matched_bytes / self.total_bytes if self.total_bytes else 0.0


def similarity(previous: Optional[BlockMap], chunks: Iterable) -> SimilarityReport:
    """Match blocks against the previous version by digest-set membership.

    ``chunks`` may hold :class:`~chunkforge.chunker.Chunk` or
    :class:`BlockRecord` items.
    """
    known = previous.digests() if previous is not None else set()
    total = matched = total_b = matched_b = 0
    for c in chunks:
        d = bytes(c.digest)
        total += 1
        total_b += c.length
        if d in known:
            matched += 1
            matched_b += c.length
    return SimilarityReport(total, matched, total_b, matched_b)


@dataclass
class CommitResult:
    blockmap: BlockMap
    report: SimilarityReport
    uploaded_blocks: int
    uploaded_bytes: int

    def __iter__(self):
        # allows ``bm, report = session.commit()``
        return iter((self.blockmap, self.report))


class WriteSession:
    """Buffers written bytes, chunks and hashes them a buffer at a time, and
    publishes a new block-map on :meth:`commit`."""

    def __init__(self, store: "ContentStore", file_id: str, policy: ChunkingPolicy, previous: Optional[BlockMap]):
        self.store = store
        self.file_id = file_id
        if store.hasher is None and not policy.is_fixed:
            # no hashing at all, so no window scan either
            policy = ChunkingPolicy.fixed(policy.largest_chunk, policy.segment)
        self.policy = policy
        self.previous = previous
        self.bytes_written = 0
        self.failed: Optional[BaseException] = None
        self.closed = False
        self._buffer = bytearray()
        self._state = ChunkerState()
        self._finder = store.hasher.finder(policy) if store.hasher is not None else None
        self._blocks: list[tuple[int, bytes]] = []
        self._pending: list = []  # in-flight digest batches, in block order

    @property
    def buffer_capacity(self) -> int:
        return self.store.buffer_size

    def write(self, data) -> None:
        self._check_open()
        view = memoryview(data).cast("B")
        cap = self.buffer_capacity
        pos = 0
        while pos < len(view):
            take = min(cap - len(self._buffer), len(view) - pos)
            self._buffer += view[pos : pos + take]
            pos += take
            if len(self._buffer) >= cap:
                self._flush()
        self.bytes_written += len(view)

    def _check_open(self) -> None:
        if self.closed:
            raise SessionFailed(f"session for {self.file_id} is closed")
        if self.failed is not None:
            raise SessionFailed(f"session for {self.file_id} failed") from self.failed

    def _fail(self, exc: BaseException) -> None:
        self.failed = exc
        self.store._end_session(self)

    def _flush(self, final: bool = False) -> None:
        try:
            cuts = push_cuts(self._state, self._buffer, self.policy, self._finder) if self._buffer else []
            if final:
                cuts += finish_cuts(self._state)
            self._buffer = bytearray()
            if not cuts:
                return
            self._blocks.extend(cuts)
            if self.store.hasher is not None:
                self._pending.append(
                    self.store.hasher.submit_digests([d for _, d in cuts], self.policy.segment)
                )
        except Exception as exc:
            self._fail(exc)
            raise SessionFailed(f"hashing failed for {self.file_id}") from exc

    def _block_ids(self) -> list[bytes]:
        if self.store.hasher is None:
            return [_UNHASHED_PREFIX + uuid.uuid4().bytes for _ in self._blocks]
        ids: list[bytes] = []
        for p in self._pending:
            ids.extend(p.result())
        return ids

    def commit(self) -> CommitResult:
        self._check_open()
        try:
            self._flush(final=True)
            ids = self._block_ids()
        except SessionFailed:
            raise
        except Exception as exc:
            self._fail(exc)
            raise SessionFailed(f"hashing failed for {self.file_id}") from exc

        store = self.store
        prev = self.previous
        prev_locations = prev.locations() if prev is not None else {}
        prev_digests = prev.digests() if prev is not None else set()
        report = similarity(prev, (BlockRecord(o, len(d), i) for (o, d), i in zip(self._blocks, ids)))

        # unique digests that the previous version does not already hold
        to_send: dict[bytes, bytes] = {}
        for (_, data), digest in zip(self._blocks, ids):
            if digest not in prev_digests:
                to_send.setdefault(digest, data)
        try:
            placed = store._upload(list(to_send.items()))
        except Exception as exc:
            self._fail(exc)
            raise SessionFailed(f"upload failed for {self.file_id}; nothing committed") from exc

        where = dict(prev_locations)
        where.update(placed)
        nodes = sorted(set(where.values()))
        index = {a: k for k, a in enumerate(nodes)}
        records = [
            BlockRecord(o, len(d), i, index[where[i]] if i in where else NO_NODE)
            for (o, d), i in zip(self._blocks, ids)
        ]
        version = (prev.version if prev is not None else 0) + 1
        bm = BlockMap(self.file_id, version, records, tuple(nodes))
        try:
            store.manager.put_blockmap(bm, prev.version if prev is not None else None)
        except Exception as exc:
            self._fail(exc)
            raise
        self.closed = True
        store._end_session(self)
        store._account_commit(report, len(to_send), sum(len(v) for v in to_send.values()))
        return CommitResult(bm, report, len(to_send), sum(len(v) for v in to_send.values()))

    def abort(self) -> None:
        if not self.closed:
            self.closed = True
            self.store._end_session(self)


class ContentStore:
    """The client access layer of the store.

    ``manager`` and ``nodes`` are any objects with the metadata-manager and
    storage-node methods (in-process services or network clients). ``hasher``
    selects where hashing runs; ``None`` disables content addressing: blocks
    are cut at fixed offsets (``largest_chunk`` apart) and stored under random
    location keys.
    """

    def __init__(
        self,
        manager,
        nodes: Sequence,
        hasher=InlineHasher(),
        stripe_width: int = 4,
        buffer_size: int = DEFAULT_BUFFER,
        params: hashcore.SegmentedHashParams = hashcore.SegmentedHashParams(),
        verify_reads: bool = True,
    ):
        if not nodes:
            raise ConfigError("at least one storage node is required")
        if not 1 <= stripe_width <= len(nodes):
            raise ConfigError(f"stripe width {stripe_width} must be in 1..{len(nodes)}")
        self.manager = manager
        self.nodes = list(nodes)
        self.hasher = hasher
        self.stripe_width = stripe_width
        self.buffer_size = buffer_size
        self.params = params
        self.verify_reads = verify_reads
        self._by_address = {n.address: n for n in self.nodes}
        self._active: dict[str, WriteSession] = {}
        self._lock = threading.Lock()
        self.uploaded_blocks = 0
        self.uploaded_bytes = 0
        self.commits = 0

    def begin_write(self, file_id: str, policy: ChunkingPolicy) -> WriteSession:
        if policy.largest_chunk > self.buffer_size and not policy.is_fixed:
            log.debug("buffer smaller than max chunk; chunks may span several buffers")
        with self._lock:
            if file_id in self._active:
                raise ConflictError(f"{file_id} already has an active write session")
            self._active[file_id] = None  # reserve while fetching the previous map
        try:
            previous = self.manager.get_blockmap(file_id)
        except Exception:
            with self._lock:
                self._active.pop(file_id, None)
            raise
        session = WriteSession(self, file_id, policy, previous)
        with self._lock:
            self._active[file_id] = session
        return session

    def _end_session(self, session: WriteSession) -> None:
        with self._lock:
            if self._active.get(session.file_id) is session:
                del self._active[session.file_id]

    def _upload(self, items: list[tuple[bytes, bytes]]) -> dict[bytes, NodeAddress]:
        if not items:
            return {}
        targets = self.nodes[: self.stripe_width]
        upload_striped(items, targets, len(targets))
        return {d: targets[k % len(targets)].address for k, (d, _) in enumerate(items)}

    def _account_commit(self, report: SimilarityReport, blocks: int, nbytes: int) -> None:
        with self._lock:
            self.uploaded_blocks += blocks
            self.uploaded_bytes += nbytes
            self.commits += 1

    def write_file(self, file_id: str, data, policy: ChunkingPolicy) -> CommitResult:
        session = self.begin_write(file_id, policy)
        try:
            session.write(data)
            return session.commit()
        except BaseException:
            session.abort()
            raise

    def blockmap(self, file_id: str) -> BlockMap:
        bm = self.manager.get_blockmap(file_id)
        if bm is None:
            raise NotFoundError(f"no such file: {file_id}")
        return bm

    def _fetch(self, bm: BlockMap, record: BlockRecord) -> bytes:
        hint = bm.location(record)
        order = [self._by_address[hint]] if hint in self._by_address else []
        order += [n for n in self.nodes if n not in order]
        for node in order:
            try:
                return node.get_block(record.digest)
            except NotFoundError:
                continue
        raise IntegrityError(f"{bm.file_id}: block {record.digest.hex()} is missing from every node")

    def read(self, file_id: str) -> bytes:
        bm = self.blockmap(file_id)
        out = bytearray()
        size = hashcore.digest_size(self.params.algorithm)
        for r in bm.blocks:
            data = self._fetch(bm, r)
            if len(data) != r.length:
                raise IntegrityError(f"{file_id}: block at {r.offset} has {len(data)} bytes, expected {r.length}")
            if self.verify_reads and len(r.digest) == size:
                if hashcore.direct_hash(data, self.params).value != r.digest:
                    raise IntegrityError(f"{file_id}: block at {r.offset} fails its digest check")
            out += data
        return bytes(out)
