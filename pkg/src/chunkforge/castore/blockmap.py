"""Per-file block-maps and their binary ("MSBM") serialization.

Layout, all integers little-endian::

    b"MSBM" | format u16 | file_id (u16 length + UTF-8) | version u64 | count u32
    count x { offset u64 | length u32 | digest_len u8 | digest }

Format 2 appends a block-location table::

    node_count u16 | node_count x { host (u16 length + UTF-8) | port u16 }
    count x { node_index u16 }          # 0xFFFF = unknown
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Iterable, Optional

from ..errors import MalformedError

MAGIC = b"MSBM"
FORMAT_PLAIN = 1
FORMAT_LOCATED = 2
NO_NODE = 0xFFFF

_HEAD = struct.Struct("<4sH")
_U16 = struct.Struct("<H")
_MAPHDR = struct.Struct("<QI")
_REC = struct.Struct("<QIB")


@dataclass(frozen=True, order=True)
class NodeAddress:
    host: str
    port: int

    def __post_init__(self):
        if not 0 <= self.port <= 0xFFFF:
            raise ValueError(f"port out of range: {self.port}")

    @classmethod
    def parse(cls, text: str) -> "NodeAddress":
        host, _, port = text.rpartition(":")
        if not host or not port.isdigit():
            raise ValueError(f"expected host:port, got {text!r}")
        return cls(host, int(port))

    def __str__(self):
        return f"{self.host}:{self.port}"


@dataclass(frozen=True)
class BlockRecord:
    offset: int
    length: int
    digest: bytes
    node: int = NO_NODE  # index into BlockMap.nodes


def check_file_id(file_id: str) -> str:
    if not isinstance(file_id, str) or not file_id or "\x00" in file_id:
        raise MalformedError(f"invalid file id {file_id!r}")
    if len(file_id.encode()) > 0xFFFF:
        raise MalformedError("file id too long")
    return file_id


@dataclass
class BlockMap:
    file_id: str
    version: int
    blocks: list[BlockRecord] = field(default_factory=list)
    nodes: tuple[NodeAddress, ...] = ()

    def __post_init__(self):
        check_file_id(self.file_id)
        self.nodes = tuple(self.nodes)

    @property
    def size(self) -> int:
        return sum(b.length for b in self.blocks)

    def digests(self) -> set[bytes]:
        return {b.digest for b in self.blocks}

    def location(self, record: BlockRecord) -> Optional[NodeAddress]:
        if record.node == NO_NODE or record.node >= len(self.nodes):
            return None
        return self.nodes[record.node]

    def locations(self) -> dict[bytes, NodeAddress]:
        out = {}
        for r in self.blocks:
            addr = self.location(r)
            if addr is not None:
                out.setdefault(r.digest, addr)
        return out

    def validate(self) -> "BlockMap":
        pos = 0
        for r in self.blocks:
            if r.offset != pos:
                raise MalformedError(f"record at {r.offset} is not contiguous (expected {pos})")
            if r.length <= 0:
                raise MalformedError("record length must be positive")
            if not 0 < len(r.digest) <= 255:
                raise MalformedError("digest length must be 1..255")
            pos += r.length
        if self.version < 0:
            raise MalformedError("negative version")
        return self

    @classmethod
    def from_chunks(cls, file_id: str, version: int, chunks: Iterable, nodes=()) -> "BlockMap":
        blocks = [BlockRecord(c.stream_offset, c.length, bytes(c.digest)) for c in chunks]
        return cls(file_id, version, blocks, tuple(nodes))


def _put_str(out: bytearray, text: str) -> None:
    raw = text.encode("utf-8")
    out += _U16.pack(len(raw))
    out += raw


def encode_blockmap(bm: BlockMap) -> bytes:
    bm.validate()
    located = bool(bm.nodes) or any(r.node != NO_NODE for r in bm.blocks)
    out = bytearray(_HEAD.pack(MAGIC, FORMAT_LOCATED if located else FORMAT_PLAIN))
    _put_str(out, bm.file_id)
    out += _MAPHDR.pack(bm.version, len(bm.blocks))
    for r in bm.blocks:
        out += _REC.pack(r.offset, r.length, len(r.digest))
        out += r.digest
    if located:
        out += _U16.pack(len(bm.nodes))
        for n in bm.nodes:
            _put_str(out, n.host)
            out += _U16.pack(n.port)
        for r in bm.blocks:
            out += _U16.pack(r.node)
    return bytes(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.pos = 0

    def take(self, n: int) -> memoryview:
        if self.pos + n > len(self.data):
            raise MalformedError("truncated input")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, st: struct.Struct) -> tuple:
        return st.unpack(self.take(st.size))

    def string(self) -> str:
        (n,) = self.unpack(_U16)
        try:
            return bytes(self.take(n)).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedError("bad UTF-8 string") from exc

    def done(self) -> None:
        if self.pos != len(self.data):
            raise MalformedError(f"{len(self.data) - self.pos} trailing bytes")


def decode_blockmap(data: bytes) -> BlockMap:
    rd = _Reader(data)
    magic, fmt = rd.unpack(_HEAD)
    if magic != MAGIC:
        raise MalformedError("bad block-map magic")
    if fmt not in (FORMAT_PLAIN, FORMAT_LOCATED):
        raise MalformedError(f"unsupported block-map format {fmt}")
    file_id = rd.string()
    version, count = rd.unpack(_MAPHDR)
    raw = []
    for _ in range(count):
        offset, length, dlen = rd.unpack(_REC)
        raw.append((offset, length, bytes(rd.take(dlen))))
    nodes: list[NodeAddress] = []
    where = [NO_NODE] * count
    if fmt == FORMAT_LOCATED:
        (n,) = rd.unpack(_U16)
        for _ in range(n):
            host = rd.string()
            (port,) = rd.unpack(_U16)
            nodes.append(NodeAddress(host, port))
        where = [rd.unpack(_U16)[0] for _ in range(count)]
    rd.done()
    blocks = [BlockRecord(o, ln, d, w) for (o, ln, d), w in zip(raw, where)]
    return BlockMap(file_id, version, blocks, tuple(nodes)).validate()
