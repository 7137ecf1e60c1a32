"""Length-prefixed binary frames spoken between clients and services.

Frame layout, integers little-endian::

    total_length u32 | opcode u8 | request_id u64 | payload

``total_length`` counts the whole frame (13 header bytes plus payload).
A response echoes the request id and carries ``opcode | 0x80``; failures
come back as an ``ERROR`` frame instead.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional, Union

from ..castore.blockmap import BlockMap, NodeAddress, decode_blockmap, encode_blockmap
from ..errors import (
    CapacityError,
    ChunkforgeError,
    ConflictError,
    IntegrityError,
    MalformedError,
    NotFoundError,
)

HEADER = struct.Struct("<IBQ")
HEADER_SIZE = HEADER.size  # 13
MAX_PAYLOAD = 16 * 1024 * 1024
NO_VERSION = 0xFFFFFFFFFFFFFFFF

PUT_BLOCK = 0x01
GET_BLOCK = 0x02
HAS_BLOCK = 0x03
GET_BLOCKMAP = 0x10
PUT_BLOCKMAP = 0x11
LIST_NODES = 0x12
REGISTER_NODE = 0x20
ERROR = 0x7F
RESPONSE = 0x80

ERR_NOT_FOUND = 1
ERR_CONFLICT = 2
ERR_INTEGRITY = 3
ERR_CAPACITY = 4
ERR_MALFORMED = 5

_U8 = struct.Struct("<B")
_U16 = struct.Struct("<H")
_U64 = struct.Struct("<Q")
_ERR = struct.Struct("<H")


# -- payload helpers ----------------------------------------------------------

def _digest(d: bytes) -> bytes:
    if not 0 < len(d) <= 255:
        raise MalformedError("digest must be 1..255 bytes")
    return _U8.pack(len(d)) + bytes(d)


def _text(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise MalformedError("string too long")
    return _U16.pack(len(raw)) + raw


class _Cursor:
    def __init__(self, data):
        self.data = memoryview(data)
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise MalformedError("truncated payload")
        out = bytes(self.data[self.pos : self.pos + n])
        self.pos += n
        return out

    def rest(self) -> bytes:
        out = bytes(self.data[self.pos :])
        self.pos = len(self.data)
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return _U16.unpack(self.take(2))[0]

    def u64(self) -> int:
        return _U64.unpack(self.take(8))[0]

    def digest(self) -> bytes:
        n = self.u8()
        if n == 0:
            raise MalformedError("empty digest")
        return self.take(n)

    def text(self) -> str:
        try:
            return self.take(self.u16()).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedError("bad UTF-8 string") from exc

    def end(self) -> None:
        if self.pos != len(self.data):
            raise MalformedError(f"{len(self.data) - self.pos} trailing payload bytes")


# -- messages ---------------------------------------------------------------

@dataclass(frozen=True)
class PutBlock:
    digest: bytes
    data: bytes
    opcode = PUT_BLOCK

    def payload(self) -> bytes:
        return _digest(self.digest) + bytes(self.data)

    @classmethod
    def parse(cls, c: _Cursor):
        return cls(c.digest(), c.rest())


@dataclass(frozen=True)
class GetBlock:
    digest: bytes
    opcode = GET_BLOCK

    def payload(self) -> bytes:
        return _digest(self.digest)

    @classmethod
    def parse(cls, c: _Cursor):
        return cls(c.digest())


@dataclass(frozen=True)
class HasBlock:
    digest: bytes
    opcode = HAS_BLOCK

    def payload(self) -> bytes:
        return _digest(self.digest)

    @classmethod
    def parse(cls, c: _Cursor):
        return cls(c.digest())


@dataclass(frozen=True)
class GetBlockMap:
    file_id: str
    opcode = GET_BLOCKMAP

    def payload(self) -> bytes:
        return _text(self.file_id)

    @classmethod
    def parse(cls, c: _Cursor):
        return cls(c.text())


@dataclass(frozen=True)
class PutBlockMap:
    blockmap: BlockMap
    expected_version: Optional[int]
    opcode = PUT_BLOCKMAP

    def payload(self) -> bytes:
        ev = NO_VERSION if self.expected_version is None else self.expected_version
        return _U64.pack(ev) + encode_blockmap(self.blockmap)

    @classmethod
    def parse(cls, c: _Cursor):
        ev = c.u64()
        return cls(decode_blockmap(c.rest()), None if ev == NO_VERSION else ev)


@dataclass(frozen=True)
class ListNodes:
    opcode = LIST_NODES

    def payload(self) -> bytes:
        return b""

    @classmethod
    def parse(cls, c: _Cursor):
        return cls()


@dataclass(frozen=True)
class RegisterNode:
    address: NodeAddress
    opcode = REGISTER_NODE

    def payload(self) -> bytes:
        return _text(self.address.host) + _U16.pack(self.address.port)

    @classmethod
    def parse(cls, c: _Cursor):
        return cls(NodeAddress(c.text(), c.u16()))


Request = Union[PutBlock, GetBlock, HasBlock, GetBlockMap, PutBlockMap, ListNodes, RegisterNode]
REQUESTS = {m.opcode: m for m in (PutBlock, GetBlock, HasBlock, GetBlockMap, PutBlockMap, ListNodes, RegisterNode)}


@dataclass(frozen=True)
class Ack:
    """Empty success reply to PUT_BLOCK, PUT_BLOCKMAP or REGISTER_NODE."""

    request_opcode: int

    @property
    def opcode(self) -> int:
        return self.request_opcode | RESPONSE

    def payload(self) -> bytes:
        return b""


@dataclass(frozen=True)
class BlockData:
    data: bytes
    opcode = GET_BLOCK | RESPONSE

    def payload(self) -> bytes:
        return bytes(self.data)

    @classmethod
    def parse(cls, c: _Cursor):
        return cls(c.rest())


@dataclass(frozen=True)
class HasResult:
    present: bool
    opcode = HAS_BLOCK | RESPONSE

    def payload(self) -> bytes:
        return _U8.pack(1 if self.present else 0)

    @classmethod
    def parse(cls, c: _Cursor):
        flag = c.u8()
        if flag > 1:
            raise MalformedError("bad presence flag")
        return cls(bool(flag))


@dataclass(frozen=True)
class BlockMapResult:
    blockmap: Optional[BlockMap]
    opcode = GET_BLOCKMAP | RESPONSE

    def payload(self) -> bytes:
        if self.blockmap is None:
            return b"\x00"
        return b"\x01" + encode_blockmap(self.blockmap)

    @classmethod
    def parse(cls, c: _Cursor):
        flag = c.u8()
        if flag == 0:
            return cls(None)
        if flag != 1:
            raise MalformedError("bad presence flag")
        return cls(decode_blockmap(c.rest()))


@dataclass(frozen=True)
class NodeList:
    nodes: tuple
    opcode = LIST_NODES | RESPONSE

    def payload(self) -> bytes:
        out = bytearray(_U16.pack(len(self.nodes)))
        for n in self.nodes:
            out += _text(n.host) + _U16.pack(n.port)
        return bytes(out)

    @classmethod
    def parse(cls, c: _Cursor):
        count = c.u16()
        return cls(tuple(NodeAddress(c.text(), c.u16()) for _ in range(count)))


@dataclass(frozen=True)
class ErrorReply:
    code: int
    message: str
    opcode = ERROR

    def payload(self) -> bytes:
        return _ERR.pack(self.code) + _text(self.message)

    @classmethod
    def parse(cls, c: _Cursor):
        return cls(c.u16(), c.text())


_ACKED = (PUT_BLOCK, PUT_BLOCKMAP, REGISTER_NODE)
RESPONSES = {m.opcode: m for m in (BlockData, HasResult, BlockMapResult, NodeList, ErrorReply)}


# -- frames -------------------------------------------------------------------

def encode_frame(message, request_id: int) -> bytes:
    payload = message.payload()
    if len(payload) > MAX_PAYLOAD:
        raise MalformedError(f"payload of {len(payload)} bytes exceeds the frame limit")
    return HEADER.pack(HEADER_SIZE + len(payload), message.opcode, request_id) + payload


def split_frame(frame) -> tuple[int, int, memoryview]:
    """Return ``(opcode, request_id, payload)`` after checking the length field."""
    if len(frame) < HEADER_SIZE:
        raise MalformedError("frame shorter than its header")
    total, opcode, rid = HEADER.unpack_from(frame)
    if total != len(frame):
        raise MalformedError(f"frame length field {total} does not match {len(frame)} bytes")
    return opcode, rid, memoryview(frame)[HEADER_SIZE:]


def check_length(total: int) -> int:
    if not HEADER_SIZE <= total <= HEADER_SIZE + MAX_PAYLOAD:
        raise MalformedError(f"invalid frame length {total}")
    return total


def decode_request(frame) -> tuple[int, Request]:
    opcode, rid, payload = split_frame(frame)
    cls = REQUESTS.get(opcode)
    if cls is None:
        raise MalformedError(f"unknown request opcode {opcode:#04x}")
    c = _Cursor(payload)
    msg = cls.parse(c)
    c.end()
    return rid, msg


def decode_response(frame) -> tuple[int, object]:
    opcode, rid, payload = split_frame(frame)
    if opcode & RESPONSE and (opcode & ~RESPONSE) in _ACKED:
        if len(payload):
            raise MalformedError("acknowledgement carries a payload")
        return rid, Ack(opcode & ~RESPONSE)
    cls = RESPONSES.get(opcode)
    if cls is None:
        raise MalformedError(f"unknown response opcode {opcode:#04x}")
    c = _Cursor(payload)
    msg = cls.parse(c)
    c.end()
    return rid, msg


# -- error mapping ------------------------------------------------------------

_CODES = (
    (NotFoundError, ERR_NOT_FOUND),
    (ConflictError, ERR_CONFLICT),
    (IntegrityError, ERR_INTEGRITY),
    (CapacityError, ERR_CAPACITY),
    (MalformedError, ERR_MALFORMED),
)


def error_reply(exc: BaseException) -> ErrorReply:
    for cls, code in _CODES:
        if isinstance(exc, cls):
            break
    else:
        code = ERR_MALFORMED
    text = str(exc)
    return ErrorReply(code, text.encode("utf-8")[:1024].decode("utf-8", "ignore"))


def raise_error(reply: ErrorReply) -> None:
    for cls, code in _CODES:
        if code == reply.code:
            raise cls(reply.message)
    raise ChunkforgeError(f"error code {reply.code}: {reply.message}")
