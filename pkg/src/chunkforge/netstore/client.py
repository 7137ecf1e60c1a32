"""Client side of the wire protocol, plus striped block upload."""

from __future__ import annotations

import itertools
import socket
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

from ..castore.blockmap import BlockMap, NodeAddress
from ..errors import ConfigError, TransportError
from . import wire
from .server import Dispatcher, read_frame


@dataclass
class WireCounter:
    """Bytes crossing a transport.

    ``data_bytes`` counts block contents carried by PUT_BLOCK requests;
    everything else sent (headers, digests, metadata frames) is
    ``metadata_bytes``.
    """

    frames_sent: int = 0
    data_bytes: int = 0
    metadata_bytes: int = 0
    bytes_received: int = 0

    def __post_init__(self):
        self._lock = threading.Lock()

    def record(self, sent: int, data: int, received: int) -> None:
        with self._lock:
            self.frames_sent += 1
            self.data_bytes += data
            self.metadata_bytes += sent - data
            self.bytes_received += received

    @property
    def bytes_sent(self) -> int:
        return self.data_bytes + self.metadata_bytes

    def snapshot(self) -> dict:
        with self._lock:
            return {
                "frames_sent": self.frames_sent,
                "data_bytes": self.data_bytes,
                "metadata_bytes": self.metadata_bytes,
                "bytes_received": self.bytes_received,
            }

    def reset(self) -> None:
        with self._lock:
            self.frames_sent = self.data_bytes = self.metadata_bytes = self.bytes_received = 0


class _Transport:
    def __init__(self, counter: Optional[WireCounter] = None):
        self.counter = counter if counter is not None else WireCounter()
        self._ids = itertools.count(1)
        self._lock = threading.Lock()

    def _exchange(self, frame: bytes) -> bytes:
        raise NotImplementedError

    def call(self, msg):
        rid = next(self._ids)
        frame = wire.encode_frame(msg, rid)
        with self._lock:
            reply = self._exchange(frame)
        data = len(msg.data) if isinstance(msg, wire.PutBlock) else 0
        self.counter.record(len(frame), data, len(reply))
        got, resp = wire.decode_response(reply)
        if got != rid:
            raise TransportError(f"response id {got} does not match request {rid}")
        if isinstance(resp, wire.ErrorReply):
            wire.raise_error(resp)
        if resp.opcode != msg.opcode | wire.RESPONSE:
            raise TransportError(f"unexpected response opcode {resp.opcode:#04x}")
        return resp

    def close(self) -> None:
        pass


class SocketTransport(_Transport):
    """One TCP connection; requests on it are strictly sequential."""

    def __init__(self, address: NodeAddress, counter: Optional[WireCounter] = None, timeout: float = 60.0):
        super().__init__(counter)
        self.address = address
        self.timeout = timeout
        self._sock: Optional[socket.socket] = None

    def _connect(self) -> socket.socket:
        try:
            sock = socket.create_connection((self.address.host, self.address.port), timeout=self.timeout)
        except OSError as exc:
            raise TransportError(f"cannot reach {self.address}: {exc}") from exc
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        return sock

    def _exchange(self, frame: bytes) -> bytes:
        if self._sock is None:
            self._sock = self._connect()
        try:
            self._sock.sendall(frame)
            return read_frame(self._sock)
        except OSError as exc:
            self._drop()
            if isinstance(exc, TransportError):
                raise
            raise TransportError(f"{self.address}: {exc}") from exc

    def _drop(self) -> None:
        if self._sock is not None:
            try:
                self._sock.close()
            finally:
                self._sock = None

    def close(self) -> None:
        with self._lock:
            self._drop()


class LoopbackTransport(_Transport):
    """Encodes real frames but hands them straight to an in-process dispatcher."""

    def __init__(self, dispatcher: Dispatcher, counter: Optional[WireCounter] = None):
        super().__init__(counter)
        self.dispatcher = dispatcher

    def _exchange(self, frame: bytes) -> bytes:
        return self.dispatcher.handle(frame)


class NodeClient:
    def __init__(self, transport: _Transport, address: Optional[NodeAddress] = None):
        self.transport = transport
        self.address = address if address is not None else getattr(transport, "address", None)

    @classmethod
    def connect(cls, address: NodeAddress, counter: Optional[WireCounter] = None) -> "NodeClient":
        return cls(SocketTransport(address, counter), address)

    @property
    def counter(self) -> WireCounter:
        return self.transport.counter

    def put_block(self, digest: bytes, data) -> None:
        self.transport.call(wire.PutBlock(bytes(digest), bytes(data)))

    def get_block(self, digest: bytes) -> bytes:
        return self.transport.call(wire.GetBlock(bytes(digest))).data

    def has_block(self, digest: bytes) -> bool:
        return self.transport.call(wire.HasBlock(bytes(digest))).present

    def close(self) -> None:
        self.transport.close()


class ManagerClient:
    def __init__(self, transport: _Transport):
        self.transport = transport

    @classmethod
    def connect(cls, address: NodeAddress, counter: Optional[WireCounter] = None) -> "ManagerClient":
        return cls(SocketTransport(address, counter))

    @property
    def counter(self) -> WireCounter:
        return self.transport.counter

    def get_blockmap(self, file_id: str) -> Optional[BlockMap]:
        return self.transport.call(wire.GetBlockMap(file_id)).blockmap

    def put_blockmap(self, bm: BlockMap, expected_version: Optional[int]) -> None:
        self.transport.call(wire.PutBlockMap(bm, expected_version))

    def list_nodes(self) -> list[NodeAddress]:
        return list(self.transport.call(wire.ListNodes()).nodes)

    def register_node(self, address: NodeAddress) -> None:
        self.transport.call(wire.RegisterNode(address))

    def close(self) -> None:
        self.transport.close()


def stripe_placement(count: int, stripe_width: int) -> list[int]:
    return [k % stripe_width for k in range(count)]


def upload_striped(blocks: Sequence[tuple[bytes, bytes]], nodes: Sequence, stripe_width: int) -> list[int]:
    """Put block ``k`` on ``nodes[k % stripe_width]``, one concurrent stream per node.

    Returns the data bytes sent to each node. Raises the first failure after
    every stream has stopped, so a caller never sees partial success.
    """
    if not 1 <= stripe_width <= len(nodes):
        raise ConfigError(f"stripe width {stripe_width} must be in 1..{len(nodes)}")
    lanes: list[list[tuple[bytes, bytes]]] = [[] for _ in range(stripe_width)]
    for k, item in enumerate(blocks):
        lanes[k % stripe_width].append(item)

    def send(i: int) -> int:
        node = nodes[i]
        sent = 0
        for digest, data in lanes[i]:
            node.put_block(digest, data)
            sent += len(data)
        return sent

    if stripe_width == 1:
        return [send(0)]
    with ThreadPoolExecutor(max_workers=stripe_width, thread_name_prefix="stripe") as pool:
        futures = [pool.submit(send, i) for i in range(stripe_width)]
        errors = [f.exception() for f in futures]
    for exc in errors:
        if exc is not None:
            raise exc
    return [f.result() for f in futures]
