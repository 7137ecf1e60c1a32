"""Socket front-ends for the manager and storage-node services."""

from __future__ import annotations

import logging
import socket
import socketserver
import threading
from typing import Optional

from ..castore.blockmap import NodeAddress
from ..errors import ChunkforgeError, MalformedError, TransportError
from . import wire
from .services import MetadataManager, StorageNode

log = logging.getLogger(__name__)


class Dispatcher:
    """Turns request frames into response frames for one or both services."""

    def __init__(self, manager: Optional[MetadataManager] = None, node: Optional[StorageNode] = None):
        self.manager = manager
        self.node = node

    def _need(self, service, what: str):
        if service is None:
            raise MalformedError(f"this endpoint does not serve {what} requests")
        return service

    def apply(self, msg):
        if isinstance(msg, wire.PutBlock):
            self._need(self.node, "block").put_block(msg.digest, msg.data)
            return wire.Ack(wire.PUT_BLOCK)
        if isinstance(msg, wire.GetBlock):
            return wire.BlockData(self._need(self.node, "block").get_block(msg.digest))
        if isinstance(msg, wire.HasBlock):
            return wire.HasResult(self._need(self.node, "block").has_block(msg.digest))
        if isinstance(msg, wire.GetBlockMap):
            return wire.BlockMapResult(self._need(self.manager, "metadata").get_blockmap(msg.file_id))
        if isinstance(msg, wire.PutBlockMap):
            self._need(self.manager, "metadata").put_blockmap(msg.blockmap, msg.expected_version)
            return wire.Ack(wire.PUT_BLOCKMAP)
        if isinstance(msg, wire.ListNodes):
            return wire.NodeList(tuple(self._need(self.manager, "metadata").list_nodes()))
        if isinstance(msg, wire.RegisterNode):
            self._need(self.manager, "metadata").register_node(msg.address)
            return wire.Ack(wire.REGISTER_NODE)
        raise MalformedError(f"unhandled message {type(msg).__name__}")

    def handle(self, frame) -> bytes:
        rid = 0
        try:
            if len(frame) >= wire.HEADER_SIZE:
                rid = wire.HEADER.unpack_from(frame)[2]
            rid, msg = wire.decode_request(frame)
            reply = self.apply(msg)
        except (ChunkforgeError, ValueError, KeyError) as exc:
            reply = wire.error_reply(exc)
        return wire.encode_frame(reply, rid)


def recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray(n)
    view = memoryview(buf)
    got = 0
    while got < n:
        k = sock.recv_into(view[got:], n - got)
        if k == 0:
            raise TransportError("connection closed mid-frame" if got else "connection closed")
        got += k
    return bytes(buf)


def read_frame(sock: socket.socket) -> bytes:
    head = recv_exact(sock, 4)
    total = wire.check_length(int.from_bytes(head, "little"))
    return head + recv_exact(sock, total - 4)


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        sock = self.request
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        while True:
            try:
                frame = read_frame(sock)
            except TransportError:
                return
            except MalformedError as exc:
                # the stream cannot be resynchronised after a bad length
                sock.sendall(wire.encode_frame(wire.error_reply(exc), 0))
                return
            sock.sendall(self.server.dispatcher.handle(frame))


class FrameServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address: tuple[str, int], dispatcher: Dispatcher):
        super().__init__(address, _Handler)
        self.dispatcher = dispatcher
        self._thread: Optional[threading.Thread] = None

    @property
    def address(self) -> NodeAddress:
        host, port = self.server_address[:2]
        return NodeAddress(host, port)

    def start(self) -> "FrameServer":
        """Serve on a background thread."""
        self._thread = threading.Thread(target=self.serve_forever, name=f"serve-{self.address}", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self.shutdown()
        self.server_close()
        if self._thread is not None:
            self._thread.join()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.stop()


def manager_server(host: str = "127.0.0.1", port: int = 0, manager: Optional[MetadataManager] = None) -> FrameServer:
    return FrameServer((host, port), Dispatcher(manager=manager or MetadataManager()))


def node_server(host: str = "127.0.0.1", port: int = 0, node_factory=None, **node_kwargs) -> FrameServer:
    """Bind first so an ephemeral port is known before the node is named."""
    server = FrameServer((host, port), Dispatcher())
    addr = server.address
    server.dispatcher.node = (node_factory or StorageNode)(address=addr, **node_kwargs)
    return server
