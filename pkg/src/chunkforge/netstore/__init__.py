"""Networked deployment: metadata manager, storage nodes and the client transport."""

from .client import (
    LoopbackTransport,
    ManagerClient,
    NodeClient,
    SocketTransport,
    WireCounter,
    stripe_placement,
    upload_striped,
)
from .server import Dispatcher, FrameServer, manager_server, node_server
from .services import MetadataManager, StorageNode

__all__ = [
    "Dispatcher",
    "FrameServer",
    "LoopbackTransport",
    "ManagerClient",
    "MetadataManager",
    "NodeClient",
    "SocketTransport",
    "StorageNode",
    "WireCounter",
    "manager_server",
    "node_server",
    "stripe_placement",
    "upload_striped",
]
