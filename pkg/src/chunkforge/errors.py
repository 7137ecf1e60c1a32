"""Exception hierarchy shared by every layer of the store."""


class ChunkforgeError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(ChunkforgeError, ValueError):
    """Invalid parameters or unknown algorithm/backend names."""


class OwnershipError(ChunkforgeError):
    """A staging buffer was released by a party that does not own it."""


class PipelineClosed(ChunkforgeError):
    """Work was submitted to a pipeline that has been shut down."""


class TaskFailed(ChunkforgeError):
    """A pipeline task raised inside one of its stages."""


class NotFoundError(ChunkforgeError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class ConflictError(ChunkforgeError):
    """Compare-and-set failure or a second writer on the same file."""


class IntegrityError(ChunkforgeError):
    """Stored or transferred bytes do not hash to their identifier."""


class CapacityError(ChunkforgeError):
    pass


class MalformedError(ChunkforgeError, ValueError):
    """A frame or serialized block-map could not be decoded."""


class TransportError(ChunkforgeError, OSError):
    pass


class SessionFailed(ChunkforgeError):
    """A write session hit an unrecoverable error and cannot commit."""
