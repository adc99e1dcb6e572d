"""Exception hierarchy shared by all permcollab modules."""


class PermCollabError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(PermCollabError, ValueError):
    """Invalid domain value: bad spec, shape mismatch, out-of-range field."""


class FingerprintMismatchError(PermCollabError):
    """Decryption attempted with a key whose fingerprint does not match."""


class FormatError(PermCollabError):
    """Malformed on-disk data (CIFAR file, shard, key cache, manifest)."""

    def __init__(self, message: str, *, offset: int | None = None, record: int | None = None):
        detail = message
        if record is not None:
            detail += f" (record {record})"
        if offset is not None:
            detail += f" (byte offset {offset})"
        super().__init__(detail)
        self.offset = offset
        self.record = record


class ProtocolError(PermCollabError):
    """Wire-protocol violation; carries the diagnostic code sent on the wire."""

    def __init__(self, code: int, message: str):
        super().__init__(f"[{code}] {message}")
        self.code = code


class TransportError(PermCollabError):
    """Connection-level failure: peer gone, stream cut mid-frame, send refused."""


class DigestMismatchError(PermCollabError):
    """A transferred artifact failed digest verification."""
