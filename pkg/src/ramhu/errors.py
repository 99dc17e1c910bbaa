"""Exception types shared across the package."""


class RamhuError(Exception):
    """Base class for every error raised by this package."""


class EncodingError(RamhuError):
    """A value does not fit its lane or slot."""


class MalformedMessage(EncodingError):
    """Wire bytes do not match any message schema."""


class InvalidKey(RamhuError):
    """Invalid curve point, scalar or unknown peer key."""


class IntegrityError(RamhuError):
    """Envelope tag mismatch."""


class StateError(RamhuError):
    """Operation not allowed in the current profile state."""


class DeviceError(RamhuError):
    """No usable network interface."""


class ValidationError(RamhuError):
    """User-supplied input violates a policy."""


class ProvisioningError(RamhuError):
    pass


class StoreLoadError(RamhuError):
    """A store file is corrupt or truncated."""


class AdminError(RamhuError):
    pass


class HarnessError(RamhuError):
    pass


class Rejection(RamhuError):
    """A protocol check failed; the peer connection is discarded.

    ``reason`` is one of the short check names (``freshness``, ``replay``,
    ``otp-unknown``, ``pseudonym-unknown``, ``identity``, ``mac-fake``, ``sig-mismatch``,
    ``pw-mismatch``, ``reason-unknown``, ``role-mismatch``, ``no-session``,
    ``integrity``, ``key``, ``malformed``, ``auth-failure``).
    """

    def __init__(self, reason: str, detail: str = "") -> None:
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason
        self.detail = detail
