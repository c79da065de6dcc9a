"""Exception taxonomy shared across the network stack."""


class QkdNetworkError(Exception):
    """Base class for all errors raised by this package."""

    code = "error"


class ConfigError(QkdNetworkError):
    """Network description file is syntactically or semantically invalid.

    ``location`` is a human-readable pointer into the document, e.g.
    ``links[3].loss_db_o_band`` or ``line 42``.
    """

    code = "config"

    def __init__(self, message, location=None):
        self.location = location
        if location:
            message = f"{message} (at {location})"
        super().__init__(message)


class ReferentialIntegrityError(ConfigError):
    """A node/link/spec reference in the config does not resolve."""

    code = "ref-integrity"


class InvariantViolation(ConfigError):
    """A declared structural invariant does not hold; names the field."""

    code = "invariant"


class TopologyError(QkdNetworkError):
    code = "topology"


class UnknownLinkError(TopologyError):
    code = "unknown-link"


class DisconnectedPathError(TopologyError):
    code = "disconnected-path"


class ChannelError(QkdNetworkError):
    code = "channel"


class StaleCandidateError(ChannelError):
    """Switch state changed between enumeration and establishment."""

    code = "stale-candidate"


class ChannelNotUpError(ChannelError):
    code = "channel-not-up"


class KmsError(QkdNetworkError):
    code = "kms"


class KeyExhaustedError(KmsError):
    """Buffer empty for the requested pair; the caller may retry later."""

    code = "key-exhausted"


class InsufficientKeyError(KmsError):
    """Multi-key request larger than the buffer; nothing was consumed."""

    code = "insufficient-key"


class RateLimitedError(KmsError):
    code = "rate-limited"


class UnreachableDestinationError(KmsError):
    code = "unreachable"


class QosUnsatisfiableError(KmsError):
    code = "qos-unsatisfiable"


class UnknownSessionError(KmsError):
    code = "unknown-session"


class SessionClosedError(KmsError):
    code = "session-closed"


class UnknownPeerError(KmsError):
    code = "unknown-peer"


class SizeOutOfBoundsError(KmsError):
    code = "size-out-of-bounds"


class KeyIdError(KmsError):
    """Per-id retrieval failure: unknown, expired or already consumed."""

    code = "key-id"

    def __init__(self, key_id, reason):
        self.key_id = key_id
        self.reason = reason  # unknown | expired | consumed
        super().__init__(f"key id {key_id}: {reason}")


class IntegrityFault(KmsError):
    """Duplicate key id or other evidence of a corrupted key plane."""

    code = "integrity-fault"


class ForwardingError(QkdNetworkError):
    code = "forwarding"


class RouteInvalidatedError(ForwardingError):
    code = "route-invalidated"


class ControllerError(QkdNetworkError):
    code = "controller"


class UnknownNodeError(ControllerError):
    code = "unknown-node"


class DuplicateRegistrationError(ControllerError):
    code = "duplicate-registration"


class NoFeasibleRouteError(ControllerError):
    code = "no-route"


class QosInfeasibleError(ControllerError):
    """Routes exist but none meets the requested rate."""

    code = "qos-infeasible"


class SwitchCommandRejected(ControllerError):
    code = "switch-rejected"


class HarnessError(QkdNetworkError):
    code = "harness"


class UnknownExperimentError(HarnessError):
    code = "unknown-experiment"
