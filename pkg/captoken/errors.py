# Copyright AGNTCY Contributors (https://github.com/agntcy)
# SPDX-License-Identifier: Apache-2.0

"""
Exception hierarchy shared by every captoken component.

The class name of each failure doubles as its wire-level reason string, so an
error raised by the token server can be re-raised by name on the client side.
"""


class CaptokenError(Exception):
    """Base class for all captoken failures."""

    status: int = 400

    @property
    def reason(self) -> str:
        return type(self).__name__


class ConfigError(CaptokenError):
    pass


class JournalError(CaptokenError):
    status = 500


# token-core


class MalformedScope(CaptokenError):
    pass


class MissingPrivateKey(CaptokenError):
    pass


class InvalidClaims(CaptokenError):
    pass


class VerificationError(CaptokenError):
    """A token failed exactly one verification check."""

    status = 401


class Malformed(VerificationError):
    pass


class UnknownIssuer(VerificationError):
    pass


class UnknownKey(VerificationError):
    pass


class BadSignature(VerificationError):
    pass


class NotYetValid(VerificationError):
    pass


class Expired(VerificationError):
    pass


class AudienceMismatch(VerificationError):
    pass


# token-server


class EmptyScopes(CaptokenError):
    pass


class ScopeUniverseEmpty(CaptokenError):
    pass


class BadRegistrationToken(CaptokenError):
    status = 401


class UnknownClient(CaptokenError):
    status = 404


class NoScopesApproved(CaptokenError):
    status = 403


class UnknownCode(CaptokenError):
    pass


class CodeConsumed(CaptokenError):
    pass


class CodeExpired(CaptokenError):
    pass


class BadClientCredentials(CaptokenError):
    status = 401


class UnknownHandle(CaptokenError):
    pass


class Revoked(CaptokenError):
    pass


class RefreshExpired(CaptokenError):
    pass


class ScopeEscalation(CaptokenError):
    status = 403


class NoMatchingPolicy(CaptokenError):
    status = 403


# cred-manager


class DirectoryUnreadable(CaptokenError):
    status = 500


class StoreWriteFailed(CaptokenError):
    status = 500


class UnknownCredential(CaptokenError):
    status = 404


class TaintViolation(CaptokenError):
    """A refresh handle was about to cross into the execute or data domain."""

    status = 500


class IssuerUnavailable(CaptokenError):
    status = 502


# data-gateway


class BadPath(CaptokenError):
    pass


class ObjectTooLarge(CaptokenError):
    status = 413


class ObjectNotFound(CaptokenError):
    status = 404


class AccessDenied(CaptokenError):
    """Valid token, insufficient authority; `reason` is the enforce deny reason."""

    status = 403

    def __init__(self, deny_reason: str, message: str = ""):
        super().__init__(message or deny_reason)
        self.deny_reason = deny_reason

    @property
    def reason(self) -> str:
        return self.deny_reason


# workflow-sim


class ScenarioParseError(CaptokenError):
    pass


class UnknownJob(CaptokenError):
    status = 404


class NotHeld(CaptokenError):
    pass


class JobStateError(CaptokenError):
    """The job is not in a state that allows the requested step."""

    status = 409


def error_registry() -> dict[str, type[CaptokenError]]:
    """
    Map every known reason string to its exception class.

    Returns:
        dict: reason -> exception class, covering all loaded subclasses
    """
    registry: dict[str, type[CaptokenError]] = {}
    pending: list[type[CaptokenError]] = [CaptokenError]
    while pending:
        cls = pending.pop()
        registry.setdefault(cls.__name__, cls)
        pending.extend(cls.__subclasses__())
    return registry


def raise_for_reason(reason: str, message: str = "") -> None:
    """
    Re-raise a failure received over the wire by its reason string.

    Args:
        reason: Reason string (exception class name) from an error body
        message: Optional human readable detail

    Raises:
        CaptokenError: The matching subclass, or the base class when unknown
    """
    cls = error_registry().get(reason)
    if cls is None:
        raise CaptokenError(f"{reason}: {message}")
    raise cls(message or reason)
