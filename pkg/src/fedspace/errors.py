"""Exception hierarchy shared by every layer of the connector.

The HTTP service maps these classes onto status codes, so each one carries a
stable ``code`` string that ends up in error response bodies.
"""

from __future__ import annotations


class FedspaceError(Exception):
    code = "error"


# -- identifiers / entity store ---------------------------------------------


class MalformedUrn(FedspaceError, ValueError):
    code = "malformed_urn"


class UnknownUrn(FedspaceError):
    code = "unknown_urn"


class DeletedEntity(FedspaceError):
    code = "deleted_entity"


class AlreadyDeleted(FedspaceError):
    code = "already_deleted"


class MissingParentDomain(FedspaceError):
    code = "missing_parent_domain"


class InvalidRecord(FedspaceError, ValueError):
    code = "invalid_record"


class EmptyQuery(FedspaceError, ValueError):
    code = "empty_query"


class SelfLoop(FedspaceError):
    code = "self_loop"


class DuplicateEdge(FedspaceError):
    code = "duplicate_edge"


class SourceUnreachable(FedspaceError):
    code = "source_unreachable"


class IngestError(FedspaceError, ValueError):
    """Ingestion file could not be parsed; ``line`` is 1-based when known."""

    code = "ingest_error"

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


# -- DCAT ---------------------------------------------------------------------


class InvariantViolation(FedspaceError):
    code = "invariant_violation"

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


class ParseError(FedspaceError, ValueError):
    code = "parse_error"


class SchemaError(FedspaceError, ValueError):
    code = "schema_error"


# -- ODRL ---------------------------------------------------------------------


class TargetNotFound(FedspaceError):
    code = "target_not_found"


class InvalidPolicy(FedspaceError, ValueError):
    code = "invalid_policy"


class InvalidRuleSet(InvalidPolicy):
    code = "invalid_rule_set"


class UnknownPolicy(FedspaceError):
    code = "unknown_policy"


class NotAnOffer(FedspaceError):
    code = "not_an_offer"


class OfferInvalidated(FedspaceError):
    code = "offer_invalidated"


class PolicyInvalidated(FedspaceError):
    code = "policy_invalidated"


# -- facade -------------------------------------------------------------------


class BadCredentials(FedspaceError):
    code = "bad_credentials"


class TokenExpired(FedspaceError):
    code = "token_expired"


class StoreUnavailable(FedspaceError):
    code = "store_unavailable"


# -- negotiation / transfer ---------------------------------------------------


class MalformedMessage(FedspaceError, ValueError):
    code = "malformed_message"


class IllegalTransition(FedspaceError):
    """Protocol violation. ``process`` is set when a live process was affected."""

    code = "illegal_transition"

    def __init__(self, message: str, process=None):
        self.process = process
        super().__init__(message)


class UnknownProcess(FedspaceError):
    code = "unknown_process"


class ProviderUnreachable(FedspaceError):
    code = "provider_unreachable"


class AgreementMismatch(FedspaceError):
    code = "agreement_mismatch"


class UnknownAgreement(FedspaceError):
    code = "unknown_agreement"


class AgreementInvalidated(FedspaceError):
    code = "agreement_invalidated"


class NegotiationNotFinalized(FedspaceError):
    code = "negotiation_not_finalized"


class FormatMismatch(FedspaceError):
    code = "format_mismatch"


class InvalidToken(FedspaceError):
    code = "invalid_token"


class ExpiredToken(FedspaceError):
    code = "expired_token"


class WrongTarget(FedspaceError):
    code = "wrong_target"


class TransferNotStarted(FedspaceError):
    code = "transfer_not_started"


class TransferTerminated(FedspaceError):
    """The provider ended a transfer instead of granting access."""

    code = "transfer_terminated"

    def __init__(self, message: str, reason: str | None = None, process: dict | None = None):
        self.reason = reason
        self.process = process
        super().__init__(message)
