"""Transfer processes for pull-style data access under a finalized agreement.

A consumer requests a transfer by agreement id and media type. The provider
checks the agreement, evaluates it for ``use`` and, once started, grants a
:class:`DataAddress`: the dataset's registered access endpoint plus a bearer
token that :meth:`TransferManager.serve_data` accepts for exactly that
dataset and that process.
"""

from __future__ import annotations

import json
import logging
import secrets
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Mapping

from fedspace.docstore import ProcessTable
from fedspace.errors import (
    AgreementInvalidated,
    ExpiredToken,
    FormatMismatch,
    IllegalTransition,
    InvalidToken,
    MalformedMessage,
    NegotiationNotFinalized,
    TargetNotFound,
    TransferNotStarted,
    UnknownAgreement,
    UnknownPolicy,
    UnknownProcess,
    UnknownUrn,
    WrongTarget,
)
from fedspace.negotiation import NegotiationProcess, NegotiationState
from fedspace.odrl.evaluate import evaluate
from fedspace.odrl.model import Action, Decision, PolicyKind, PolicyStatus, RequestContext
from fedspace.odrl.store import PolicyStore
from fedspace.timeutil import from_iso, to_iso, utcnow

log = logging.getLogger(__name__)

DEFAULT_TOKEN_LIFETIME = timedelta(minutes=15)


class TransferState(str, Enum):
    REQUESTED = "REQUESTED"
    STARTED = "STARTED"
    SUSPENDED = "SUSPENDED"
    COMPLETED = "COMPLETED"
    TERMINATED = "TERMINATED"


class TransferCommand(str, Enum):
    START = "START"
    SUSPEND = "SUSPEND"
    RESUME = "RESUME"
    COMPLETE = "COMPLETE"
    TERMINATE = "TERMINATE"


ABSORBING = frozenset({TransferState.COMPLETED, TransferState.TERMINATED})
HOLDS_ADDRESS = frozenset({TransferState.STARTED, TransferState.SUSPENDED, TransferState.COMPLETED})

T, C = TransferState, TransferCommand
TRANSITIONS: dict[tuple[TransferState, TransferCommand], TransferState] = {
    (T.REQUESTED, C.START): T.STARTED,
    (T.STARTED, C.SUSPEND): T.SUSPENDED,
    (T.SUSPENDED, C.RESUME): T.STARTED,
    (T.STARTED, C.COMPLETE): T.COMPLETED,
    (T.REQUESTED, C.TERMINATE): T.TERMINATED,
    (T.STARTED, C.TERMINATE): T.TERMINATED,
    (T.SUSPENDED, C.TERMINATE): T.TERMINATED,
}


def transition(state: TransferState, command: TransferCommand) -> TransferState:
    try:
        return TRANSITIONS[(TransferState(state), TransferCommand(command))]
    except KeyError:
        raise IllegalTransition(f"{command.value} not allowed in state {state.value}") from None


class TransferMessageKind(str, Enum):
    REQUEST = "TransferRequestMessage"
    START = "TransferStartMessage"
    SUSPENSION = "TransferSuspensionMessage"
    COMPLETION = "TransferCompletionMessage"
    TERMINATION = "TransferTerminationMessage"


# resume is announced with a fresh start message carrying the new address
MESSAGE_FOR = {
    C.START: TransferMessageKind.START,
    C.SUSPEND: TransferMessageKind.SUSPENSION,
    C.RESUME: TransferMessageKind.START,
    C.COMPLETE: TransferMessageKind.COMPLETION,
    C.TERMINATE: TransferMessageKind.TERMINATION,
}


@dataclass(frozen=True)
class DataAddress:
    endpoint_url: str
    auth_scheme: str
    access_token: str | None
    valid_until: datetime

    def to_dict(self) -> dict[str, Any]:
        return {
            "endpointUrl": self.endpoint_url,
            "authScheme": self.auth_scheme,
            "accessToken": self.access_token,
            "validUntil": to_iso(self.valid_until),
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> DataAddress:
        try:
            address = cls(
                endpoint_url=doc["endpointUrl"],
                auth_scheme=doc["authScheme"],
                access_token=doc.get("accessToken"),
                valid_until=from_iso(doc["validUntil"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedMessage(f"invalid dataAddress: {exc}") from None
        if address.auth_scheme not in ("NONE", "BEARER"):
            raise MalformedMessage(f"unknown authScheme {address.auth_scheme!r}")
        if address.auth_scheme == "BEARER" and not address.access_token:
            raise MalformedMessage("BEARER address without accessToken")
        return address


@dataclass(frozen=True)
class TransferMessage:
    kind: TransferMessageKind
    transfer_id: str | None = None
    agreement_id: str | None = None
    format: str | None = None
    callback_address: str | None = None
    data_address: DataAddress | None = None
    reason: str | None = None

    def to_envelope(self) -> dict[str, Any]:
        doc: dict[str, Any] = {"@type": self.kind.value}
        for key, value in (
            ("transferId", self.transfer_id),
            ("agreementId", self.agreement_id),
            ("format", self.format),
            ("callbackAddress", self.callback_address),
            ("reason", self.reason),
        ):
            if value is not None:
                doc[key] = value
        if self.data_address is not None:
            doc["dataAddress"] = self.data_address.to_dict()
        return doc

    @classmethod
    def from_envelope(cls, doc: Any) -> TransferMessage:
        if not isinstance(doc, Mapping):
            raise MalformedMessage("envelope must be a JSON object")
        try:
            kind = TransferMessageKind(doc.get("@type"))
        except ValueError:
            raise MalformedMessage(f"unknown @type {doc.get('@type')!r}") from None
        for key in ("transferId", "agreementId", "format", "callbackAddress", "reason"):
            if doc.get(key) is not None and not isinstance(doc[key], str):
                raise MalformedMessage(f"{key!r} must be a string")
        if kind is TransferMessageKind.REQUEST:
            if not doc.get("agreementId") or not doc.get("format"):
                raise MalformedMessage("TransferRequestMessage needs agreementId and format")
        elif not doc.get("transferId"):
            raise MalformedMessage(f"{kind.value} needs a transferId")
        address = doc.get("dataAddress")
        return cls(
            kind=kind,
            transfer_id=doc.get("transferId"),
            agreement_id=doc.get("agreementId"),
            format=doc.get("format"),
            callback_address=doc.get("callbackAddress"),
            data_address=DataAddress.from_dict(address) if address is not None else None,
            reason=doc.get("reason"),
        )


@dataclass(frozen=True)
class HistoryEntry:
    at: datetime
    message: str
    state: TransferState

    def to_dict(self) -> dict[str, str]:
        return {"at": to_iso(self.at), "message": self.message, "state": self.state.value}


@dataclass
class TransferProcess:
    transfer_id: str
    agreement_uid: str
    state: TransferState
    requested_format: str
    target: str
    consumer_pid: str
    callback_address: str = ""
    data_address: DataAddress | None = None
    history: list[HistoryEntry] = field(default_factory=list)
    reason: str | None = None
    granted: bool = False  # passed the policy check at request time

    @property
    def states(self) -> list[TransferState]:
        return [h.state for h in self.history]

    def to_document(self) -> dict[str, Any]:
        return {
            "@type": "TransferProcess",
            "transferId": self.transfer_id,
            "agreementId": self.agreement_uid,
            "state": self.state.value,
            "format": self.requested_format,
            "target": self.target,
            "consumerPid": self.consumer_pid,
            "callbackAddress": self.callback_address,
            "dataAddress": self.data_address.to_dict() if self.data_address else None,
            "reason": self.reason,
            "granted": self.granted,
            "history": [h.to_dict() for h in self.history],
        }

    @classmethod
    def from_document(cls, doc: Mapping[str, Any]) -> TransferProcess:
        address = doc.get("dataAddress")
        return cls(
            transfer_id=doc["transferId"],
            agreement_uid=doc["agreementId"],
            state=TransferState(doc["state"]),
            requested_format=doc["format"],
            target=doc["target"],
            consumer_pid=doc["consumerPid"],
            callback_address=doc.get("callbackAddress") or "",
            data_address=DataAddress.from_dict(address) if address else None,
            history=[
                HistoryEntry(from_iso(h["at"]), h["message"], TransferState(h["state"]))
                for h in doc.get("history", [])
            ],
            reason=doc.get("reason"),
            granted=bool(doc.get("granted")),
        )


class EndSystem:
    """Toy data end system: maps dataset urns to files on local disk."""

    def __init__(self, files: Mapping[str, Path | str] | None = None):
        self._files = {urn: Path(path) for urn, path in (files or {}).items()}

    @classmethod
    def from_manifest(cls, path: Path | str) -> EndSystem:
        path = Path(path)
        with open(path, encoding="utf-8") as fh:
            manifest = json.load(fh)
        return cls({urn: path.parent / rel for urn, rel in manifest.items()})

    def register(self, urn: str, path: Path | str) -> None:
        self._files[urn] = Path(path)

    def path_for(self, urn: str) -> Path:
        try:
            return self._files[urn]
        except KeyError:
            raise UnknownUrn(f"no data registered for {urn}") from None

    def __contains__(self, urn: str) -> bool:
        return urn in self._files


class TransferManager:
    """Provider side of transfers.

    ``resolve(urn)`` returns an object with ``access_endpoint`` and
    ``format_hint`` and raises TargetNotFound for unknown or deleted datasets.
    ``find_negotiation(agreement_uid)`` returns the negotiation that produced
    an agreement, or None.
    """

    def __init__(
        self,
        policies: PolicyStore,
        find_negotiation: Callable[[str], NegotiationProcess | None],
        resolve: Callable[[str], Any],
        end_system: EndSystem,
        *,
        data_dir=None,
        clock: Callable[[], datetime] = utcnow,
        token_lifetime: timedelta = DEFAULT_TOKEN_LIFETIME,
    ):
        if token_lifetime <= timedelta(0):
            raise ValueError("token lifetime must be positive")
        self.policies = policies
        self.find_negotiation = find_negotiation
        self.resolve = resolve
        self.end_system = end_system
        self.token_lifetime = token_lifetime
        self._clock = clock
        self._table: ProcessTable[TransferProcess] = ProcessTable(
            data_dir, TransferProcess.from_document, lambda p: p.transfer_id, UnknownProcess
        )
        # current token of each process holding an address; replaced tokens are dropped
        self._tokens: dict[str, str] = {
            p.data_address.access_token: p.transfer_id
            for p in self._table.all()
            if p.data_address and p.data_address.access_token
        }

    # -- bookkeeping ------------------------------------------------------------

    def get(self, transfer_id: str) -> TransferProcess:
        return self._table.get(transfer_id)

    def processes(self) -> list[TransferProcess]:
        return self._table.all()

    def _record(self, process: TransferProcess, message: str, state: TransferState) -> None:
        process.state = state
        process.history.append(HistoryEntry(self._clock(), message, state))
        log.info(
            "event=transfer.transition transfer=%s message=%s state=%s",
            process.transfer_id,
            message,
            state.value,
        )

    def _save(self, process: TransferProcess) -> None:
        self._table.save(process, process.to_document())

    def _forget(self, process: TransferProcess) -> None:
        if process.data_address and process.data_address.access_token:
            self._tokens.pop(process.data_address.access_token, None)

    def _mint(self, process: TransferProcess, endpoint_url: str) -> DataAddress:
        self._forget(process)
        token = secrets.token_urlsafe(32)
        address = DataAddress(endpoint_url, "BEARER", token, self._clock() + self.token_lifetime)
        self._tokens[token] = process.transfer_id
        return address

    def _message(self, process: TransferProcess, command: TransferCommand) -> TransferMessage:
        return TransferMessage(
            MESSAGE_FOR[command],
            transfer_id=process.transfer_id,
            agreement_id=process.agreement_uid,
            data_address=process.data_address if process.state is TransferState.STARTED else None,
            reason=process.reason if process.state is TransferState.TERMINATED else None,
        )

    def _close(self, process: TransferProcess, reason: str) -> TransferMessage:
        self._record(process, TransferMessageKind.TERMINATION.value, transition(process.state, C.TERMINATE))
        process.reason = reason
        self._forget(process)
        process.data_address = None
        return self._message(process, C.TERMINATE)

    # -- operations ---------------------------------------------------------------

    def request_transfer(
        self, agreement_uid: str, requested_format: str, callback_address: str = ""
    ) -> TransferProcess:
        try:
            agreement = self.policies.get(agreement_uid)
        except UnknownPolicy:
            raise UnknownAgreement(agreement_uid) from None
        if agreement.kind is not PolicyKind.AGREEMENT:
            raise UnknownAgreement(f"{agreement_uid} is not an agreement")
        if agreement.status is not PolicyStatus.ACTIVE:
            raise AgreementInvalidated(agreement_uid)
        negotiation = self.find_negotiation(agreement_uid)
        if negotiation is None or negotiation.state is not NegotiationState.FINALIZED:
            raise NegotiationNotFinalized(agreement_uid)

        try:
            meta = self.resolve(agreement.target)
        except TargetNotFound:
            meta = None
        if meta is not None and requested_format != meta.format_hint:
            raise FormatMismatch(f"requested {requested_format!r}, dataset offers {meta.format_hint!r}")

        process = TransferProcess(
            transfer_id=f"urn:uuid:{uuid.uuid4()}",
            agreement_uid=agreement_uid,
            state=TransferState.REQUESTED,
            requested_format=requested_format,
            target=agreement.target,
            consumer_pid=agreement.assignee or negotiation.consumer_pid,
            callback_address=callback_address,
        )
        with self._table.lock(process.transfer_id):
            self._record(process, TransferMessageKind.REQUEST.value, TransferState.REQUESTED)
            if meta is None:
                self._close(process, "target unresolved")
            else:
                # count = this request's ordinal among granted transfers under the agreement
                granted = sum(
                    1 for p in self._table.all() if p.agreement_uid == agreement_uid and p.granted
                )
                ctx = RequestContext(
                    action=Action.USE,
                    participant=process.consumer_pid,
                    attributes={"dateTime": to_iso(self._clock()), "count": str(granted + 1)},
                )
                decision = evaluate(agreement, ctx)
                log.info("event=transfer.decision agreement=%s decision=%s", agreement_uid, decision.value)
                if decision is Decision.PERMIT:
                    process.granted = True
                else:
                    self._close(process, "policy denied")
            self._table.add(process)
            self._save(process)
        return process

    def start_transfer(self, transfer_id: str) -> tuple[TransferProcess, TransferMessage]:
        process = self._table.get(transfer_id)
        with self._table.lock(transfer_id):
            next_state = transition(process.state, C.START)
            try:
                meta = self.resolve(process.target)
            except TargetNotFound:
                message = self._close(process, "target unresolved")
            else:
                process.data_address = self._mint(process, meta.access_endpoint)
                self._record(process, MESSAGE_FOR[C.START].value, next_state)
                message = self._message(process, C.START)
            self._save(process)
        return process, message

    def _command(self, transfer_id: str, command: TransferCommand, reason: str | None = None) -> TransferProcess:
        process = self._table.get(transfer_id)
        with self._table.lock(transfer_id):
            next_state = transition(process.state, command)
            if command is C.TERMINATE:
                self._close(process, reason or "terminated")
            else:
                # a suspended token stops validating through the state check; resume replaces it
                if command is C.RESUME:
                    process.data_address = self._mint(process, process.data_address.endpoint_url)
                self._record(process, MESSAGE_FOR[command].value, next_state)
                if reason:
                    process.reason = reason
            self._save(process)
        return process

    def suspend(self, transfer_id: str, reason: str | None = None) -> TransferProcess:
        return self._command(transfer_id, C.SUSPEND, reason)

    def resume(self, transfer_id: str) -> TransferProcess:
        return self._command(transfer_id, C.RESUME)

    def complete(self, transfer_id: str) -> TransferProcess:
        return self._command(transfer_id, C.COMPLETE)

    def terminate(self, transfer_id: str, reason: str | None = None) -> TransferProcess:
        return self._command(transfer_id, C.TERMINATE, reason)

    def apply(self, transfer_id: str, command: TransferCommand, reason: str | None = None) -> TransferProcess:
        if command is C.START:
            return self.start_transfer(transfer_id)[0]
        return self._command(transfer_id, command, reason)

    # -- data plane -------------------------------------------------------------

    def token_valid(self, token: str) -> bool:
        transfer_id = self._tokens.get(token)
        if transfer_id is None:
            return False
        process = self._table.get(transfer_id)
        return process.state is TransferState.STARTED and self._clock() < process.data_address.valid_until

    def authorize(self, token: str, urn: str) -> Path:
        """Check ``token`` for ``urn`` and return the file to stream."""
        transfer_id = self._tokens.get(token)
        if transfer_id is None:
            raise InvalidToken("unknown or replaced token")
        process = self._table.get(transfer_id)
        if process.state is not TransferState.STARTED:
            raise TransferNotStarted(f"transfer {process.transfer_id} is {process.state.value}")
        if self._clock() >= process.data_address.valid_until:
            raise ExpiredToken(f"token expired at {to_iso(process.data_address.valid_until)}")
        if urn != process.target:
            raise WrongTarget(f"token is bound to {process.target}")
        return self.end_system.path_for(urn)

    def serve_data(self, token: str, urn: str) -> bytes:
        return self.authorize(token, urn).read_bytes()
