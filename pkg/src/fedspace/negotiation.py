"""Contract negotiation between a consumer and a provider.

Both sides run the same pure transition table; each keeps its own view of a
process and records every message it sends or receives. A flow is driven by
exchanging :class:`NegotiationMessage` values: a side handles an incoming
message and returns the next message to send (or None when it has nothing to
say). The happy path initiated by a consumer is::

    consumer  ContractRequestMessage            -> REQUESTED
    provider  ContractOfferMessage              -> OFFERED    (after re-checking target and offer)
    consumer  ContractNegotiationEventMessage   -> ACCEPTED
    provider  ContractAgreementMessage          -> AGREED     (automatic)
    consumer  ContractAgreementVerificationMessage -> VERIFIED
    provider  ContractNegotiationEventMessage   -> FINALIZED  (automatic)
"""

from __future__ import annotations

import logging
import uuid
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from typing import Any, Callable, Mapping, Protocol

from fedspace.docstore import ProcessTable
from fedspace.errors import (
    AgreementMismatch,
    IllegalTransition,
    InvalidPolicy,
    MalformedMessage,
    OfferInvalidated,
    TargetNotFound,
    UnknownPolicy,
    UnknownProcess,
)
from fedspace.odrl.model import OdrlPolicy, PolicyKind, PolicyStatus
from fedspace.odrl.store import PolicyStore
from fedspace.timeutil import from_iso, to_iso, utcnow

log = logging.getLogger(__name__)


class NegotiationState(str, Enum):
    REQUESTED = "REQUESTED"
    OFFERED = "OFFERED"
    ACCEPTED = "ACCEPTED"
    AGREED = "AGREED"
    VERIFIED = "VERIFIED"
    FINALIZED = "FINALIZED"
    TERMINATED = "TERMINATED"


ABSORBING = frozenset({NegotiationState.FINALIZED, NegotiationState.TERMINATED})
HOLDS_AGREEMENT = frozenset({NegotiationState.AGREED, NegotiationState.VERIFIED, NegotiationState.FINALIZED})


class MessageKind(str, Enum):
    REQUEST = "ContractRequestMessage"
    OFFER = "ContractOfferMessage"
    EVENT = "ContractNegotiationEventMessage"
    AGREEMENT = "ContractAgreementMessage"
    VERIFICATION = "ContractAgreementVerificationMessage"
    TERMINATION = "ContractNegotiationTerminationMessage"


class NegotiationEvent(str, Enum):
    ACCEPTED = "ACCEPTED"
    FINALIZED = "FINALIZED"


class Role(str, Enum):
    CONSUMER = "CONSUMER"
    PROVIDER = "PROVIDER"


S, K, E, R = NegotiationState, MessageKind, NegotiationEvent, Role

# (state or None for "no process yet", message kind, event, sender) -> next state
TRANSITIONS: dict[tuple[NegotiationState | None, MessageKind, NegotiationEvent | None, Role], NegotiationState] = {
    (None, K.REQUEST, None, R.CONSUMER): S.REQUESTED,
    (None, K.OFFER, None, R.PROVIDER): S.OFFERED,
    (S.REQUESTED, K.OFFER, None, R.PROVIDER): S.OFFERED,
    (S.OFFERED, K.REQUEST, None, R.CONSUMER): S.REQUESTED,
    (S.OFFERED, K.EVENT, E.ACCEPTED, R.CONSUMER): S.ACCEPTED,
    (S.REQUESTED, K.AGREEMENT, None, R.PROVIDER): S.AGREED,
    (S.ACCEPTED, K.AGREEMENT, None, R.PROVIDER): S.AGREED,
    (S.AGREED, K.VERIFICATION, None, R.CONSUMER): S.VERIFIED,
    (S.VERIFIED, K.EVENT, E.FINALIZED, R.PROVIDER): S.FINALIZED,
}
for _state in S:
    if _state not in ABSORBING:
        for _role in R:
            TRANSITIONS[(_state, K.TERMINATION, None, _role)] = S.TERMINATED
del _state, _role


def transition(
    state: NegotiationState | None,
    kind: MessageKind,
    sender: Role,
    event: NegotiationEvent | None = None,
) -> NegotiationState:
    """Next state for ``kind`` sent by ``sender``; raises IllegalTransition otherwise."""
    key = (state, MessageKind(kind), event if kind is K.EVENT else None, Role(sender))
    try:
        return TRANSITIONS[key]
    except KeyError:
        label = kind.value + (f":{event.value}" if kind is K.EVENT and event else "")
        raise IllegalTransition(
            f"{label} from {sender.value} not allowed in state {state.value if state else '(none)'}"
        ) from None


# -- messages ---------------------------------------------------------------------


def _policy(doc: Any, what: str) -> OdrlPolicy:
    try:
        return OdrlPolicy.from_document(doc)
    except InvalidPolicy as exc:
        raise MalformedMessage(f"invalid {what}: {exc}") from None


@dataclass(frozen=True)
class NegotiationMessage:
    kind: MessageKind
    process_id: str | None = None
    offer: OdrlPolicy | None = None
    offer_uid: str | None = None
    agreement: OdrlPolicy | None = None
    event: NegotiationEvent | None = None
    reason: str | None = None
    callback_address: str | None = None
    consumer_pid: str | None = None
    provider_pid: str | None = None

    @property
    def requested_offer_uid(self) -> str | None:
        return self.offer.uid if self.offer is not None else self.offer_uid

    def to_envelope(self) -> dict[str, Any]:
        doc: dict[str, Any] = {"@type": self.kind.value}
        if self.process_id is not None:
            doc["processId"] = self.process_id
        if self.callback_address is not None:
            doc["callbackAddress"] = self.callback_address
        if self.offer is not None:
            doc["offer"] = self.offer.to_document(meta=False)
        elif self.offer_uid is not None:
            doc["offer"] = self.offer_uid
        if self.agreement is not None:
            doc["agreement"] = self.agreement.to_document(meta=False)
        if self.event is not None:
            doc["event"] = self.event.value
        if self.reason is not None:
            doc["reason"] = self.reason
        if self.consumer_pid is not None:
            doc["consumerPid"] = self.consumer_pid
        if self.provider_pid is not None:
            doc["providerPid"] = self.provider_pid
        return doc

    @classmethod
    def from_envelope(cls, doc: Any) -> NegotiationMessage:
        if not isinstance(doc, Mapping):
            raise MalformedMessage("envelope must be a JSON object")
        try:
            kind = MessageKind(doc.get("@type"))
        except ValueError:
            raise MalformedMessage(f"unknown @type {doc.get('@type')!r}") from None
        for key in ("processId", "callbackAddress", "reason", "consumerPid", "providerPid"):
            if doc.get(key) is not None and not isinstance(doc[key], str):
                raise MalformedMessage(f"{key!r} must be a string")
        process_id = doc.get("processId")
        if process_id is None and kind not in (K.REQUEST, K.OFFER):
            raise MalformedMessage(f"{kind.value} needs a processId")

        offer = offer_uid = agreement = event = None
        raw_offer = doc.get("offer")
        if kind is K.REQUEST:
            if isinstance(raw_offer, str) and raw_offer:
                offer_uid = raw_offer
            elif isinstance(raw_offer, Mapping):
                offer = _policy(raw_offer, "offer")
            else:
                raise MalformedMessage("ContractRequestMessage needs an offer id or inline offer")
        elif kind is K.OFFER:
            offer = _policy(raw_offer, "offer")
        elif kind is K.AGREEMENT:
            agreement = _policy(doc.get("agreement"), "agreement")
        elif kind is K.EVENT:
            try:
                event = NegotiationEvent(doc.get("event"))
            except ValueError:
                raise MalformedMessage(f"unknown event {doc.get('event')!r}") from None
        return cls(
            kind=kind,
            process_id=process_id,
            offer=offer,
            offer_uid=offer_uid,
            agreement=agreement,
            event=event,
            reason=doc.get("reason"),
            callback_address=doc.get("callbackAddress"),
            consumer_pid=doc.get("consumerPid"),
            provider_pid=doc.get("providerPid"),
        )


# -- processes ------------------------------------------------------------------


@dataclass(frozen=True)
class HistoryEntry:
    at: datetime
    message: str
    state: NegotiationState

    def to_dict(self) -> dict[str, str]:
        return {"at": to_iso(self.at), "message": self.message, "state": self.state.value}


@dataclass
class NegotiationProcess:
    process_id: str
    consumer_pid: str
    provider_pid: str
    state: NegotiationState
    offer_uid: str
    agreement_uid: str | None = None
    callback_address: str = ""
    history: list[HistoryEntry] = field(default_factory=list)
    reason: str | None = None
    offer: dict | None = None
    agreement: dict | None = None

    @property
    def states(self) -> list[NegotiationState]:
        return [h.state for h in self.history]

    def to_document(self) -> dict[str, Any]:
        return {
            "@type": "ContractNegotiation",
            "processId": self.process_id,
            "consumerPid": self.consumer_pid,
            "providerPid": self.provider_pid,
            "state": self.state.value,
            "offerId": self.offer_uid,
            "agreementId": self.agreement_uid,
            "callbackAddress": self.callback_address,
            "reason": self.reason,
            "offer": self.offer,
            "agreement": self.agreement,
            "history": [h.to_dict() for h in self.history],
        }

    @classmethod
    def from_document(cls, doc: Mapping[str, Any]) -> NegotiationProcess:
        return cls(
            process_id=doc["processId"],
            consumer_pid=doc["consumerPid"],
            provider_pid=doc["providerPid"],
            state=NegotiationState(doc["state"]),
            offer_uid=doc["offerId"],
            agreement_uid=doc.get("agreementId"),
            callback_address=doc.get("callbackAddress") or "",
            history=[
                HistoryEntry(from_iso(h["at"]), h["message"], NegotiationState(h["state"]))
                for h in doc.get("history", [])
            ],
            reason=doc.get("reason"),
            offer=doc.get("offer"),
            agreement=doc.get("agreement"),
        )


def _new_process_id() -> str:
    return f"urn:uuid:{uuid.uuid4()}"


def _new_table(data_dir) -> ProcessTable[NegotiationProcess]:
    return ProcessTable(data_dir, NegotiationProcess.from_document, lambda p: p.process_id, UnknownProcess)


class _Side:
    role: Role
    _table: ProcessTable[NegotiationProcess]

    def __init__(self, participant_id: str, clock: Callable[[], datetime]):
        if not participant_id:
            raise ValueError("participant id must be non-empty")
        self.participant_id = participant_id
        self._clock = clock

    def _record(self, process: NegotiationProcess, kind: MessageKind, new_state: NegotiationState) -> None:
        process.state = new_state
        process.history.append(HistoryEntry(self._clock(), kind.value, new_state))
        if new_state not in HOLDS_AGREEMENT:
            process.agreement_uid = None
        log.info(
            "event=negotiation.transition side=%s process=%s message=%s state=%s",
            self.role.value.lower(),
            process.process_id,
            kind.value,
            new_state.value,
        )

    def _apply(self, process: NegotiationProcess, kind: MessageKind, sender: Role, event=None) -> None:
        self._record(process, kind, transition(process.state, kind, sender, event))

    def _terminate(self, process: NegotiationProcess, reason: str) -> NegotiationMessage:
        self._apply(process, K.TERMINATION, self.role)
        process.reason = reason
        return NegotiationMessage(
            K.TERMINATION,
            process_id=process.process_id,
            reason=reason,
            consumer_pid=process.consumer_pid,
            provider_pid=process.provider_pid,
        )

    def _reject(self, process: NegotiationProcess, exc: IllegalTransition) -> IllegalTransition:
        """Fail fast on a protocol violation: a live process is terminated."""
        if process.state not in ABSORBING:
            self._terminate(process, f"protocol violation: {exc}")
            self._table.save(process, process.to_document())
        exc.process = process
        return exc

    def get(self, process_id: str) -> NegotiationProcess:
        return self._table.get(process_id)

    def processes(self) -> list[NegotiationProcess]:
        return self._table.all()


# -- provider ---------------------------------------------------------------------


class NegotiationProvider(_Side):
    """Provider half: answers consumer messages against stored offers.

    ``resolve_target(urn)`` must raise TargetNotFound for unknown or deleted
    datasets and should not answer from a cache. It is consulted again,
    together with the stored offer, before offering and before agreeing.
    """

    role = Role.PROVIDER

    def __init__(
        self,
        participant_id: str,
        policies: PolicyStore,
        resolve_target: Callable[[str], Any],
        *,
        data_dir=None,
        clock: Callable[[], datetime] = utcnow,
    ):
        super().__init__(participant_id, clock)
        self.policies = policies
        self.resolve_target = resolve_target
        self._table = _new_table(data_dir)
        self._by_agreement = {
            p.agreement_uid: p.process_id for p in self._table.all() if p.agreement_uid
        }

    def find_by_agreement(self, agreement_uid: str) -> NegotiationProcess | None:
        return self._table.find(self._by_agreement.get(agreement_uid))

    def _reply(self, process: NegotiationProcess, kind: MessageKind, **fields) -> NegotiationMessage:
        return NegotiationMessage(
            kind,
            process_id=process.process_id,
            consumer_pid=process.consumer_pid,
            provider_pid=process.provider_pid,
            **fields,
        )

    def _double_check(self, offer_uid: str) -> OdrlPolicy:
        offer = self.policies.get(offer_uid)
        self.resolve_target(offer.target)
        if offer.kind is not PolicyKind.OFFER or offer.status is not PolicyStatus.ACTIVE:
            raise OfferInvalidated(offer_uid)
        return offer

    def _checked_offer(self, process: NegotiationProcess) -> OdrlPolicy | NegotiationMessage:
        try:
            return self._double_check(process.offer_uid)
        except TargetNotFound:
            return self._terminate(process, "target unresolved")
        except (OfferInvalidated, UnknownPolicy):
            return self._terminate(process, "policy invalidated")

    def _send_offer(self, process: NegotiationProcess) -> NegotiationMessage:
        offer = self._checked_offer(process)
        if isinstance(offer, NegotiationMessage):
            return offer
        self._apply(process, K.OFFER, Role.PROVIDER)
        process.offer = offer.to_document(meta=False)
        return self._reply(process, K.OFFER, offer=offer)

    def _send_agreement(self, process: NegotiationProcess) -> NegotiationMessage:
        offer = self._checked_offer(process)
        if isinstance(offer, NegotiationMessage):
            return offer
        try:
            agreement = self.policies.make_agreement(offer, process.consumer_pid)
        except OfferInvalidated:
            return self._terminate(process, "policy invalidated")
        self._apply(process, K.AGREEMENT, Role.PROVIDER)
        process.agreement_uid = agreement.uid
        process.agreement = agreement.to_document(meta=False)
        self._by_agreement[agreement.uid] = process.process_id
        return self._reply(process, K.AGREEMENT, agreement=agreement)

    def handle(self, message: NegotiationMessage) -> tuple[NegotiationProcess, NegotiationMessage | None]:
        """Handle a message sent by a consumer; returns the process and the reply."""
        if message.kind is K.REQUEST and message.process_id is None:
            return self._open(message)
        process = self._table.get(message.process_id)
        if message.consumer_pid and message.consumer_pid != process.consumer_pid:
            raise UnknownProcess(message.process_id)
        with self._table.lock(process.process_id):
            try:
                reply = self._dispatch(process, message)
            except IllegalTransition as exc:
                raise self._reject(process, exc) from None
            self._table.save(process, process.to_document())
        return process, reply

    def _open(self, message: NegotiationMessage) -> tuple[NegotiationProcess, NegotiationMessage]:
        offer_uid = message.requested_offer_uid
        self.policies.get(offer_uid)
        process = NegotiationProcess(
            process_id=_new_process_id(),
            consumer_pid=message.consumer_pid or "anonymous",
            provider_pid=self.participant_id,
            state=transition(None, K.REQUEST, Role.CONSUMER),
            offer_uid=offer_uid,
            callback_address=message.callback_address or "",
        )
        with self._table.lock(process.process_id):
            self._record(process, K.REQUEST, process.state)
            self._table.add(process)
            reply = self._send_offer(process)
            self._table.save(process, process.to_document())
        return process, reply

    def _dispatch(self, process: NegotiationProcess, message: NegotiationMessage) -> NegotiationMessage | None:
        self._apply(process, message.kind, Role.CONSUMER, message.event)
        if message.kind is K.REQUEST:
            # counter-request: the consumer asks for a (possibly different) stored offer
            process.offer_uid = message.requested_offer_uid or process.offer_uid
            return self._send_offer(process)
        if message.kind is K.EVENT:
            return self._send_agreement(process)
        if message.kind is K.VERIFICATION:
            self._apply(process, K.EVENT, Role.PROVIDER, E.FINALIZED)
            return self._reply(process, K.EVENT, event=E.FINALIZED)
        if message.kind is K.TERMINATION:
            process.reason = message.reason
            return None
        raise AssertionError(f"unreachable: {message.kind}")

    def initiate_offer(
        self, offer_uid: str, consumer_pid: str, callback_address: str = ""
    ) -> tuple[NegotiationProcess, NegotiationMessage]:
        """Provider-initiated flow: open a process by offering a stored policy."""
        offer = self._double_check(offer_uid)
        process = NegotiationProcess(
            process_id=_new_process_id(),
            consumer_pid=consumer_pid,
            provider_pid=self.participant_id,
            state=transition(None, K.OFFER, Role.PROVIDER),
            offer_uid=offer_uid,
            callback_address=callback_address,
            offer=offer.to_document(meta=False),
        )
        with self._table.lock(process.process_id):
            self._record(process, K.OFFER, process.state)
            self._table.add(process)
            self._table.save(process, process.to_document())
        return process, self._reply(process, K.OFFER, offer=offer)

    def offer_to(
        self, transport: ConsumerTransport, offer_uid: str, consumer_pid: str, callback_address: str
    ) -> NegotiationProcess:
        """Provider-initiated negotiation run to quiescence over ``transport``."""
        process, message = self.initiate_offer(offer_uid, consumer_pid, callback_address)
        converse(transport.send, self.handle, message)
        return process


# -- consumer ---------------------------------------------------------------------


class ProviderTransport(Protocol):
    def send(self, message: NegotiationMessage) -> NegotiationMessage | None: ...


class ConsumerTransport(Protocol):
    def send(self, message: NegotiationMessage) -> NegotiationMessage | None: ...


def converse(
    send: Callable[[NegotiationMessage], NegotiationMessage | None],
    handle: Callable[[NegotiationMessage], tuple[NegotiationProcess, NegotiationMessage | None]],
    outbound: NegotiationMessage | None,
) -> None:
    """Send, handle the answer, repeat; stops when either side has nothing to add."""
    while outbound is not None:
        reply = send(outbound)
        if reply is None:
            return
        _, outbound = handle(reply)


class LocalProviderTransport:
    """Delivers messages to an in-process provider."""

    def __init__(self, provider: NegotiationProvider):
        self.provider = provider

    def send(self, message: NegotiationMessage) -> NegotiationMessage | None:
        try:
            _, reply = self.provider.handle(message)
        except IllegalTransition as exc:
            process = exc.process
            if process is None:
                raise
            return NegotiationMessage(K.TERMINATION, process_id=process.process_id, reason=process.reason)
        return reply


def check_agreement(agreement: OdrlPolicy, offer: OdrlPolicy, assignee: str) -> None:
    problems = []
    if agreement.kind is not PolicyKind.AGREEMENT:
        problems.append("not an Agreement")
    if agreement.target != offer.target:
        problems.append("target differs")
    if agreement.assigner != offer.assigner:
        problems.append("assigner differs")
    if agreement.assignee != assignee:
        problems.append("assignee differs")
    if agreement.rules != offer.rules:
        problems.append("rules differ")
    if problems:
        raise AgreementMismatch(", ".join(problems))


class NegotiationConsumer(_Side):
    """Consumer half. With ``auto_accept`` unsolicited offers are accepted at once."""

    role = Role.CONSUMER

    def __init__(
        self,
        participant_id: str,
        *,
        data_dir=None,
        clock: Callable[[], datetime] = utcnow,
        auto_accept: bool = True,
    ):
        super().__init__(participant_id, clock)
        self.auto_accept = auto_accept
        self._table = _new_table(data_dir)

    def _send(self, process: NegotiationProcess, kind: MessageKind, **fields) -> NegotiationMessage:
        self._apply(process, kind, Role.CONSUMER, fields.get("event"))
        return NegotiationMessage(
            kind,
            process_id=process.process_id,
            consumer_pid=process.consumer_pid,
            provider_pid=process.provider_pid,
            **fields,
        )

    def negotiate(
        self,
        transport: ProviderTransport,
        offer_uid: str,
        callback_address: str = "",
        offer: OdrlPolicy | None = None,
    ) -> NegotiationProcess:
        """Run a consumer-initiated negotiation until neither side has more to say."""
        request = NegotiationMessage(
            K.REQUEST,
            offer_uid=offer_uid if offer is None else None,
            offer=offer,
            callback_address=callback_address,
            consumer_pid=self.participant_id,
        )
        sent_at = self._clock()
        reply = transport.send(request)
        if reply is None or not reply.process_id:
            raise MalformedMessage("provider answered the request without a processId")
        process = NegotiationProcess(
            process_id=reply.process_id,
            consumer_pid=self.participant_id,
            provider_pid=reply.provider_pid or "",
            state=transition(None, K.REQUEST, Role.CONSUMER),
            offer_uid=offer_uid,
            callback_address=callback_address,
            offer=offer.to_document(meta=False) if offer is not None else None,
            history=[HistoryEntry(sent_at, K.REQUEST.value, NegotiationState.REQUESTED)],
        )
        self._table.add(process)
        return self.drive(transport, reply)

    def drive(self, transport: ProviderTransport, incoming: NegotiationMessage) -> NegotiationProcess:
        """Handle ``incoming`` and keep exchanging until the conversation stops."""
        process, outbound = self.handle(incoming)
        converse(transport.send, self.handle, outbound)
        return process

    def handle(self, message: NegotiationMessage) -> tuple[NegotiationProcess, NegotiationMessage | None]:
        """Handle a message sent by the provider; returns the process and our reply."""
        process = self._table.find(message.process_id)
        if process is None:
            if message.kind is not K.OFFER or not message.process_id:
                raise UnknownProcess(message.process_id or "(missing processId)")
            process = NegotiationProcess(
                process_id=message.process_id,
                consumer_pid=self.participant_id,
                provider_pid=message.provider_pid or "",
                state=transition(None, K.OFFER, Role.PROVIDER),
                offer_uid=message.offer.uid,
                callback_address=message.callback_address or "",
                offer=message.offer.to_document(meta=False),
            )
            with self._table.lock(process.process_id):
                self._record(process, K.OFFER, process.state)
                self._table.add(process)
                reply = self._send(process, K.EVENT, event=E.ACCEPTED) if self.auto_accept else None
                self._table.save(process, process.to_document())
            return process, reply

        with self._table.lock(process.process_id):
            try:
                self._apply(process, message.kind, Role.PROVIDER, message.event)
            except IllegalTransition as exc:
                raise self._reject(process, exc) from None
            reply = self._react(process, message)
            self._table.save(process, process.to_document())
        return process, reply

    def _react(self, process: NegotiationProcess, message: NegotiationMessage) -> NegotiationMessage | None:
        if message.kind is K.OFFER:
            process.offer = message.offer.to_document(meta=False)
            process.offer_uid = message.offer.uid
            return self._send(process, K.EVENT, event=E.ACCEPTED)
        if message.kind is K.AGREEMENT:
            agreement = message.agreement
            process.agreement_uid = agreement.uid
            process.agreement = agreement.to_document(meta=False)
            try:
                if process.offer is None:
                    raise AgreementMismatch("no offer on record to compare against")
                check_agreement(agreement, OdrlPolicy.from_document(process.offer), self.participant_id)
            except AgreementMismatch as exc:
                log.warning("event=negotiation.agreement_mismatch process=%s detail=%s", process.process_id, exc)
                return self._terminate(process, "agreement mismatch")
            return self._send(process, K.VERIFICATION)
        if message.kind is K.TERMINATION:
            process.reason = message.reason
        return None

    def accept(self, process_id: str) -> NegotiationMessage:
        """Accept a pending offer by hand (used when ``auto_accept`` is off)."""
        process = self._table.get(process_id)
        with self._table.lock(process_id):
            message = self._send(process, K.EVENT, event=E.ACCEPTED)
            self._table.save(process, process.to_document())
        return message

    def terminate(self, process_id: str, reason: str) -> NegotiationMessage:
        process = self._table.get(process_id)
        with self._table.lock(process_id):
            message = self._terminate(process, reason)
            self._table.save(process, process.to_document())
        return message
