from dataclasses import replace

import pytest

from builders import dataset_urn, use_offer
from fedspace.errors import IllegalTransition, MalformedMessage, TargetNotFound, UnknownProcess
from fedspace.negotiation import (
    LocalProviderTransport,
    MessageKind,
    NegotiationConsumer,
    NegotiationEvent,
    NegotiationMessage,
    NegotiationProcess,
    NegotiationProvider,
    NegotiationState,
    Role,
    transition,
)
from fedspace.odrl.model import Constraint, OdrlPolicy, PolicyKind, Rule
from fedspace.odrl.store import PolicyStore
from oracles import load_negotiation_table

X = dataset_urn("x")
HAPPY = ["REQUESTED", "OFFERED", "ACCEPTED", "AGREED", "VERIFIED", "FINALIZED"]


class Recording:
    """Transport wrapper that keeps every message in both directions."""

    def __init__(self, inner, tamper=None):
        self.inner = inner
        self.tamper = tamper or (lambda m: m)
        self.seen: list[NegotiationMessage] = []

    def send(self, message):
        self.seen.append(message)
        reply = self.inner.send(message)
        if reply is not None:
            reply = self.tamper(reply)
            self.seen.append(reply)
        return reply


class ToConsumer:
    def __init__(self, consumer):
        self.consumer = consumer

    def send(self, message):
        return self.consumer.handle(message)[1]


def setup(clock, resolver=lambda urn: None, data_dir=None):
    policies = PolicyStore(clock=clock)
    offer = use_offer(policies, X)
    provider = NegotiationProvider("provider", policies, resolver, data_dir=data_dir, clock=clock)
    consumer = NegotiationConsumer("consumer-c", clock=clock)
    return policies, offer, provider, consumer


def states(process):
    return [s.value for s in process.states]


def all_cells():
    for state in [None, *NegotiationState]:
        for kind in MessageKind:
            events = list(NegotiationEvent) if kind is MessageKind.EVENT else [None]
            for event in events:
                for role in Role:
                    yield state, kind, event, role


def test_transition_function_matches_fixture_table():
    table = load_negotiation_table()
    checked = 0
    for state, kind, event, role in all_cells():
        key = (state.value if state else None, kind.value, event.value if event else None, role.value)
        expected = table.get(key)
        if expected is None:
            with pytest.raises(IllegalTransition):
                transition(state, kind, role, event)
        else:
            assert transition(state, kind, role, event).value == expected
        checked += 1
    assert checked == 8 * 7 * 2


def test_happy_path_both_sides(clock):
    policies, offer, provider, consumer = setup(clock)
    process = consumer.negotiate(LocalProviderTransport(provider), offer.uid)
    assert states(process) == HAPPY
    mirror = provider.get(process.process_id)
    assert states(mirror) == HAPPY
    agreement = policies.get(process.agreement_uid)
    assert agreement.kind is PolicyKind.AGREEMENT and agreement.assignee == "consumer-c"
    assert agreement.offer_uid == offer.uid
    assert provider.find_by_agreement(agreement.uid).process_id == process.process_id


def test_deleted_target_terminates(clock):
    def gone(urn):
        raise TargetNotFound(urn)

    _, offer, provider, consumer = setup(clock, resolver=gone)
    process = consumer.negotiate(LocalProviderTransport(provider), offer.uid)
    assert process.state is NegotiationState.TERMINATED
    mirror = provider.get(process.process_id)
    assert mirror.reason == "target unresolved" and mirror.agreement_uid is None


def test_offer_invalidated_before_request(clock):
    policies, offer, provider, consumer = setup(clock)
    policies.invalidate_by_target(X)
    process = consumer.negotiate(LocalProviderTransport(provider), offer.uid)
    assert process.state is NegotiationState.TERMINATED
    assert provider.get(process.process_id).reason == "policy invalidated"


def test_verification_out_of_order_is_rejected(clock):
    with pytest.raises(IllegalTransition):
        transition(NegotiationState.REQUESTED, MessageKind.VERIFICATION, Role.CONSUMER)
    _, offer, provider, _ = setup(clock)
    process, reply = provider.handle(NegotiationMessage(MessageKind.REQUEST, offer_uid=offer.uid, consumer_pid="c"))
    assert reply.kind is MessageKind.OFFER
    with pytest.raises(IllegalTransition):
        provider.handle(NegotiationMessage(MessageKind.VERIFICATION, process_id=process.process_id, consumer_pid="c"))
    assert provider.get(process.process_id).state is NegotiationState.TERMINATED


def test_tampered_agreement_is_refused(clock):
    _, offer, provider, consumer = setup(clock)

    def widen(message):
        if message.kind is MessageKind.AGREEMENT:
            loose = replace(message.agreement, permissions=(Rule("use"), Rule("distribute")), prohibitions=())
            return replace(message, agreement=loose)
        return message

    process = consumer.negotiate(Recording(LocalProviderTransport(provider), widen), offer.uid)
    assert process.state is NegotiationState.TERMINATED
    assert process.reason == "agreement mismatch"
    assert provider.get(process.process_id).state is NegotiationState.TERMINATED


def test_provider_initiated_offer(clock):
    _, offer, provider, consumer = setup(clock)
    process = provider.offer_to(ToConsumer(consumer), offer.uid, "consumer-c", "")
    assert states(provider.get(process.process_id)) == ["OFFERED", "ACCEPTED", "AGREED", "VERIFIED", "FINALIZED"]
    assert consumer.get(process.process_id).state is NegotiationState.FINALIZED


def test_manual_accept(clock):
    _, offer, provider, _ = setup(clock)
    consumer = NegotiationConsumer("consumer-c", clock=clock, auto_accept=False)
    process, message = provider.initiate_offer(offer.uid, "consumer-c")
    assert consumer.handle(message)[1] is None
    assert consumer.get(process.process_id).state is NegotiationState.OFFERED
    accept = consumer.accept(process.process_id)
    consumer.drive(LocalProviderTransport(provider), provider.handle(accept)[1])
    assert consumer.get(process.process_id).state is NegotiationState.FINALIZED


def test_terminal_states_absorb(clock):
    _, offer, provider, consumer = setup(clock)
    process = consumer.negotiate(LocalProviderTransport(provider), offer.uid)
    with pytest.raises(IllegalTransition):
        consumer.terminate(process.process_id, "changed my mind")
    with pytest.raises(IllegalTransition):
        provider.handle(
            NegotiationMessage(MessageKind.TERMINATION, process_id=process.process_id, reason="late")
        )
    assert provider.get(process.process_id).state is NegotiationState.FINALIZED


def test_consumer_termination_reaches_provider(clock):
    _, offer, provider, _ = setup(clock)
    process, _ = provider.handle(NegotiationMessage(MessageKind.REQUEST, offer_uid=offer.uid, consumer_pid="c"))
    provider.handle(NegotiationMessage(MessageKind.TERMINATION, process_id=process.process_id, reason="budget"))
    mirror = provider.get(process.process_id)
    assert (mirror.state, mirror.reason) == (NegotiationState.TERMINATED, "budget")


def test_foreign_consumer_cannot_touch_process(clock):
    _, offer, provider, _ = setup(clock)
    process, _ = provider.handle(NegotiationMessage(MessageKind.REQUEST, offer_uid=offer.uid, consumer_pid="c"))
    with pytest.raises(UnknownProcess):
        provider.handle(
            NegotiationMessage(MessageKind.TERMINATION, process_id=process.process_id, consumer_pid="mallory")
        )


def test_envelopes_round_trip(clock):
    _, offer, provider, consumer = setup(clock)
    transport = Recording(LocalProviderTransport(provider))
    consumer.negotiate(transport, offer.uid)
    kinds = {m.kind for m in transport.seen}
    assert kinds == set(MessageKind) - {MessageKind.TERMINATION}
    # store metadata (creation time, status) stays off the wire, so compare wire forms
    for message in transport.seen:
        envelope = message.to_envelope()
        assert NegotiationMessage.from_envelope(envelope).to_envelope() == envelope


@pytest.mark.parametrize(
    "doc",
    [
        [],
        {"@type": "ContractBananaMessage"},
        {"@type": "ContractAgreementMessage", "agreement": {}},
        {"@type": "ContractAgreementMessage", "processId": "p", "agreement": {"uid": "a"}},
        {"@type": "ContractNegotiationEventMessage", "processId": "p", "event": "MAYBE"},
        {"@type": "ContractRequestMessage"},
        {"@type": "ContractRequestMessage", "offer": "o", "processId": 7},
    ],
)
def test_malformed_envelopes(doc):
    with pytest.raises(MalformedMessage):
        NegotiationMessage.from_envelope(doc)


def test_inline_offer_request(clock):
    _, offer, provider, consumer = setup(clock)
    process = consumer.negotiate(LocalProviderTransport(provider), offer.uid, offer=offer)
    assert process.state is NegotiationState.FINALIZED


def test_process_document_round_trip_and_reload(clock, tmp_path):
    policies, offer, provider, consumer = setup(clock, data_dir=tmp_path)
    process = consumer.negotiate(LocalProviderTransport(provider), offer.uid)
    stored = provider.get(process.process_id)
    assert NegotiationProcess.from_document(stored.to_document()) == stored
    reloaded = NegotiationProvider("provider", policies, lambda urn: None, data_dir=tmp_path, clock=clock)
    assert reloaded.get(process.process_id) == stored
    assert reloaded.find_by_agreement(process.agreement_uid).process_id == process.process_id


def test_constrained_offer_copies_constraints(clock):
    policies = PolicyStore(clock=clock)
    offer = use_offer(policies, X, constraints=(Constraint("purpose", "eq", "research"),))
    provider = NegotiationProvider("provider", policies, lambda urn: None, clock=clock)
    process = NegotiationConsumer("c", clock=clock).negotiate(LocalProviderTransport(provider), offer.uid)
    agreement = OdrlPolicy.from_document(process.agreement)
    assert agreement.rules == offer.rules
