"""HTTP routes of a connector instance.

Provider routes (catalog, negotiation, transfer, data, store query and most
admin routes) exist only when the role includes PROVIDER; the consumer
driver and callback routes only when it includes CONSUMER.
"""

from __future__ import annotations

import base64
import logging
from typing import Any, Callable

from fastapi import APIRouter, Body, Depends, FastAPI, Header, Query, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import FileResponse, JSONResponse

from fedspace.dcat import CONTEXT, catalog_to_document, dataset_to_document, service_to_document
from fedspace.errors import (
    AgreementInvalidated,
    AgreementMismatch,
    AlreadyDeleted,
    BadCredentials,
    DeletedEntity,
    DuplicateEdge,
    EmptyQuery,
    ExpiredToken,
    FedspaceError,
    FormatMismatch,
    IllegalTransition,
    IngestError,
    InvalidPolicy,
    InvalidRecord,
    InvalidToken,
    InvariantViolation,
    MalformedMessage,
    MalformedUrn,
    MissingParentDomain,
    NegotiationNotFinalized,
    NotAnOffer,
    OfferInvalidated,
    ParseError,
    PolicyInvalidated,
    ProviderUnreachable,
    SchemaError,
    SelfLoop,
    SourceUnreachable,
    StoreUnavailable,
    TargetNotFound,
    TokenExpired,
    TransferNotStarted,
    TransferTerminated,
    UnknownAgreement,
    UnknownPolicy,
    UnknownProcess,
    UnknownUrn,
    WrongTarget,
)
from fedspace.negotiation import MessageKind, NegotiationMessage
from fedspace.odrl.model import PolicyKind, PolicyStatus, Rule
from fedspace.service.client import HttpConsumerTransport
from fedspace.service.runtime import Runtime
from fedspace.store import HttpSource, HttpStoreClient, PageRequest, parse_ingestion
from fedspace.store.model import Direction
from fedspace.transfer import TransferCommand, TransferMessage, TransferMessageKind

log = logging.getLogger(__name__)

STATUS: list[tuple[type[FedspaceError], int]] = [
    (TransferTerminated, 409),
    (IllegalTransition, 409),
    (UnknownProcess, 404),
    (UnknownPolicy, 404),
    (UnknownAgreement, 404),
    (UnknownUrn, 404),
    (TargetNotFound, 404),
    (DeletedEntity, 410),
    (BadCredentials, 401),
    (TokenExpired, 401),
    (InvalidToken, 401),
    (ExpiredToken, 401),
    (WrongTarget, 403),
    (TransferNotStarted, 409),
    (AlreadyDeleted, 409),
    (MissingParentDomain, 409),
    (DuplicateEdge, 409),
    (OfferInvalidated, 409),
    (PolicyInvalidated, 409),
    (AgreementInvalidated, 409),
    (NegotiationNotFinalized, 409),
    (AgreementMismatch, 409),
    (SourceUnreachable, 502),
    (ProviderUnreachable, 502),
    (StoreUnavailable, 503),
    (MalformedMessage, 400),
    (MalformedUrn, 400),
    (InvalidRecord, 400),
    (EmptyQuery, 400),
    (IngestError, 400),
    (InvalidPolicy, 400),
    (NotAnOffer, 400),
    (ParseError, 400),
    (SchemaError, 400),
    (InvariantViolation, 400),
    (FormatMismatch, 400),
    (SelfLoop, 400),
]


def status_for(exc: FedspaceError) -> int:
    for cls, status in STATUS:
        if isinstance(exc, cls):
            return status
    return 500


def _error_body(exc: FedspaceError) -> dict[str, Any]:
    body: dict[str, Any] = {"error": exc.code, "message": str(exc)}
    process = getattr(exc, "process", None)
    if process is not None:
        body["process"] = process if isinstance(process, dict) else process.to_document()
    return body


def _negotiation_doc(process, reply: NegotiationMessage | None) -> dict[str, Any]:
    doc = process.to_document()
    doc["reply"] = reply.to_envelope() if reply is not None else None
    return doc


def _public_record(record) -> dict[str, str]:
    return {"urn": record.urn, "name": record.name, "description": record.description}


def _metadata_doc(meta) -> dict[str, str]:
    return {
        "urn": meta.urn,
        "title": meta.title,
        "domain": meta.domain_urn,
        "distributionType": meta.distribution_type.value,
        "accessEndpoint": meta.access_endpoint,
        "authScheme": meta.auth_scheme.value,
        "format": meta.format_hint,
    }


def create_app(runtime: Runtime) -> FastAPI:
    config = runtime.config
    app = FastAPI(title="fedspace connector", docs_url=None, redoc_url=None, openapi_url=None)
    app.state.runtime = runtime

    @app.exception_handler(FedspaceError)
    async def _fedspace_error(request: Request, exc: FedspaceError):
        status = status_for(exc)
        log.info("event=http.error path=%s status=%d code=%s", request.url.path, status, exc.code)
        return JSONResponse(_error_body(exc), status_code=status)

    @app.exception_handler(RequestValidationError)
    async def _validation_error(request: Request, exc: RequestValidationError):
        return JSONResponse({"error": "bad_request", "message": str(exc.errors())}, status_code=400)

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    def require_admin(x_admin_token: str | None = Header(default=None)) -> None:
        if x_admin_token != config.admin_token:
            raise BadCredentials("missing or wrong X-Admin-Token")

    if config.role.provides:
        app.include_router(_provider_routes(runtime))
        app.include_router(_store_routes(runtime))
        app.include_router(_admin_routes(runtime), dependencies=[Depends(require_admin)])
    if config.role.consumes:
        app.include_router(_consumer_routes(runtime))
    return app


# -- provider -------------------------------------------------------------------------


def _provider_routes(rt: Runtime) -> APIRouter:
    router = APIRouter()
    facade, provider, transfers, policies = rt.facade, rt.provider, rt.transfers, rt.policies

    def read(fn: Callable[[Any], Any]) -> Any:
        # the consumer-facing view is unavailable when the facade cannot reach its store
        try:
            return facade.with_session(fn)
        except (BadCredentials, TokenExpired) as exc:
            raise StoreUnavailable(f"facade cannot authenticate to the store: {exc}") from exc

    @router.get("/catalog")
    def catalog(domain: str | None = None):
        def build(token):
            domains = [domain] if domain else [c.urn for c in facade.list_catalogs(token)]
            return [catalog_to_document(facade.to_dcat(token, d)) for d in domains]

        return {
            "@context": CONTEXT,
            "@type": "dcat:Catalog",
            "dct:identifier": f"{rt.config.participant_id}#catalog",
            "dct:title": f"Catalogs of {rt.config.participant_id}",
            "dcat:catalog": read(build),
        }

    @router.get("/catalog/datasets/{urn:path}")
    def dataset(urn: str):
        ds, service = read(lambda token: facade.dataset_to_dcat(token, urn))
        doc = dataset_to_document(ds)
        doc["@context"] = CONTEXT
        doc["dcat:service"] = [service_to_document(service)]
        doc["odrl:hasPolicy"] = [
            p.to_document(meta=False)
            for p in policies.list_policies_by_target(urn)
            if p.kind is PolicyKind.OFFER and p.status is PolicyStatus.ACTIVE
        ]
        return doc

    @router.get("/domains")
    def domains():
        return [
            {"urn": c.urn, "title": c.title, "datasetCount": c.dataset_count}
            for c in read(facade.list_catalogs)
        ]

    @router.get("/datasets")
    def datasets(domain: str):
        return [_metadata_doc(m) for m in read(lambda token: facade.list_datasets(token, domain))]

    @router.get("/search")
    def search(q: str):
        return [_public_record(r) for r in read(lambda token: facade.search(token, q))]

    @router.get("/agreements/{uid}")
    def agreement(uid: str):
        policy = policies.get(uid)
        if policy.kind is not PolicyKind.AGREEMENT:
            raise UnknownAgreement(uid)
        return policy.to_document()

    # negotiation ---------------------------------------------------------------------

    def negotiate(envelope: Any, expected: MessageKind, process_id: str | None = None) -> dict:
        message = NegotiationMessage.from_envelope(envelope)
        if message.kind is not expected:
            raise MalformedMessage(f"expected {expected.value}, got {message.kind.value}")
        if process_id is not None and message.process_id != process_id:
            raise MalformedMessage("processId does not match the route")
        process, reply = provider.handle(message)
        return _negotiation_doc(process, reply)

    @router.post("/negotiations/request")
    def negotiation_request(envelope: Any = Body(...)):
        message = NegotiationMessage.from_envelope(envelope)
        if message.kind is not MessageKind.REQUEST or message.process_id is not None:
            raise MalformedMessage("a new negotiation starts with a ContractRequestMessage without processId")
        process, reply = provider.handle(message)
        return _negotiation_doc(process, reply)

    @router.get("/negotiations/{process_id}")
    def negotiation_get(process_id: str):
        return provider.get(process_id).to_document()

    @router.post("/negotiations/{process_id}/request")
    def negotiation_counter(process_id: str, envelope: Any = Body(...)):
        return negotiate(envelope, MessageKind.REQUEST, process_id)

    @router.post("/negotiations/{process_id}/events")
    def negotiation_event(process_id: str, envelope: Any = Body(...)):
        return negotiate(envelope, MessageKind.EVENT, process_id)

    @router.post("/negotiations/{process_id}/agreement/verification")
    def negotiation_verification(process_id: str, envelope: Any = Body(...)):
        return negotiate(envelope, MessageKind.VERIFICATION, process_id)

    @router.post("/negotiations/{process_id}/termination")
    def negotiation_termination(process_id: str, envelope: Any = Body(...)):
        return negotiate(envelope, MessageKind.TERMINATION, process_id)

    # transfer ------------------------------------------------------------------------

    @router.post("/transfers/request")
    def transfer_request(envelope: Any = Body(...)):
        message = TransferMessage.from_envelope(envelope)
        if message.kind is not TransferMessageKind.REQUEST:
            raise MalformedMessage(f"expected TransferRequestMessage, got {message.kind.value}")
        process = transfers.request_transfer(message.agreement_id, message.format, message.callback_address or "")
        return process.to_document()

    @router.get("/transfers/{transfer_id}")
    def transfer_get(transfer_id: str):
        return transfers.get(transfer_id).to_document()

    @router.post("/transfers/{transfer_id}/{command}")
    def transfer_command(transfer_id: str, command: str, body: Any = Body(default=None)):
        try:
            cmd = TransferCommand(command.upper())
        except ValueError:
            raise UnknownProcess(f"no transfer command {command!r}") from None
        reason = body.get("reason") if isinstance(body, dict) else None
        if reason is not None and not isinstance(reason, str):
            raise MalformedMessage("'reason' must be a string")
        return transfers.apply(transfer_id, cmd, reason).to_document()

    @router.get("/data/{urn:path}")
    def data(urn: str, authorization: str | None = Header(default=None)):
        scheme, _, token = (authorization or "").partition(" ")
        if scheme.lower() != "bearer" or not token:
            raise InvalidToken("bearer token required")
        return FileResponse(transfers.authorize(token.strip(), urn))

    return router


# -- internal store query interface ---------------------------------------------------------


def _store_routes(rt: Runtime) -> APIRouter:
    router = APIRouter(prefix="/store")
    store, issuer = rt.store, rt.issuer

    def session(authorization: str | None = Header(default=None)) -> None:
        scheme, _, token = (authorization or "").partition(" ")
        if scheme.lower() != "bearer":
            raise TokenExpired("bearer session token required")
        issuer.check(token.strip())

    def page_of(page, convert) -> dict:
        return {
            "items": [convert(i) for i in page.items],
            "offset": page.offset,
            "limit": page.limit,
            "total": page.total,
        }

    @router.post("/token")
    def token(body: dict = Body(...)):
        return issuer.issue(str(body.get("clientId", "")), str(body.get("clientSecret", ""))).to_dict()

    guarded = APIRouter(dependencies=[Depends(session)])

    @guarded.get("/domains")
    def domains(offset: int = 0, limit: int = 100):
        return page_of(store.list_domains(PageRequest(offset, limit)), lambda r: r.to_dict())

    @guarded.get("/entity")
    def entity(urn: str):
        return store.get_entity(urn).to_dict()

    @guarded.get("/domain-datasets")
    def domain_datasets(urn: str, offset: int = 0, limit: int = 100):
        page = store.list_datasets_in_domain(urn, PageRequest(offset, limit))
        return page_of(page, lambda row: {"record": row[0].to_dict(), "aspect": row[1].to_dict()})

    @guarded.get("/dataset")
    def dataset(urn: str, fields: str = Query(...)):
        try:
            return store.query_dataset(urn, [f for f in fields.split(",") if f])
        except ValueError as exc:
            if isinstance(exc, FedspaceError):
                raise
            raise EmptyQuery(str(exc)) from None

    @guarded.get("/dataset-detail")
    def dataset_detail(urn: str):
        return store.get_dataset_detail(urn).to_dict()

    @guarded.get("/search")
    def search(q: str, offset: int = 0, limit: int = 100):
        return page_of(store.search_datasets(q, PageRequest(offset, limit)), lambda r: r.to_dict())

    @guarded.get("/lineage")
    def lineage(urn: str, direction: Direction):
        return {"urns": store.get_lineage(urn, direction)}

    @guarded.get("/changes")
    def changes(cursor: int = 0, limit: int = 1000):
        return {"events": [e.to_dict() for e in store.events_since(cursor, limit)]}

    router.include_router(guarded)
    return router


# -- admin --------------------------------------------------------------------------------


def _rules(doc: dict, key: str) -> list[Rule]:
    raw = doc.get(key, [])
    if not isinstance(raw, list):
        raise InvalidPolicy(f"{key!r} must be a list")
    return [Rule.from_dict(r) for r in raw]


def _admin_routes(rt: Runtime) -> APIRouter:
    router = APIRouter(prefix="/admin")
    store, policies, provider, config = rt.store, rt.policies, rt.provider, rt.config

    @router.post("/policies", status_code=201)
    def create_policy(doc: dict = Body(...)):
        raw_kind = doc.get("@type", PolicyKind.OFFER.value)
        if raw_kind not in (PolicyKind.OFFER.value, PolicyKind.SET.value):
            raise InvalidPolicy("only Offer and Set policies can be created directly")
        kind = PolicyKind(raw_kind)
        target = doc.get("target")
        if not isinstance(target, str):
            raise InvalidPolicy("policy needs a string 'target'")
        policy = policies.create_policy(
            kind,
            target,
            doc.get("assigner") or config.participant_id,
            permissions=_rules(doc, "permission"),
            prohibitions=_rules(doc, "prohibition"),
            obligations=_rules(doc, "obligation"),
            assignee=doc.get("assignee"),
            resolver=rt.resolve_fresh,
        )
        return policy.to_document()

    @router.get("/policies")
    def list_policies(target: str | None = None):
        found = policies.list_policies_by_target(target) if target else policies.all()
        return [p.to_document() for p in found]

    @router.post("/ingest")
    async def ingest(request: Request):
        body = await request.body()
        items = parse_ingestion(body, source_catalog_id=config.catalog_id)
        return store.ingest(items).to_dict()

    @router.post("/federate")
    def federate(body: Any = Body(...)):
        if isinstance(body, bytes):
            body = body.decode("utf-8", "replace").strip()
        if isinstance(body, str):
            body = {"source": body}
        source_url = body.get("source") if isinstance(body, dict) else None
        if not isinstance(source_url, str) or not source_url:
            raise MalformedMessage("federate needs a source URL")
        client = HttpStoreClient(source_url, transport=rt.peer_transport)
        try:
            source = HttpSource(
                client,
                body.get("clientId", config.facade.client_id),
                body.get("clientSecret", config.facade.client_secret),
            )
            return store.federate_pull(source, page_size=config.page_size).to_dict()
        finally:
            client.close()

    @router.delete("/entities")
    def delete_entity(urn: str):
        return store.delete_entity(urn).to_dict()

    @router.post("/lineage", status_code=201)
    def add_lineage(body: dict = Body(...)):
        store.add_lineage_edge(str(body.get("upstream", "")), str(body.get("downstream", "")))
        return {"upstream": body["upstream"], "downstream": body["downstream"]}

    @router.post("/sync")
    def sync():
        return {"cursor": rt.pump.drain()}

    @router.post("/negotiations/offer")
    def offer(body: dict = Body(...)):
        for key in ("offerId", "consumerPid", "callbackAddress"):
            if not isinstance(body.get(key), str) or not body[key]:
                raise MalformedMessage(f"missing {key!r}")
        transport = HttpConsumerTransport(body["callbackAddress"], transport=rt.peer_transport)
        try:
            process = provider.offer_to(transport, body["offerId"], body["consumerPid"], body["callbackAddress"])
        finally:
            transport.client.close()
        return process.to_document()

    return router


# -- consumer -------------------------------------------------------------------------


def _consumer_routes(rt: Runtime) -> APIRouter:
    router = APIRouter()
    consumer = rt.consumer

    @router.post("/callback/negotiations")
    def callback(envelope: Any = Body(...)):
        message = NegotiationMessage.from_envelope(envelope)
        process, reply = consumer.handle(message)
        return _negotiation_doc(process, reply)

    @router.get("/consumer/negotiations/{process_id}")
    def consumer_get(process_id: str):
        return consumer.get(process_id).to_document()

    @router.post("/consumer/negotiations")
    def consumer_negotiate(body: dict = Body(...)):
        for key in ("providerUrl", "offerId"):
            if not isinstance(body.get(key), str) or not body[key]:
                raise MalformedMessage(f"missing {key!r}")
        return rt.negotiate(body["providerUrl"], body["offerId"]).to_document()

    @router.post("/consumer/transfers")
    def consumer_transfer(body: dict = Body(...)):
        for key in ("providerUrl", "agreementId"):
            if not isinstance(body.get(key), str) or not body[key]:
                raise MalformedMessage(f"missing {key!r}")
        process, data = rt.pull(body["providerUrl"], body["agreementId"], body.get("format"))
        return {"transfer": process, "data": base64.b64encode(data).decode("ascii")}

    return router
