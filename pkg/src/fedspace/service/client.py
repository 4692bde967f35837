"""HTTP clients for connector instances and the transports built on them."""

from __future__ import annotations

import base64
from typing import Any
from urllib.parse import quote

import httpx

from fedspace import errors
from fedspace.errors import (
    FedspaceError,
    IllegalTransition,
    MalformedMessage,
    ProviderUnreachable,
    TransferTerminated,
)
from fedspace.negotiation import MessageKind, NegotiationMessage

_BY_CODE: dict[str, type[FedspaceError]] = {}


def _collect(cls: type[FedspaceError]) -> None:
    _BY_CODE.setdefault(cls.code, cls)
    for sub in cls.__subclasses__():
        _collect(sub)


_collect(FedspaceError)


def error_from_response(status: int, doc: Any) -> FedspaceError:
    """Rebuild the server-side exception from an error body."""
    body = doc if isinstance(doc, dict) else {}
    message = body.get("message") or f"HTTP {status}"
    cls = _BY_CODE.get(body.get("error", ""), FedspaceError)
    if cls is errors.InvariantViolation:
        exc: FedspaceError = cls([message])
    else:
        try:
            exc = cls(message)
        except TypeError:
            exc = FedspaceError(message)
    exc.status = status
    exc.body = body
    return exc


class ConnectorClient:
    """Thin client over a connector's public, admin and consumer routes."""

    def __init__(
        self,
        base_url: str,
        *,
        admin_token: str | None = None,
        timeout: float = 10.0,
        transport: httpx.BaseTransport | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.admin_token = admin_token
        self._http = httpx.Client(base_url=self.base_url, timeout=timeout, transport=transport)

    def close(self) -> None:
        self._http.close()

    def __enter__(self) -> ConnectorClient:
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def request(self, method: str, path: str, *, admin: bool = False, raw: bool = False, **kwargs) -> Any:
        headers = kwargs.pop("headers", {})
        if admin and self.admin_token is not None:
            headers["X-Admin-Token"] = self.admin_token
        try:
            resp = self._http.request(method, path, headers=headers, **kwargs)
        except httpx.HTTPError as exc:
            raise ProviderUnreachable(f"{self.base_url}: {exc}") from exc
        if resp.status_code >= 400:
            try:
                doc = resp.json()
            except ValueError:
                doc = {"message": resp.text}
            raise error_from_response(resp.status_code, doc)
        return resp.content if raw else resp.json()

    # -- public -------------------------------------------------------------------

    def healthz(self) -> dict:
        return self.request("GET", "/healthz")

    def catalog(self, domain: str | None = None) -> dict:
        return self.request("GET", "/catalog", params={"domain": domain} if domain else None)

    def dataset(self, urn: str) -> dict:
        return self.request("GET", f"/catalog/datasets/{quote(urn, safe='')}")

    def domains(self) -> list[dict]:
        return self.request("GET", "/domains")

    def datasets(self, domain: str) -> list[dict]:
        return self.request("GET", "/datasets", params={"domain": domain})

    def search(self, query: str) -> list[dict]:
        return self.request("GET", "/search", params={"q": query})

    def agreement(self, uid: str) -> dict:
        return self.request("GET", f"/agreements/{quote(uid, safe='')}")

    def negotiation(self, process_id: str) -> dict:
        return self.request("GET", f"/negotiations/{quote(process_id, safe='')}")

    def transfer_request(self, agreement_id: str, fmt: str, callback: str | None = None) -> dict:
        envelope = {"@type": "TransferRequestMessage", "agreementId": agreement_id, "format": fmt}
        if callback:
            envelope["callbackAddress"] = callback
        return self.request("POST", "/transfers/request", json=envelope)

    def transfer_command(self, transfer_id: str, command: str, reason: str | None = None) -> dict:
        body = {"reason": reason} if reason else None
        return self.request("POST", f"/transfers/{quote(transfer_id, safe='')}/{command}", json=body)

    def transfer(self, transfer_id: str) -> dict:
        return self.request("GET", f"/transfers/{quote(transfer_id, safe='')}")

    def fetch_data(self, urn: str, token: str) -> bytes:
        return self.request(
            "GET",
            f"/data/{quote(urn, safe='')}",
            raw=True,
            headers={"Authorization": f"Bearer {token}"},
        )

    # -- admin ----------------------------------------------------------------------

    def ingest(self, text: str | bytes) -> dict:
        data = text.encode("utf-8") if isinstance(text, str) else text
        return self.request("POST", "/admin/ingest", admin=True, content=data)

    def federate(self, source_url: str) -> dict:
        return self.request("POST", "/admin/federate", admin=True, json={"source": source_url})

    def create_policy(self, doc: dict) -> dict:
        return self.request("POST", "/admin/policies", admin=True, json=doc)

    def list_policies(self, target: str | None = None) -> list[dict]:
        return self.request("GET", "/admin/policies", admin=True, params={"target": target} if target else None)

    def delete_entity(self, urn: str) -> dict:
        return self.request("DELETE", "/admin/entities", admin=True, params={"urn": urn})

    def add_lineage(self, upstream: str, downstream: str) -> dict:
        return self.request("POST", "/admin/lineage", admin=True, json={"upstream": upstream, "downstream": downstream})

    def sync(self) -> dict:
        return self.request("POST", "/admin/sync", admin=True)

    # -- consumer driver --------------------------------------------------------------

    def consumer_negotiate(self, provider_url: str, offer_id: str) -> dict:
        return self.request("POST", "/consumer/negotiations", json={"providerUrl": provider_url, "offerId": offer_id})

    def consumer_transfer(self, provider_url: str, agreement_id: str, fmt: str | None = None) -> tuple[dict, bytes]:
        body = {"providerUrl": provider_url, "agreementId": agreement_id}
        if fmt:
            body["format"] = fmt
        doc = self.request("POST", "/consumer/transfers", json=body)
        return doc["transfer"], base64.b64decode(doc["data"])


_PROVIDER_ROUTES = {
    MessageKind.EVENT: "events",
    MessageKind.VERIFICATION: "agreement/verification",
    MessageKind.TERMINATION: "termination",
    MessageKind.REQUEST: "request",
}


def _reply_of(doc: dict) -> NegotiationMessage | None:
    reply = doc.get("reply")
    return NegotiationMessage.from_envelope(reply) if reply is not None else None


def _termination_from(exc: IllegalTransition) -> NegotiationMessage:
    process = (getattr(exc, "body", None) or {}).get("process") or {}
    if process.get("state") != "TERMINATED":
        raise exc
    return NegotiationMessage(
        MessageKind.TERMINATION,
        process_id=process.get("processId"),
        reason=process.get("reason"),
    )


class HttpProviderTransport:
    """Consumer-to-provider message delivery over the negotiation routes."""

    def __init__(self, client: ConnectorClient):
        self.client = client

    def send(self, message: NegotiationMessage) -> NegotiationMessage | None:
        if message.kind is MessageKind.REQUEST and message.process_id is None:
            path = "/negotiations/request"
        elif message.kind in _PROVIDER_ROUTES:
            path = f"/negotiations/{quote(message.process_id, safe='')}/{_PROVIDER_ROUTES[message.kind]}"
        else:
            raise MalformedMessage(f"a consumer does not send {message.kind.value}")
        try:
            doc = self.client.request("POST", path, json=message.to_envelope())
        except IllegalTransition as exc:
            # the provider terminated the process; report it like a termination message
            return _termination_from(exc)
        return _reply_of(doc)


class HttpConsumerTransport:
    """Provider-to-consumer delivery to a consumer's callback route."""

    def __init__(self, callback_address: str, *, timeout: float = 10.0, transport: httpx.BaseTransport | None = None):
        self.client = ConnectorClient(callback_address, timeout=timeout, transport=transport)

    def send(self, message: NegotiationMessage) -> NegotiationMessage | None:
        try:
            doc = self.client.request("POST", "", json=message.to_envelope())
        except IllegalTransition as exc:
            return _termination_from(exc)
        return _reply_of(doc)


def dataset_format(provider: ConnectorClient, urn: str) -> str:
    doc = provider.dataset(urn)
    distributions = doc.get("dcat:distribution") or []
    if not distributions:
        raise MalformedMessage(f"{urn} has no distribution")
    return distributions[0]["dct:format"]


def pull_transfer(provider: ConnectorClient, agreement_id: str, fmt: str | None = None) -> tuple[dict, bytes]:
    """Consumer data client: request, start, fetch and complete one transfer."""
    if fmt is None:
        fmt = dataset_format(provider, provider.agreement(agreement_id)["target"])
    process = provider.transfer_request(agreement_id, fmt)
    transfer_id = process["transferId"]
    if process["state"] == "REQUESTED":
        process = provider.transfer_command(transfer_id, "start")
    if process["state"] != "STARTED":
        reason = process.get("reason")
        raise TransferTerminated(f"transfer {transfer_id} {process['state']}: {reason}", reason, process)
    address = process["dataAddress"]
    data = provider.fetch_data(process["target"], address["accessToken"])
    return provider.transfer_command(transfer_id, "complete"), data
