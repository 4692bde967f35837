"""Client boundary in front of an entity store's query interface.

The facade talks to a store only through :class:`StoreClient`, so the
in-process store and a remote one served over HTTP are interchangeable.
Every query takes a session token obtained from ``authenticate``.
"""

from __future__ import annotations

import threading
from typing import Any, Iterable, Protocol

import httpx

from fedspace.errors import (
    BadCredentials,
    DeletedEntity,
    EmptyQuery,
    SourceUnreachable,
    StoreUnavailable,
    TokenExpired,
    UnknownUrn,
)
from fedspace.store.auth import SessionToken, TokenIssuer
from fedspace.store.model import (
    ChangeEvent,
    DatasetAspect,
    DatasetDetail,
    Direction,
    EntityRecord,
    Page,
    PageRequest,
)
from fedspace.store.store import DATASET_FIELDS, EntityStore


class StoreClient(Protocol):
    query_count: int

    def authenticate(self, client_id: str, client_secret: str) -> SessionToken: ...

    def list_domains(self, token: str, page: PageRequest) -> Page[EntityRecord]: ...

    def get_entity(self, token: str, urn: str) -> EntityRecord: ...

    def list_datasets_in_domain(
        self, token: str, domain: str, page: PageRequest
    ) -> Page[tuple[EntityRecord, DatasetAspect]]: ...

    def query_dataset(self, token: str, urn: str, fields: Iterable[str] = DATASET_FIELDS) -> dict: ...

    def search_datasets(self, token: str, query: str, page: PageRequest) -> Page[EntityRecord]: ...

    def events_since(self, token: str, cursor: int) -> list[ChangeEvent]: ...


class LocalStoreClient:
    """In-process client; ``query_count`` counts store reads (auth excluded)."""

    def __init__(self, store: EntityStore, issuer: TokenIssuer):
        self.store = store
        self.issuer = issuer
        self.query_count = 0
        self._lock = threading.Lock()

    def _query(self, token: str) -> EntityStore:
        self.issuer.check(token)
        with self._lock:
            self.query_count += 1
        return self.store

    def authenticate(self, client_id: str, client_secret: str) -> SessionToken:
        return self.issuer.issue(client_id, client_secret)

    def list_domains(self, token, page=PageRequest()):
        return self._query(token).list_domains(page)

    def get_entity(self, token, urn):
        return self._query(token).get_entity(urn)

    def list_datasets_in_domain(self, token, domain, page=PageRequest()):
        return self._query(token).list_datasets_in_domain(domain, page)

    def query_dataset(self, token, urn, fields=DATASET_FIELDS):
        return self._query(token).query_dataset(urn, fields)

    def search_datasets(self, token, query, page=PageRequest()):
        return self._query(token).search_datasets(query, page)

    def events_since(self, token, cursor):
        return self._query(token).events_since(cursor)


def _page(doc: dict, convert) -> Page:
    return Page([convert(item) for item in doc["items"]], doc["offset"], doc["limit"], doc["total"])


def _row(doc: dict) -> tuple[EntityRecord, DatasetAspect]:
    record = EntityRecord.from_dict(doc["record"])
    return record, DatasetAspect.from_dict(record.urn, doc["aspect"])


class HttpStoreClient:
    """Client for the ``/store`` routes of a remote connector instance."""

    def __init__(self, base_url: str, *, timeout: float = 10.0, transport: httpx.BaseTransport | None = None):
        self.base_url = base_url.rstrip("/")
        self.query_count = 0
        self._http = httpx.Client(base_url=self.base_url, timeout=timeout, transport=transport)

    def close(self) -> None:
        self._http.close()

    def _request(self, method: str, path: str, token: str | None = None, **kwargs) -> Any:
        headers = {"Authorization": f"Bearer {token}"} if token else {}
        try:
            resp = self._http.request(method, path, headers=headers, **kwargs)
        except httpx.HTTPError as exc:
            raise StoreUnavailable(f"{self.base_url}: {exc}") from exc
        if token is not None:
            self.query_count += 1
        if resp.status_code < 400:
            return resp.json()
        try:
            message = resp.json().get("message", resp.text)
        except ValueError:
            message = resp.text
        if resp.status_code == 401:
            raise (BadCredentials if token is None else TokenExpired)(message)
        if resp.status_code == 404:
            raise UnknownUrn(message)
        if resp.status_code == 410:
            raise DeletedEntity(message)
        if resp.status_code == 400:
            raise EmptyQuery(message)
        raise StoreUnavailable(f"{self.base_url}{path}: HTTP {resp.status_code} {message}")

    def authenticate(self, client_id: str, client_secret: str) -> SessionToken:
        doc = self._request("POST", "/store/token", json={"clientId": client_id, "clientSecret": client_secret})
        return SessionToken.from_dict(doc)

    def list_domains(self, token, page=PageRequest()):
        doc = self._request("GET", "/store/domains", token, params={"offset": page.offset, "limit": page.limit})
        return _page(doc, EntityRecord.from_dict)

    def get_entity(self, token, urn):
        return EntityRecord.from_dict(self._request("GET", "/store/entity", token, params={"urn": urn}))

    def list_datasets_in_domain(self, token, domain, page=PageRequest()):
        params = {"urn": domain, "offset": page.offset, "limit": page.limit}
        return _page(self._request("GET", "/store/domain-datasets", token, params=params), _row)

    def query_dataset(self, token, urn, fields=DATASET_FIELDS):
        params = {"urn": urn, "fields": ",".join(fields)}
        return self._request("GET", "/store/dataset", token, params=params)

    def get_dataset_detail(self, token, urn) -> DatasetDetail:
        return DatasetDetail.from_dict(self._request("GET", "/store/dataset-detail", token, params={"urn": urn}))

    def search_datasets(self, token, query, page=PageRequest()):
        params = {"q": query, "offset": page.offset, "limit": page.limit}
        return _page(self._request("GET", "/store/search", token, params=params), EntityRecord.from_dict)

    def get_lineage(self, token, urn, direction: Direction) -> list[str]:
        params = {"urn": urn, "direction": Direction(direction).value}
        return self._request("GET", "/store/lineage", token, params=params)["urns"]

    def events_since(self, token, cursor):
        doc = self._request("GET", "/store/changes", token, params={"cursor": cursor})
        return [ChangeEvent.from_dict(e) for e in doc["events"]]


class HttpSource:
    """Remote store seen as a federation source; authenticates on demand."""

    def __init__(self, client: HttpStoreClient, client_id: str, client_secret: str):
        self.client = client
        self._credentials = (client_id, client_secret)
        self._token: str | None = None

    def _call(self, fn, *args):
        for attempt in (0, 1):
            try:
                if self._token is None:
                    self._token = self.client.authenticate(*self._credentials).token
                return fn(self._token, *args)
            except TokenExpired:
                self._token = None
                if attempt:
                    raise SourceUnreachable("source keeps rejecting session tokens")
            except (StoreUnavailable, BadCredentials) as exc:
                raise SourceUnreachable(str(exc)) from exc

    def list_domains(self, page):
        return self._call(self.client.list_domains, page)

    def list_datasets_in_domain(self, domain, page):
        return self._call(self.client.list_datasets_in_domain, domain, page)

    def get_dataset_detail(self, urn):
        return self._call(self.client.get_dataset_detail, urn)
