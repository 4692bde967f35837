"""Read-only integration layer between the entity store and the connector.

The facade authenticates against a store's query interface, lists domains
and datasets, resolves operational metadata for a dataset urn, and maps the
entity model onto the DCAT view. Reads are cached per query fingerprint for
``cache_ttl_seconds`` and dropped early when a matching change event arrives.
"""

from __future__ import annotations

import logging
import os
import threading
from dataclasses import dataclass
from datetime import datetime, timedelta
from typing import Any, Callable, Mapping

from fedspace.dcat import DcatCatalog, DcatDataService, DcatDataset, DcatDistribution, validate_catalog
from fedspace.errors import (
    DeletedEntity,
    InvariantViolation,
    StoreUnavailable,
    TargetNotFound,
    TokenExpired,
    UnknownUrn,
)
from fedspace.store.auth import SessionToken
from fedspace.store.client import StoreClient
from fedspace.store.model import (
    AuthScheme,
    ChangeEvent,
    ChangeKind,
    DistributionType,
    EntityRecord,
    PageRequest,
)
from fedspace.store.store import DATASET_FIELDS
from fedspace.timeutil import utcnow
from fedspace.urn import is_dataset_urn, is_domain_urn

log = logging.getLogger(__name__)

# Exactly the fields resolve_dataset asks the store for.
OPERATIONAL_FIELDS = tuple(f for f in DATASET_FIELDS if f != "version_tag")


@dataclass(frozen=True)
class FacadeConfig:
    store_url: str | None = None
    client_id: str = "facade"
    client_secret: str = "facade-secret"
    cache_ttl_seconds: int = 30
    page_size: int = 100

    def __post_init__(self):
        if self.cache_ttl_seconds < 0:
            raise ValueError("cache ttl must be >= 0")
        if self.page_size < 1:
            raise ValueError("page size must be >= 1")

    @classmethod
    def from_env(cls, env: Mapping[str, str] = os.environ, base: FacadeConfig | None = None) -> FacadeConfig:
        base = base or cls()
        return cls(
            store_url=env.get("FACADE_STORE_URL", base.store_url) or None,
            client_id=env.get("FACADE_CLIENT_ID", base.client_id),
            client_secret=env.get("FACADE_CLIENT_SECRET", base.client_secret),
            cache_ttl_seconds=int(env.get("FACADE_CACHE_TTL_SECONDS", base.cache_ttl_seconds)),
            page_size=int(env.get("FACADE_PAGE_SIZE", base.page_size)),
        )


@dataclass(frozen=True)
class OperationalMetadata:
    urn: str
    title: str
    domain_urn: str
    distribution_type: DistributionType
    access_endpoint: str
    auth_scheme: AuthScheme
    format_hint: str

    @classmethod
    def from_fields(cls, doc: Mapping[str, Any]) -> OperationalMetadata:
        return cls(
            urn=doc["urn"],
            title=doc["title"],
            domain_urn=doc["domain_urn"],
            distribution_type=DistributionType(doc["distribution_type"]),
            access_endpoint=doc["access_endpoint"],
            auth_scheme=AuthScheme(doc["auth_scheme"]),
            format_hint=doc["format_hint"],
        )


@dataclass(frozen=True)
class CatalogSummary:
    urn: str
    title: str
    dataset_count: int


@dataclass(frozen=True)
class CacheEntry:
    key: str
    value: Any
    fetched_at: datetime
    ttl_seconds: int

    def fresh(self, now: datetime) -> bool:
        return now < self.fetched_at + timedelta(seconds=self.ttl_seconds)


def service_id_for(dataset_urn: str) -> str:
    return f"{dataset_urn}#access-service"


class Facade:
    def __init__(
        self,
        client: StoreClient,
        config: FacadeConfig = FacadeConfig(),
        *,
        clock: Callable[[], datetime] = utcnow,
        cache_enabled: bool = True,
        on_target_deleted: Callable[[str], Any] | None = None,
    ):
        self.client = client
        self.config = config
        self.cache_enabled = cache_enabled and config.cache_ttl_seconds > 0
        self.on_target_deleted = on_target_deleted
        self._clock = clock
        self._cache: dict[str, CacheEntry] = {}
        self._cache_lock = threading.Lock()
        self._generation = 0
        self._last_seq = 0
        self._event_lock = threading.Lock()
        self._session: SessionToken | None = None
        self._session_lock = threading.Lock()

    # -- authentication -------------------------------------------------------

    def authenticate(self, client_id: str | None = None, client_secret: str | None = None) -> SessionToken:
        token = self.client.authenticate(
            client_id if client_id is not None else self.config.client_id,
            client_secret if client_secret is not None else self.config.client_secret,
        )
        if token.expired(self._clock()):
            raise StoreUnavailable("store issued an already expired token")
        return token

    def _check(self, token: SessionToken) -> None:
        if token.expired(self._clock()):
            raise TokenExpired("session token expired")

    def session(self) -> SessionToken:
        """Managed token for internal callers; re-authenticates when stale."""
        with self._session_lock:
            if self._session is None or self._session.expired(self._clock() + timedelta(seconds=5)):
                self._session = self.authenticate()
            return self._session

    def with_session(self, fn: Callable[[SessionToken], Any]) -> Any:
        try:
            return fn(self.session())
        except TokenExpired:
            # the store may have restarted and forgotten our token
            with self._session_lock:
                self._session = None
            return fn(self.session())

    # -- cache ------------------------------------------------------------------

    def _cached(self, key: str, load: Callable[[], Any], *, fresh: bool = False) -> Any:
        if self.cache_enabled and not fresh:
            now = self._clock()
            with self._cache_lock:
                entry = self._cache.get(key)
            if entry is not None and entry.fresh(now):
                return entry.value
        fetched_at = self._clock()
        generation = self._generation
        value = load()
        if self.cache_enabled:
            with self._cache_lock:
                # an invalidation ran while we were loading; the value may predate it
                if generation == self._generation:
                    self._cache[key] = CacheEntry(key, value, fetched_at, self.config.cache_ttl_seconds)
        return value

    def _drop(self, predicate: Callable[[str], bool]) -> int:
        with self._cache_lock:
            self._generation += 1
            doomed = [k for k in self._cache if predicate(k)]
            for key in doomed:
                del self._cache[key]
        return len(doomed)

    def cache_keys(self) -> list[str]:
        with self._cache_lock:
            return sorted(self._cache)

    # -- store paging -------------------------------------------------------------

    def _all(self, fetch: Callable[[PageRequest], Any]) -> list:
        items: list = []
        offset = 0
        while True:
            page = fetch(PageRequest(offset, self.config.page_size))
            items.extend(page.items)
            offset += len(page.items)
            if not page.items or offset >= page.total:
                return items

    # -- reads ------------------------------------------------------------------

    def list_catalogs(self, token: SessionToken) -> list[CatalogSummary]:
        self._check(token)

        def load():
            domains = self._all(lambda p: self.client.list_domains(token.token, p))
            return [
                CatalogSummary(d.urn, d.name, len(self._datasets_of(token, d.urn)))
                for d in domains
            ]

        return self._cached("catalogs", load)

    def _datasets_of(self, token: SessionToken, domain: str) -> list:
        return self._all(lambda p: self.client.list_datasets_in_domain(token.token, domain, p))

    def list_datasets(self, token: SessionToken, domain: str) -> list[OperationalMetadata]:
        self._check(token)

        def load():
            return [
                OperationalMetadata(
                    urn=r.urn,
                    title=r.name,
                    domain_urn=a.domain_urn,
                    distribution_type=a.distribution_type,
                    access_endpoint=a.access_endpoint,
                    auth_scheme=a.auth_scheme,
                    format_hint=a.format_hint,
                )
                for r, a in self._datasets_of(token, domain)
            ]

        return self._cached(f"datasets:{domain}", load)

    def search(self, token: SessionToken, query: str) -> list[EntityRecord]:
        self._check(token)
        return self._all(lambda p: self.client.search_datasets(token.token, query, p))

    def resolve_dataset(self, token: SessionToken, urn: str, *, fresh: bool = False) -> OperationalMetadata:
        """Operational metadata for ``urn``; ``fresh`` skips the cached copy."""
        self._check(token)
        if not is_dataset_urn(urn):
            raise TargetNotFound(f"not a dataset urn: {urn!r}")

        def load():
            try:
                fields = self.client.query_dataset(token.token, urn, OPERATIONAL_FIELDS)
            except (UnknownUrn, DeletedEntity) as exc:
                raise TargetNotFound(urn) from exc
            return OperationalMetadata.from_fields(fields)

        return self._cached(f"dataset:{urn}", load, fresh=fresh)

    def resolve(self, urn: str, *, fresh: bool = False) -> OperationalMetadata:
        """``resolve_dataset`` under the managed session."""
        return self.with_session(lambda token: self.resolve_dataset(token, urn, fresh=fresh))

    def to_dcat(self, token: SessionToken, domain: str) -> DcatCatalog:
        self._check(token)

        def load():
            record = self.client.get_entity(token.token, domain)
            if not is_domain_urn(record.urn):
                raise UnknownUrn(domain)
            datasets = []
            services = []
            for rec, aspect in self._datasets_of(token, domain):
                service = DcatDataService(
                    id=service_id_for(rec.urn),
                    endpoint_url=aspect.access_endpoint,
                    endpoint_description=(
                        f"authScheme={aspect.auth_scheme.value}; "
                        f"distributionType={aspect.distribution_type.value}"
                    ),
                )
                services.append(service)
                datasets.append(
                    DcatDataset(
                        id=rec.urn,
                        title=rec.name,
                        description=rec.description,
                        version=aspect.version_tag,
                        distributions=(DcatDistribution(aspect.format_hint, service.id),),
                    )
                )
            catalog = DcatCatalog(record.urn, record.name, record.description, tuple(datasets), tuple(services))
            violations = validate_catalog(catalog)
            if violations:
                raise InvariantViolation(violations)
            return catalog

        return self._cached(f"dcat:{domain}", load)

    def dataset_to_dcat(self, token: SessionToken, urn: str) -> tuple[DcatDataset, DcatDataService]:
        """One dataset with the data service its distribution points at."""
        self._check(token)

        def load():
            try:
                record = self.client.get_entity(token.token, urn)
                fields = self.client.query_dataset(token.token, urn, DATASET_FIELDS)
            except DeletedEntity as exc:
                raise UnknownUrn(urn) from exc
            service = DcatDataService(
                id=service_id_for(urn),
                endpoint_url=fields["access_endpoint"],
                endpoint_description=(
                    f"authScheme={fields['auth_scheme']}; distributionType={fields['distribution_type']}"
                ),
            )
            dataset = DcatDataset(
                id=urn,
                title=record.name,
                description=record.description,
                version=fields["version_tag"],
                distributions=(DcatDistribution(fields["format_hint"], service.id),),
            )
            return dataset, service

        return self._cached(f"dcat-dataset:{urn}", load)

    # -- change events -------------------------------------------------------------

    def on_change(self, event: ChangeEvent) -> bool:
        """Apply one change event; returns False for an already-seen seq_no."""
        with self._event_lock:
            if event.seq_no <= self._last_seq:
                return False
            self._last_seq = event.seq_no
            if is_domain_urn(event.urn):
                dropped = self._drop(
                    lambda k: k == "catalogs" or k in (f"dcat:{event.urn}", f"datasets:{event.urn}")
                )
            else:
                # a dataset change can move counts and listings of any domain
                dropped = self._drop(
                    lambda k: k in ("catalogs", f"dataset:{event.urn}", f"dcat-dataset:{event.urn}")
                    or k.startswith(("dcat:", "datasets:"))
                )
            log.debug("event=facade.change seq=%d urn=%s dropped=%d", event.seq_no, event.urn, dropped)
            if event.kind is ChangeKind.DELETE and is_dataset_urn(event.urn) and self.on_target_deleted:
                self.on_target_deleted(event.urn)
        return True

    @property
    def last_seq(self) -> int:
        return self._last_seq

    def seek(self, seq_no: int) -> None:
        """Resume dedup from a persisted cursor."""
        with self._event_lock:
            self._last_seq = max(self._last_seq, seq_no)
