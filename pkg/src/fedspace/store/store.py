"""Federated metadata graph: domains and datasets with key-value aspects,
lineage edges, and an ordered change feed.

All mutations go through one writer lock, which makes sequence-number
assignment and urn-uniqueness checks atomic. Readers never take the lock;
they work on list copies of the in-memory maps.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import replace
from datetime import datetime
from pathlib import Path
from typing import Callable, Iterable, Iterator, Protocol

from fedspace.errors import (
    AlreadyDeleted,
    DeletedEntity,
    DuplicateEdge,
    EmptyQuery,
    FedspaceError,
    InvalidRecord,
    MissingParentDomain,
    SelfLoop,
    SourceUnreachable,
    StoreUnavailable,
    UnknownUrn,
)
from fedspace.store.journal import Journal
from fedspace.store.model import (
    ChangeEvent,
    ChangeKind,
    DatasetAspect,
    DatasetDetail,
    Direction,
    EntityKind,
    EntityRecord,
    FederationReport,
    IngestReport,
    LineageEdge,
    Page,
    PageRequest,
    paginate,
)
from fedspace.timeutil import from_iso, to_iso, utcnow
from fedspace.urn import parse_urn

log = logging.getLogger(__name__)

# Fields a narrow dataset query may ask for.
DATASET_FIELDS = (
    "urn",
    "title",
    "domain_urn",
    "distribution_type",
    "access_endpoint",
    "auth_scheme",
    "format_hint",
    "version_tag",
)


class SourceStore(Protocol):
    """What ``federate_pull`` needs from a source catalog."""

    def list_domains(self, page: PageRequest) -> Page[EntityRecord]: ...

    def list_datasets_in_domain(
        self, domain: str, page: PageRequest
    ) -> Page[tuple[EntityRecord, DatasetAspect]]: ...

    def get_dataset_detail(self, urn: str) -> DatasetDetail: ...


def _all_pages(fetch: Callable[[PageRequest], Page], page_size: int) -> list:
    items: list = []
    offset = 0
    while True:
        page = fetch(PageRequest(offset, page_size))
        items.extend(page.items)
        offset += len(page.items)
        if not page.items or offset >= page.total:
            return items


def _same_content(a: EntityRecord, a_aspect, b: EntityRecord, b_aspect) -> bool:
    return (
        a.name == b.name
        and a.description == b.description
        and dict(a.custom_properties) == dict(b.custom_properties)
        and a.source_catalog_id == b.source_catalog_id
        and a.created_at == b.created_at
        and a.updated_at == b.updated_at
        and a_aspect == b_aspect
    )


class EntityStore:
    def __init__(
        self,
        data_dir: Path | str | None = None,
        *,
        catalog_id: str = "local",
        clock: Callable[[], datetime] = utcnow,
        snapshot_every: int = 500,
    ):
        self.catalog_id = catalog_id
        self._clock = clock
        self._snapshot_every = snapshot_every
        self._write_lock = threading.Lock()
        self._new_event = threading.Condition()
        self._entities: dict[str, EntityRecord] = {}
        self._aspects: dict[str, DatasetAspect] = {}
        self._edges: dict[tuple[str, str], LineageEdge] = {}
        self._events: list[ChangeEvent] = []
        self._journal = Journal(Path(data_dir)) if data_dir is not None else None
        if self._journal is not None:
            self._load()

    # -- persistence ----------------------------------------------------------

    def _load(self) -> None:
        self._journal.repair_tail()
        snapshot = self._journal.load_snapshot()
        after = 0
        if snapshot:
            for doc in snapshot["entities"]:
                record = EntityRecord.from_dict(doc)
                self._entities[record.urn] = record
            for urn, doc in snapshot["aspects"].items():
                self._aspects[urn] = DatasetAspect.from_dict(urn, doc)
            for doc in snapshot["edges"]:
                edge = LineageEdge.from_dict(doc)
                self._edges[(edge.upstream, edge.downstream)] = edge
            self._events = [ChangeEvent.from_dict(e) for e in snapshot["events"]]
            after = snapshot["seqNo"]
        replayed = 0
        for entry in self._journal.entries(after_seq=after):
            self._replay(entry)
            replayed += 1
        log.info(
            "event=store.loaded entities=%d seq=%d replayed=%d",
            len(self._entities),
            self.latest_seq,
            replayed,
        )

    def _replay(self, entry: dict) -> None:
        op = entry["op"]
        if op == "upsert":
            record = EntityRecord.from_dict(entry["record"])
            self._entities[record.urn] = record
            if entry.get("aspect"):
                self._aspects[record.urn] = DatasetAspect.from_dict(record.urn, entry["aspect"])
        elif op == "delete":
            record = self._entities[entry["urn"]]
            self._entities[record.urn] = replace(record, deleted=True, updated_at=from_iso(entry["at"]))
        elif op == "lineage":
            edge = LineageEdge.from_dict(entry["edge"])
            self._edges[(edge.upstream, edge.downstream)] = edge
        self._events.append(
            ChangeEvent(entry["seqNo"], entry["urn"], ChangeKind(entry["kind"]), from_iso(entry["at"]))
        )

    def _snapshot_state(self) -> dict:
        return {
            "seqNo": self.latest_seq,
            "entities": [r.to_dict() for r in self._entities.values()],
            "aspects": {urn: a.to_dict() for urn, a in self._aspects.items()},
            "edges": [e.to_dict() for e in self._edges.values()],
            "events": [e.to_dict() for e in self._events],
        }

    def close(self) -> None:
        if self._journal is not None:
            self._journal.close()

    # -- writer path ----------------------------------------------------------

    def _commit(self, urn: str, kind: ChangeKind, at: datetime, op: str, **payload) -> ChangeEvent:
        # caller holds the write lock
        event = ChangeEvent(self.latest_seq + 1, urn, kind, at)
        if self._journal is not None:
            entry = {"seqNo": event.seq_no, "urn": urn, "kind": kind.value, "at": to_iso(at), "op": op}
            entry.update(payload)
            self._journal.append(entry)
        self._events.append(event)
        if self._journal is not None and event.seq_no % self._snapshot_every == 0:
            self._journal.write_snapshot(self._snapshot_state())
        with self._new_event:
            self._new_event.notify_all()
        log.debug("event=store.change seq=%d kind=%s urn=%s", event.seq_no, kind.value, urn)
        return event

    def _put(self, record: EntityRecord, aspect: DatasetAspect | None, kind: ChangeKind) -> None:
        self._entities[record.urn] = record
        if aspect is not None:
            self._aspects[record.urn] = aspect
        self._commit(
            record.urn,
            kind,
            self._clock(),
            "upsert",
            record=record.to_dict(),
            aspect=aspect.to_dict() if aspect else None,
        )

    def _check_parent(self, record: EntityRecord, aspect: DatasetAspect | None) -> None:
        if aspect is None:
            return
        if record.kind is not EntityKind.DATASET:
            raise InvalidRecord(f"{record.urn}: only datasets carry an aspect")
        if aspect.dataset_urn != record.urn:
            raise InvalidRecord(f"{record.urn}: aspect belongs to {aspect.dataset_urn}")
        parent = self._entities.get(aspect.domain_urn)
        if parent is None or parent.deleted:
            raise MissingParentDomain(f"{record.urn}: unknown parent domain {aspect.domain_urn}")

    def upsert_entity(self, record: EntityRecord, aspect: DatasetAspect | None = None) -> str:
        parse_urn(record.urn)
        with self._write_lock:
            self._check_parent(record, aspect)
            now = self._clock()
            existing = self._entities.get(record.urn)
            if existing is None or existing.deleted:
                kind = ChangeKind.CREATE
                created = now
            else:
                kind = ChangeKind.UPDATE
                created = existing.created_at or now
            stored = replace(
                record,
                source_catalog_id=record.source_catalog_id or self.catalog_id,
                created_at=created,
                updated_at=max(now, created),
                deleted=False,
            )
            self._put(stored, aspect, kind)
        return record.urn

    def ingest(self, items: Iterable[tuple[EntityRecord, DatasetAspect | None]]) -> IngestReport:
        """Upsert a batch; domains are applied before datasets."""
        items = sorted(items, key=lambda item: item[0].kind is not EntityKind.DOMAIN)
        created = updated = 0
        for record, aspect in items:
            existing = self._entities.get(record.urn)
            self.upsert_entity(record, aspect)
            if existing is None or existing.deleted:
                created += 1
            else:
                updated += 1
        return IngestReport(created, updated)

    def delete_entity(self, urn: str) -> ChangeEvent:
        with self._write_lock:
            record = self._entities.get(urn)
            if record is None:
                raise UnknownUrn(urn)
            if record.deleted:
                raise AlreadyDeleted(urn)
            now = max(self._clock(), record.updated_at or record.created_at)
            self._entities[urn] = replace(record, deleted=True, updated_at=now)
            return self._commit(urn, ChangeKind.DELETE, now, "delete")

    def add_lineage_edge(self, upstream: str, downstream: str) -> None:
        with self._write_lock:
            if upstream == downstream:
                raise SelfLoop(upstream)
            for urn in (upstream, downstream):
                self._live_dataset(urn)
            if (upstream, downstream) in self._edges:
                raise DuplicateEdge(f"{upstream} -> {downstream}")
            edge = LineageEdge(upstream, downstream, self._clock())
            self._edges[(upstream, downstream)] = edge
            self._commit(downstream, ChangeKind.UPDATE, edge.created_at, "lineage", edge=edge.to_dict())

    # -- reads ------------------------------------------------------------------

    def _live_dataset(self, urn: str) -> EntityRecord:
        record = self._entities.get(urn)
        if record is None or record.kind is not EntityKind.DATASET:
            raise UnknownUrn(urn)
        if record.deleted:
            raise DeletedEntity(urn)
        return record

    def get_entity(self, urn: str, include_deleted: bool = False) -> EntityRecord:
        record = self._entities.get(urn)
        if record is None or (record.deleted and not include_deleted):
            raise UnknownUrn(urn)
        return record

    def get_aspect(self, urn: str) -> DatasetAspect | None:
        return self._aspects.get(urn)

    def _live(self, kind: EntityKind) -> list[EntityRecord]:
        records = [r for r in list(self._entities.values()) if r.kind is kind and not r.deleted]
        return sorted(records, key=lambda r: r.urn)

    def live_urns(self) -> set[str]:
        return {r.urn for r in list(self._entities.values()) if not r.deleted}

    def list_domains(self, page: PageRequest = PageRequest()) -> Page[EntityRecord]:
        return paginate(self._live(EntityKind.DOMAIN), page)

    def list_datasets_in_domain(
        self, domain: str, page: PageRequest = PageRequest()
    ) -> Page[tuple[EntityRecord, DatasetAspect]]:
        parent = self._entities.get(domain)
        if parent is None or parent.deleted or parent.kind is not EntityKind.DOMAIN:
            raise UnknownUrn(domain)
        aspects = dict(self._aspects)
        rows = [
            (r, aspects[r.urn])
            for r in self._live(EntityKind.DATASET)
            if r.urn in aspects and aspects[r.urn].domain_urn == domain
        ]
        return paginate(rows, page)

    def get_dataset_detail(self, urn: str) -> DatasetDetail:
        record = self._live_dataset(urn)
        edges = list(self._edges)
        return DatasetDetail(
            record,
            self._aspects.get(urn),
            upstream_count=sum(1 for _, down in edges if down == urn),
            downstream_count=sum(1 for up, _ in edges if up == urn),
        )

    def query_dataset(self, urn: str, fields: Iterable[str] = DATASET_FIELDS) -> dict:
        """Narrow read: only the requested operational fields of a live dataset."""
        record = self._live_dataset(urn)
        aspect = self._aspects.get(urn)
        if aspect is None:
            raise UnknownUrn(f"{urn} has no operational metadata")
        full = {
            "urn": record.urn,
            "title": record.name,
            "domain_urn": aspect.domain_urn,
            "distribution_type": aspect.distribution_type.value,
            "access_endpoint": aspect.access_endpoint,
            "auth_scheme": aspect.auth_scheme.value,
            "format_hint": aspect.format_hint,
            "version_tag": aspect.version_tag,
        }
        unknown = set(fields) - set(DATASET_FIELDS)
        if unknown:
            raise ValueError(f"unknown dataset fields: {sorted(unknown)}")
        return {name: full[name] for name in fields}

    def search_datasets(self, query: str, page: PageRequest = PageRequest()) -> Page[EntityRecord]:
        needle = (query or "").strip().lower()
        if not needle:
            raise EmptyQuery("search query is empty")
        hits = [
            r
            for r in self._live(EntityKind.DATASET)
            if needle in r.name.lower()
            or needle in r.description.lower()
            or any(needle in v.lower() for v in r.custom_properties.values())
        ]
        return paginate(hits, page)

    def get_lineage(self, urn: str, direction: Direction) -> list[str]:
        if urn not in self._entities:
            raise UnknownUrn(urn)
        direction = Direction(direction)
        edges = list(self._edges)
        if direction is Direction.UPSTREAM:
            return sorted(up for up, down in edges if down == urn)
        return sorted(down for up, down in edges if up == urn)

    # -- change feed ------------------------------------------------------------

    @property
    def latest_seq(self) -> int:
        return self._events[-1].seq_no if self._events else 0

    def events_since(self, cursor: int, limit: int | None = None) -> list[ChangeEvent]:
        if cursor < 0:
            raise ValueError("cursor must be >= 0")
        # seq_no n lives at index n-1
        events = self._events[cursor:]
        return events[:limit] if limit is not None else events

    def subscribe_changes(self, cursor: int = 0, *, follow: bool = False, timeout: float | None = None) -> Iterator[ChangeEvent]:
        """Yield events after ``cursor``; with ``follow``, keep waiting for new ones.

        A follower stops once ``timeout`` seconds pass without a new event.
        """
        while True:
            batch = self.events_since(cursor)
            for event in batch:
                yield event
                cursor = event.seq_no
            if not follow:
                return
            with self._new_event:
                if self.latest_seq <= cursor and not self._new_event.wait(timeout):
                    return

    # -- federation -------------------------------------------------------------

    def federate_pull(self, source: SourceStore, *, page_size: int = 100) -> FederationReport:
        """Pull every live entity of ``source`` into this store.

        The source is read completely before anything is applied, so a source
        failure leaves this store untouched.
        """
        try:
            incoming = self._read_source(source, page_size)
        except (SourceUnreachable, StoreUnavailable, OSError) as exc:
            raise SourceUnreachable(str(exc)) from exc
        except FedspaceError as exc:
            raise SourceUnreachable(f"source read failed: {exc}") from exc

        created = updated = unchanged = conflicts = 0
        with self._write_lock:
            now = self._clock()
            for record, aspect in incoming:
                if record.updated_at is None:
                    stamp = record.created_at or now
                    record = replace(record, created_at=stamp, updated_at=stamp)
                existing = self._entities.get(record.urn)
                if existing is None or existing.deleted:
                    self._check_parent(record, aspect)
                    self._put(replace(record, deleted=False), aspect, ChangeKind.CREATE)
                    created += 1
                    continue
                if _same_content(existing, self._aspects.get(record.urn), record, aspect):
                    unchanged += 1
                    continue
                if existing.source_catalog_id != record.source_catalog_id:
                    conflicts += 1
                    ours = (existing.updated_at, existing.source_catalog_id)
                    theirs = (record.updated_at, record.source_catalog_id)
                    if theirs <= ours:
                        unchanged += 1
                        continue
                self._check_parent(record, aspect)
                self._put(replace(record, deleted=False), aspect, ChangeKind.UPDATE)
                updated += 1
        report = FederationReport(created, updated, unchanged, conflicts)
        log.info("event=store.federated %s", " ".join(f"{k}={v}" for k, v in report.to_dict().items()))
        return report

    @staticmethod
    def _read_source(source: SourceStore, page_size: int) -> list[tuple[EntityRecord, DatasetAspect | None]]:
        items: list[tuple[EntityRecord, DatasetAspect | None]] = []
        datasets = []
        for domain in _all_pages(source.list_domains, page_size):
            items.append((domain, None))
            rows = _all_pages(lambda p, d=domain.urn: source.list_datasets_in_domain(d, p), page_size)
            datasets.extend(rows)
        return items + datasets
