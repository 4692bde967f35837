from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from typing import Any, Generic, Mapping, Sequence, TypeVar
from urllib.parse import urlparse

from fedspace.errors import InvalidRecord, MalformedUrn
from fedspace.timeutil import from_iso, to_iso
from fedspace.urn import is_dataset_urn, is_domain_urn


class EntityKind(str, Enum):
    DOMAIN = "DOMAIN"
    DATASET = "DATASET"


class DistributionType(str, Enum):
    HTTP_PULL = "HTTP_PULL"
    HTTP_PUSH = "HTTP_PUSH"


class AuthScheme(str, Enum):
    NONE = "NONE"
    BEARER = "BEARER"


class ChangeKind(str, Enum):
    CREATE = "CREATE"
    UPDATE = "UPDATE"
    DELETE = "DELETE"


class Direction(str, Enum):
    UPSTREAM = "UPSTREAM"
    DOWNSTREAM = "DOWNSTREAM"


def is_absolute_url(text: str) -> bool:
    if not isinstance(text, str) or any(c.isspace() for c in text):
        return False
    parsed = urlparse(text)
    return parsed.scheme in ("http", "https") and bool(parsed.netloc)


@dataclass(frozen=True)
class EntityRecord:
    urn: str
    kind: EntityKind
    name: str
    description: str = ""
    custom_properties: Mapping[str, str] = field(default_factory=dict)
    source_catalog_id: str = ""
    created_at: datetime | None = None
    updated_at: datetime | None = None
    deleted: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", EntityKind(self.kind))
        object.__setattr__(self, "custom_properties", dict(self.custom_properties))
        if self.kind is EntityKind.DOMAIN and not is_domain_urn(self.urn):
            raise MalformedUrn(f"DOMAIN record needs a domain urn, got {self.urn!r}")
        if self.kind is EntityKind.DATASET and not is_dataset_urn(self.urn):
            raise MalformedUrn(f"DATASET record needs a dataset urn, got {self.urn!r}")
        for key, value in self.custom_properties.items():
            if not isinstance(key, str) or not isinstance(value, str):
                raise InvalidRecord(f"{self.urn}: custom properties must map text to text")
        if self.created_at and self.updated_at and self.updated_at < self.created_at:
            raise InvalidRecord(f"{self.urn}: updated_at precedes created_at")

    def to_dict(self) -> dict[str, Any]:
        return {
            "urn": self.urn,
            "kind": self.kind.value,
            "name": self.name,
            "description": self.description,
            "customProperties": dict(self.custom_properties),
            "sourceCatalogId": self.source_catalog_id,
            "createdAt": to_iso(self.created_at) if self.created_at else None,
            "updatedAt": to_iso(self.updated_at) if self.updated_at else None,
            "deleted": self.deleted,
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> EntityRecord:
        created = doc.get("createdAt")
        updated = doc.get("updatedAt")
        return cls(
            urn=doc["urn"],
            kind=EntityKind(doc["kind"]),
            name=doc["name"],
            description=doc.get("description", ""),
            custom_properties=doc.get("customProperties") or {},
            source_catalog_id=doc.get("sourceCatalogId", ""),
            created_at=from_iso(created) if created else None,
            updated_at=from_iso(updated) if updated else None,
            deleted=bool(doc.get("deleted", False)),
        )


@dataclass(frozen=True)
class DatasetAspect:
    """Operational metadata attached to a dataset: where and how it is served."""

    dataset_urn: str
    domain_urn: str
    distribution_type: DistributionType
    access_endpoint: str
    auth_scheme: AuthScheme
    format_hint: str
    version_tag: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "distribution_type", DistributionType(self.distribution_type))
        object.__setattr__(self, "auth_scheme", AuthScheme(self.auth_scheme))
        if not is_dataset_urn(self.dataset_urn):
            raise MalformedUrn(f"aspect dataset urn malformed: {self.dataset_urn!r}")
        if not is_domain_urn(self.domain_urn):
            raise MalformedUrn(f"aspect domain urn malformed: {self.domain_urn!r}")
        if not is_absolute_url(self.access_endpoint):
            raise InvalidRecord(f"{self.dataset_urn}: access endpoint is not an absolute URL")
        if not self.format_hint:
            raise InvalidRecord(f"{self.dataset_urn}: empty format hint")

    def to_dict(self) -> dict[str, Any]:
        doc = {
            "domainUrn": self.domain_urn,
            "distributionType": self.distribution_type.value,
            "accessEndpoint": self.access_endpoint,
            "authScheme": self.auth_scheme.value,
            "formatHint": self.format_hint,
        }
        if self.version_tag is not None:
            doc["versionTag"] = self.version_tag
        return doc

    @classmethod
    def from_dict(cls, dataset_urn: str, doc: Mapping[str, Any]) -> DatasetAspect:
        return cls(
            dataset_urn=dataset_urn,
            domain_urn=doc["domainUrn"],
            distribution_type=DistributionType(doc["distributionType"]),
            access_endpoint=doc["accessEndpoint"],
            auth_scheme=AuthScheme(doc["authScheme"]),
            format_hint=doc["formatHint"],
            version_tag=doc.get("versionTag"),
        )


@dataclass(frozen=True)
class LineageEdge:
    upstream: str
    downstream: str
    created_at: datetime | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "upstream": self.upstream,
            "downstream": self.downstream,
            "createdAt": to_iso(self.created_at) if self.created_at else None,
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> LineageEdge:
        created = doc.get("createdAt")
        return cls(doc["upstream"], doc["downstream"], from_iso(created) if created else None)


@dataclass(frozen=True)
class ChangeEvent:
    seq_no: int
    urn: str
    kind: ChangeKind
    at: datetime

    def to_dict(self) -> dict[str, Any]:
        return {"seqNo": self.seq_no, "urn": self.urn, "kind": self.kind.value, "at": to_iso(self.at)}

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> ChangeEvent:
        return cls(int(doc["seqNo"]), doc["urn"], ChangeKind(doc["kind"]), from_iso(doc["at"]))


@dataclass(frozen=True)
class PageRequest:
    offset: int = 0
    limit: int = 100

    def __post_init__(self):
        if self.limit < 1:
            raise ValueError("page limit must be >= 1")
        if self.offset < 0:
            raise ValueError("page offset must be >= 0")


T = TypeVar("T")


@dataclass(frozen=True)
class Page(Generic[T]):
    items: Sequence[T]
    offset: int
    limit: int
    total: int

    @property
    def has_more(self) -> bool:
        return self.offset + len(self.items) < self.total


def paginate(items: Sequence[T], page: PageRequest) -> Page[T]:
    return Page(list(items[page.offset : page.offset + page.limit]), page.offset, page.limit, len(items))


@dataclass(frozen=True)
class DatasetDetail:
    record: EntityRecord
    aspect: DatasetAspect | None
    upstream_count: int
    downstream_count: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "record": self.record.to_dict(),
            "aspect": self.aspect.to_dict() if self.aspect else None,
            "lineage": {"upstream": self.upstream_count, "downstream": self.downstream_count},
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> DatasetDetail:
        record = EntityRecord.from_dict(doc["record"])
        aspect = DatasetAspect.from_dict(record.urn, doc["aspect"]) if doc.get("aspect") else None
        lineage = doc.get("lineage") or {}
        return cls(record, aspect, int(lineage.get("upstream", 0)), int(lineage.get("downstream", 0)))


@dataclass(frozen=True)
class FederationReport:
    created: int = 0
    updated: int = 0
    unchanged: int = 0
    conflicts: int = 0

    def to_dict(self) -> dict[str, int]:
        return {
            "created": self.created,
            "updated": self.updated,
            "unchanged": self.unchanged,
            "conflicts": self.conflicts,
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> FederationReport:
        return cls(**{k: int(doc[k]) for k in ("created", "updated", "unchanged", "conflicts")})


@dataclass(frozen=True)
class IngestReport:
    created: int = 0
    updated: int = 0

    def to_dict(self) -> dict[str, int]:
        return {"created": self.created, "updated": self.updated}

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> IngestReport:
        return cls(int(doc["created"]), int(doc["updated"]))
