from fedspace.store.auth import SessionToken, TokenIssuer
from fedspace.store.client import HttpSource, HttpStoreClient, LocalStoreClient, StoreClient
from fedspace.store.ingest import parse_ingestion
from fedspace.store.model import (
    AuthScheme,
    ChangeEvent,
    ChangeKind,
    DatasetAspect,
    DatasetDetail,
    Direction,
    DistributionType,
    EntityKind,
    EntityRecord,
    FederationReport,
    IngestReport,
    LineageEdge,
    Page,
    PageRequest,
)
from fedspace.store.store import DATASET_FIELDS, EntityStore, SourceStore

__all__ = [
    "AuthScheme",
    "ChangeEvent",
    "ChangeKind",
    "DATASET_FIELDS",
    "DatasetAspect",
    "DatasetDetail",
    "Direction",
    "DistributionType",
    "EntityKind",
    "EntityRecord",
    "EntityStore",
    "FederationReport",
    "HttpSource",
    "HttpStoreClient",
    "IngestReport",
    "LineageEdge",
    "LocalStoreClient",
    "Page",
    "PageRequest",
    "SessionToken",
    "SourceStore",
    "StoreClient",
    "TokenIssuer",
    "parse_ingestion",
]
