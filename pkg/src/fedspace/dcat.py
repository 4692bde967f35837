"""Flat DCAT profile: Catalog, Dataset, Distribution and DataService.

Documents are JSON with a fixed ``@context`` and prefixed keys::

    {"@context": "https://www.w3.org/ns/dcat#", "@type": "dcat:Catalog",
     "dct:identifier": "urn:li:domain:mobility", "dct:title": "...",
     "dct:description": "...",
     "dcat:dataset": [{"@type": "dcat:Dataset", "dct:identifier": "...",
                       "dcat:distribution": [{"@type": "dcat:Distribution",
                                              "dct:format": "text/csv",
                                              "dcat:accessService": "svc-id"}]}],
     "dcat:service": [{"@type": "dcat:DataService", "dct:identifier": "svc-id",
                       "dcat:endpointURL": "https://...",
                       "dcat:endpointDescription": "authScheme=BEARER"}]}

Serialization is canonical (sorted keys, compact separators) so equal values
always produce byte-identical text.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any

from fedspace.errors import InvariantViolation, ParseError, SchemaError
from fedspace.store.model import is_absolute_url
from fedspace.urn import is_dataset_urn, is_domain_urn

CONTEXT = "https://www.w3.org/ns/dcat#"

T_CATALOG = "dcat:Catalog"
T_DATASET = "dcat:Dataset"
T_DISTRIBUTION = "dcat:Distribution"
T_SERVICE = "dcat:DataService"


@dataclass(frozen=True)
class DcatDataService:
    id: str
    endpoint_url: str
    endpoint_description: str = ""


@dataclass(frozen=True)
class DcatDistribution:
    format: str
    access_service_id: str


@dataclass(frozen=True)
class DcatDataset:
    id: str
    title: str
    description: str = ""
    version: str | None = None
    distributions: tuple[DcatDistribution, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "distributions", tuple(self.distributions))


@dataclass(frozen=True)
class DcatCatalog:
    id: str
    title: str
    description: str = ""
    datasets: tuple[DcatDataset, ...] = ()
    services: tuple[DcatDataService, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "datasets", tuple(self.datasets))
        object.__setattr__(self, "services", tuple(self.services))


@dataclass(frozen=True)
class Violation:
    id: str
    rule: str

    def __str__(self) -> str:
        return f"{self.id}: {self.rule}"


def validate_catalog(catalog: DcatCatalog) -> list[Violation]:
    violations: list[Violation] = []
    if not is_domain_urn(catalog.id):
        violations.append(Violation(catalog.id, "catalog id must be a domain urn"))

    service_ids: set[str] = set()
    for service in catalog.services:
        if service.id in service_ids:
            violations.append(Violation(service.id, "duplicate data service id"))
        service_ids.add(service.id)
        if not is_absolute_url(service.endpoint_url):
            violations.append(Violation(service.id, "endpoint_url is not an absolute URL"))

    dataset_ids: set[str] = set()
    for dataset in catalog.datasets:
        if dataset.id in dataset_ids:
            violations.append(Violation(dataset.id, "duplicate dataset id"))
        dataset_ids.add(dataset.id)
        if not is_dataset_urn(dataset.id):
            violations.append(Violation(dataset.id, "dataset id must be a dataset urn"))
        for dist in dataset.distributions:
            if not dist.format:
                violations.append(Violation(dataset.id, "distribution format is empty"))
            if dist.access_service_id not in service_ids:
                violations.append(
                    Violation(dataset.id, f"distribution references unknown service {dist.access_service_id!r}")
                )
    return violations


# -- documents --------------------------------------------------------------


def service_to_document(service: DcatDataService) -> dict[str, Any]:
    return {
        "@type": T_SERVICE,
        "dct:identifier": service.id,
        "dcat:endpointURL": service.endpoint_url,
        "dcat:endpointDescription": service.endpoint_description,
    }


def dataset_to_document(dataset: DcatDataset) -> dict[str, Any]:
    doc: dict[str, Any] = {
        "@type": T_DATASET,
        "dct:identifier": dataset.id,
        "dct:title": dataset.title,
        "dct:description": dataset.description,
        "dcat:distribution": [
            {"@type": T_DISTRIBUTION, "dct:format": d.format, "dcat:accessService": d.access_service_id}
            for d in dataset.distributions
        ],
    }
    if dataset.version is not None:
        doc["dcat:version"] = dataset.version
    return doc


def catalog_to_document(catalog: DcatCatalog) -> dict[str, Any]:
    violations = validate_catalog(catalog)
    if violations:
        raise InvariantViolation(violations)
    return {
        "@context": CONTEXT,
        "@type": T_CATALOG,
        "dct:identifier": catalog.id,
        "dct:title": catalog.title,
        "dct:description": catalog.description,
        "dcat:dataset": [dataset_to_document(d) for d in catalog.datasets],
        "dcat:service": [service_to_document(s) for s in catalog.services],
    }


def canonical_json(doc: Any) -> str:
    return json.dumps(doc, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def serialize_catalog(catalog: DcatCatalog) -> str:
    return canonical_json(catalog_to_document(catalog))


class _Reader:
    """Shape checks for incoming documents; unknown keys become warnings."""

    def __init__(self, warnings: list[str] | None):
        self.warnings = warnings

    def node(self, doc: Any, expected_type: str, where: str, known: set[str]) -> dict:
        if not isinstance(doc, dict):
            raise SchemaError(f"{where}: expected an object")
        if "@type" not in doc:
            raise SchemaError(f"{where}: missing '@type'")
        if doc["@type"] != expected_type:
            raise SchemaError(f"{where}: '@type' must be {expected_type!r}, got {doc['@type']!r}")
        for key in doc:
            if key not in known and key != "@type" and self.warnings is not None:
                self.warnings.append(f"{where}: ignored unknown key {key!r}")
        return doc

    @staticmethod
    def text(doc: dict, key: str, where: str, default: str | None = None) -> str:
        if key not in doc:
            if default is None:
                raise SchemaError(f"{where}: missing required key {key!r}")
            return default
        value = doc[key]
        if not isinstance(value, str):
            raise SchemaError(f"{where}: {key!r} must be a string")
        return value

    @staticmethod
    def items(doc: dict, key: str, where: str, required: bool = True) -> list:
        if key not in doc:
            if required:
                raise SchemaError(f"{where}: missing required key {key!r}")
            return []
        value = doc[key]
        if not isinstance(value, list):
            raise SchemaError(f"{where}: {key!r} must be a list")
        return value


_SERVICE_KEYS = {"dct:identifier", "dcat:endpointURL", "dcat:endpointDescription"}
_DIST_KEYS = {"dct:format", "dcat:accessService"}
_DATASET_KEYS = {"dct:identifier", "dct:title", "dct:description", "dcat:version", "dcat:distribution"}
_CATALOG_KEYS = {"@context", "dct:identifier", "dct:title", "dct:description", "dcat:dataset", "dcat:service"}


def dataset_from_document(doc: Any, where: str = "dataset", warnings: list[str] | None = None) -> DcatDataset:
    r = _Reader(warnings)
    r.node(doc, T_DATASET, where, _DATASET_KEYS | {"odrl:hasPolicy"})
    dists = []
    for i, raw in enumerate(r.items(doc, "dcat:distribution", where, required=False)):
        here = f"{where}.distribution[{i}]"
        r.node(raw, T_DISTRIBUTION, here, _DIST_KEYS)
        dists.append(DcatDistribution(r.text(raw, "dct:format", here), r.text(raw, "dcat:accessService", here)))
    version = doc.get("dcat:version")
    if version is not None and not isinstance(version, str):
        raise SchemaError(f"{where}: 'dcat:version' must be a string")
    return DcatDataset(
        id=r.text(doc, "dct:identifier", where),
        title=r.text(doc, "dct:title", where),
        description=r.text(doc, "dct:description", where, ""),
        version=version,
        distributions=tuple(dists),
    )


def deserialize_catalog(text: str | bytes, *, warnings: list[str] | None = None) -> DcatCatalog:
    """Parse a catalog document.

    Unknown keys do not fail the parse; when ``warnings`` is given, one
    message per ignored key is appended to it.
    """
    try:
        doc = json.loads(text)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ParseError(str(exc)) from exc
    r = _Reader(warnings)
    r.node(doc, T_CATALOG, "catalog", _CATALOG_KEYS)
    context = doc.get("@context", CONTEXT)
    if context != CONTEXT and warnings is not None:
        warnings.append(f"catalog: unexpected @context {context!r}")
    datasets = [
        dataset_from_document(raw, f"dataset[{i}]", warnings)
        for i, raw in enumerate(r.items(doc, "dcat:dataset", "catalog"))
    ]
    services = []
    for i, raw in enumerate(r.items(doc, "dcat:service", "catalog", required=False)):
        here = f"service[{i}]"
        r.node(raw, T_SERVICE, here, _SERVICE_KEYS)
        services.append(
            DcatDataService(
                id=r.text(raw, "dct:identifier", here),
                endpoint_url=r.text(raw, "dcat:endpointURL", here),
                endpoint_description=r.text(raw, "dcat:endpointDescription", here, ""),
            )
        )
    return DcatCatalog(
        id=r.text(doc, "dct:identifier", "catalog"),
        title=r.text(doc, "dct:title", "catalog"),
        description=r.text(doc, "dct:description", "catalog", ""),
        datasets=tuple(datasets),
        services=tuple(services),
    )
