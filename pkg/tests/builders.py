"""Small constructors shared by the test modules."""

from __future__ import annotations

from fedspace.odrl.model import Constraint, PolicyKind, Rule
from fedspace.odrl.store import PolicyStore
from fedspace.store.model import DatasetAspect, EntityKind, EntityRecord
from fedspace.store.store import EntityStore


def dataset_urn(name: str, platform: str = "pg", env: str = "PROD") -> str:
    return f"urn:li:dataset:(urn:li:dataPlatform:{platform},{name},{env})"


def domain_urn(name: str) -> str:
    return f"urn:li:domain:{name}"


def domain(name: str, **kw) -> EntityRecord:
    return EntityRecord(domain_urn(name), EntityKind.DOMAIN, kw.pop("title", name.title()), **kw)


def dataset(name: str, **kw) -> EntityRecord:
    return EntityRecord(dataset_urn(name), EntityKind.DATASET, kw.pop("title", name.replace("_", " ")), **kw)


def aspect(name: str, domain_name: str, *, fmt: str = "text/csv", endpoint: str | None = None, **kw) -> DatasetAspect:
    return DatasetAspect(
        dataset_urn=dataset_urn(name),
        domain_urn=domain_urn(domain_name),
        distribution_type=kw.pop("distribution_type", "HTTP_PULL"),
        access_endpoint=endpoint or f"https://data.example.org/{domain_name}/{name}",
        auth_scheme=kw.pop("auth_scheme", "BEARER"),
        format_hint=fmt,
        **kw,
    )


def populated_store(layout: dict[str, list[str]], **store_kw) -> EntityStore:
    """Store with the given domain -> dataset names layout."""
    store = EntityStore(**store_kw)
    for dom, names in layout.items():
        store.upsert_entity(domain(dom))
        for name in names:
            store.upsert_entity(dataset(name), aspect(name, dom))
    return store


def use_offer(
    policies: PolicyStore,
    target: str,
    *,
    assigner: str = "provider",
    constraints: tuple[Constraint, ...] = (),
    resolver=lambda urn: None,
):
    return policies.create_policy(
        PolicyKind.OFFER,
        target,
        assigner,
        permissions=[Rule("use", constraints)],
        prohibitions=[Rule("distribute")],
        resolver=resolver,
    )
