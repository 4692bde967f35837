from __future__ import annotations

import json
import threading
from datetime import datetime, timedelta, timezone

import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from builders import aspect, dataset, dataset_urn, domain, domain_urn, populated_store
from conftest import FIXTURES, Clock, fixture_records
from fedspace.errors import (
    AlreadyDeleted,
    DeletedEntity,
    DuplicateEdge,
    EmptyQuery,
    MalformedUrn,
    MissingParentDomain,
    SelfLoop,
    SourceUnreachable,
    UnknownUrn,
)
from fedspace.store import ChangeKind, Direction, EntityKind, EntityRecord, EntityStore, PageRequest
from fedspace.store.ingest import parse_ingestion
from fedspace.timeutil import to_iso
from oracles import merge_oracle


# -- upsert / delete ----------------------------------------------------------------


def test_first_domain_upsert_emits_create():
    store = EntityStore()
    assert store.upsert_entity(domain("mobility")) == "urn:li:domain:mobility"
    [event] = store.events_since(0)
    assert (event.kind, event.urn, event.seq_no) == (ChangeKind.CREATE, "urn:li:domain:mobility", 1)


def test_second_upsert_is_update_and_keeps_count():
    store = EntityStore()
    store.upsert_entity(domain("mobility", description="v1"))
    store.upsert_entity(domain("mobility", description="v2"))
    assert [e.kind for e in store.events_since(0)] == [ChangeKind.CREATE, ChangeKind.UPDATE]
    assert len(store.live_urns()) == 1
    assert store.get_entity(domain_urn("mobility")).description == "v2"


def test_update_keeps_created_at_and_refreshes_updated_at():
    clock = Clock()
    store = EntityStore(clock=clock)
    store.upsert_entity(domain("mobility"))
    first = store.get_entity(domain_urn("mobility"))
    clock.advance(minutes=5)
    store.upsert_entity(domain("mobility", description="changed"))
    second = store.get_entity(domain_urn("mobility"))
    assert second.created_at == first.created_at
    assert second.updated_at == first.updated_at + timedelta(minutes=5)


def test_dataset_with_unknown_parent_domain():
    store = EntityStore()
    with pytest.raises(MissingParentDomain):
        store.upsert_entity(dataset("orphan"), aspect("orphan", "nowhere"))
    assert store.latest_seq == 0


def test_record_kind_must_match_urn_grammar():
    with pytest.raises(MalformedUrn):
        EntityRecord(dataset_urn("x"), EntityKind.DOMAIN, "x")
    with pytest.raises(MalformedUrn):
        EntityRecord("urn:li:domain:x", EntityKind.DATASET, "x")


def test_soft_delete_hides_dataset_from_listing():
    store = populated_store({"mobility": ["d1", "d2"]})
    store.delete_entity(dataset_urn("d2"))
    rows = store.list_datasets_in_domain(domain_urn("mobility")).items
    assert [r.urn for r, _ in rows] == [dataset_urn("d1")]
    assert store.get_entity(dataset_urn("d2"), include_deleted=True).deleted
    with pytest.raises(UnknownUrn):
        store.get_entity(dataset_urn("d2"))
    assert store.events_since(0)[-1].kind is ChangeKind.DELETE


def test_delete_errors():
    store = populated_store({"mobility": ["d1"]})
    with pytest.raises(UnknownUrn):
        store.delete_entity(dataset_urn("missing"))
    store.delete_entity(dataset_urn("d1"))
    with pytest.raises(AlreadyDeleted):
        store.delete_entity(dataset_urn("d1"))


def test_deleted_entity_can_be_recreated():
    store = populated_store({"mobility": ["d1"]})
    store.delete_entity(dataset_urn("d1"))
    store.upsert_entity(dataset("d1"), aspect("d1", "mobility"))
    assert store.events_since(0)[-1].kind is ChangeKind.CREATE
    assert dataset_urn("d1") in store.live_urns()


# -- listings -------------------------------------------------------------------------


def test_empty_store_lists_nothing():
    assert EntityStore().list_domains().items == []


def test_domains_are_listed_in_urn_order():
    store = EntityStore()
    store.upsert_entity(domain("b"))
    store.upsert_entity(domain("a"))
    assert [d.urn for d in store.list_domains().items] == ["urn:li:domain:a", "urn:li:domain:b"]


def test_last_page_has_the_remainder():
    store = populated_store({"a": [], "b": [], "c": []})
    page = store.list_domains(PageRequest(offset=2, limit=2))
    assert len(page.items) == 1 and page.total == 3 and not page.has_more


def test_out_of_range_offset_gives_empty_page():
    store = populated_store({"a": []})
    assert store.list_domains(PageRequest(offset=10, limit=5)).items == []


def test_datasets_of_empty_and_unknown_domain():
    store = populated_store({"empty": []})
    assert store.list_datasets_in_domain(domain_urn("empty")).items == []
    with pytest.raises(UnknownUrn):
        store.list_datasets_in_domain(domain_urn("nope"))


@given(st.integers(0, 12), st.integers(1, 5))
def test_pagination_partitions_domains(n, limit):
    store = populated_store({f"d{i:02d}": [] for i in range(n)})
    seen = []
    offset = 0
    while True:
        page = store.list_domains(PageRequest(offset, limit))
        if not page.items:
            break
        seen.extend(d.urn for d in page.items)
        offset += limit
    assert seen == [d.urn for d in store.list_domains(PageRequest(0, 1000)).items]
    assert len(seen) == len(set(seen)) == n


# -- detail / search / lineage ------------------------------------------------------


def test_dataset_detail_counts_lineage():
    store = populated_store({"m": ["up", "down", "alone"]})
    store.add_lineage_edge(dataset_urn("up"), dataset_urn("down"))
    detail = store.get_dataset_detail(dataset_urn("down"))
    assert (detail.upstream_count, detail.downstream_count) == (1, 0)
    assert detail.aspect.domain_urn == domain_urn("m")
    alone = store.get_dataset_detail(dataset_urn("alone"))
    assert (alone.upstream_count, alone.downstream_count) == (0, 0)


def test_detail_of_deleted_dataset():
    store = populated_store({"m": ["gone"]})
    store.delete_entity(dataset_urn("gone"))
    with pytest.raises(DeletedEntity):
        store.get_dataset_detail(dataset_urn("gone"))


def test_search_examples():
    store = EntityStore()
    for text in ("catalog_a", "catalog_b"):
        store.ingest(parse_ingestion(json.dumps(fixture_records(text))))
    hits = store.search_datasets("traffic").items
    assert [h.name for h in hits] == ["Traffic counts"]
    # matches a custom property value only
    by_property = store.search_datasets("odbl").items
    assert [h.urn for h in by_property] == ["urn:li:dataset:(urn:li:dataPlatform:s3,bike_stations,PROD)"]
    assert store.search_datasets("zzz-no-match").items == []
    with pytest.raises(EmptyQuery):
        store.search_datasets("   ")


@given(st.text(alphabet="abcdeXYZ ", min_size=1, max_size=3).filter(lambda q: q.strip()))
@settings(suppress_health_check=[HealthCheck.too_slow])
def test_search_soundness(query):
    store = populated_store({"m": ["alpha", "bravo", "charlie_delta"]})
    store.upsert_entity(
        dataset("echo", description="eXtra Zed", custom_properties={"tag": "Yankee"}), aspect("echo", "m")
    )
    needle = query.strip().lower()
    for hit in store.search_datasets(query).items:
        fields = [hit.name, hit.description, *hit.custom_properties.values()]
        assert any(needle in f.lower() for f in fields)


def test_lineage_examples():
    store = populated_store({"m": ["u", "d"]})
    store.add_lineage_edge(dataset_urn("u"), dataset_urn("d"))
    assert store.get_lineage(dataset_urn("d"), Direction.UPSTREAM) == [dataset_urn("u")]
    assert store.get_lineage(dataset_urn("u"), Direction.DOWNSTREAM) == [dataset_urn("d")]
    with pytest.raises(SelfLoop):
        store.add_lineage_edge(dataset_urn("u"), dataset_urn("u"))
    with pytest.raises(DuplicateEdge):
        store.add_lineage_edge(dataset_urn("u"), dataset_urn("d"))
    with pytest.raises(UnknownUrn):
        store.add_lineage_edge(dataset_urn("u"), dataset_urn("nope"))


def test_lineage_is_depth_one():
    store = populated_store({"m": ["a", "b", "c"]})
    store.add_lineage_edge(dataset_urn("a"), dataset_urn("b"))
    store.add_lineage_edge(dataset_urn("b"), dataset_urn("c"))
    assert store.get_lineage(dataset_urn("c"), Direction.UPSTREAM) == [dataset_urn("b")]


# -- change feed ------------------------------------------------------------------


def test_replay_from_zero_and_from_latest():
    store = populated_store({"m": ["a", "b"]})
    assert [e.seq_no for e in store.subscribe_changes(0)] == [1, 2, 3]
    assert list(store.subscribe_changes(store.latest_seq)) == []


def test_delete_event_names_the_urn():
    store = populated_store({"m": ["a"]})
    event = store.delete_entity(dataset_urn("a"))
    assert (event.kind, event.urn) == (ChangeKind.DELETE, dataset_urn("a"))


def test_follow_delivers_later_events():
    store = populated_store({"m": []})
    got = []

    def consume():
        for event in store.subscribe_changes(store.latest_seq, follow=True, timeout=2):
            got.append(event.urn)
            if len(got) == 2:
                return

    t = threading.Thread(target=consume)
    t.start()
    store.upsert_entity(dataset("x"), aspect("x", "m"))
    store.upsert_entity(dataset("y"), aspect("y", "m"))
    t.join(timeout=5)
    assert got == [dataset_urn("x"), dataset_urn("y")]


ops = st.lists(
    st.tuples(st.sampled_from(["domain", "dataset", "delete", "edge"]), st.integers(0, 3), st.integers(0, 3)),
    max_size=200,
)


@given(ops)
@settings(max_examples=60, deadline=None)
def test_feed_replay_reconstructs_live_urns(sequence):
    store = EntityStore()
    for op, i, j in sequence:
        try:
            if op == "domain":
                store.upsert_entity(domain(f"dom{i}"))
            elif op == "dataset":
                store.upsert_entity(dataset(f"ds{i}"), aspect(f"ds{i}", f"dom{j}"))
            elif op == "delete":
                store.delete_entity(dataset_urn(f"ds{i}") if j % 2 else domain_urn(f"dom{i}"))
            else:
                store.add_lineage_edge(dataset_urn(f"ds{i}"), dataset_urn(f"ds{j}"))
        except (MissingParentDomain, UnknownUrn, AlreadyDeleted, DeletedEntity, SelfLoop, DuplicateEdge):
            pass
    live = set()
    seqs = []
    for event in store.subscribe_changes(0):
        seqs.append(event.seq_no)
        if event.kind is ChangeKind.DELETE:
            live.discard(event.urn)
        else:
            live.add(event.urn)
    assert live == store.live_urns()
    assert seqs == list(range(1, len(seqs) + 1))
    urns = [r.urn for r in store.list_domains(PageRequest(0, 1000)).items]
    assert len(urns) == len(set(urns))


# -- ingestion ----------------------------------------------------------------------


def test_fixture_ingestion_counts():
    store = EntityStore()
    report = store.ingest(parse_ingestion((FIXTURES / "catalog_b" / "catalog.json").read_bytes()))
    assert (report.created, report.updated) == (5, 0)
    report = store.ingest(parse_ingestion(json.dumps(fixture_records("catalog_b"))))
    assert (report.created, report.updated) == (0, 5)


def test_malformed_file_reports_line(fixtures_dir):
    from fedspace.errors import IngestError

    with pytest.raises(IngestError) as info:
        parse_ingestion((fixtures_dir / "malformed.json").read_text())
    assert info.value.line == 3
    assert "line 3" in str(info.value)


@pytest.mark.parametrize(
    "text, line",
    [
        ("{}", 1),
        ('[\n  {"urn": "urn:li:domain:a", "kind": "DOMAIN", "name": "A"},\n  {"urn": 1}\n]', 3),
        ('[\n  {"urn": "urn:li:domain:a", "kind": "THING", "name": "A"}\n]', 2),
        ('[\n  {"urn": "urn:li:domain:a", "kind": "DOMAIN", "name": "A"}\n  {"urn": "x"}\n]', 3),
        ('[\n\n  {"urn": "not-a-urn", "kind": "DOMAIN", "name": "A"}]', 3),
    ],
)
def test_parse_errors_carry_line_numbers(text, line):
    from fedspace.errors import IngestError

    with pytest.raises(IngestError) as info:
        parse_ingestion(text)
    assert info.value.line == line


# -- federation ---------------------------------------------------------------------


def _fixture_store(folder: str, catalog_id: str, clock=None) -> EntityStore:
    store = EntityStore(catalog_id=catalog_id, **({"clock": clock} if clock else {}))
    store.ingest(parse_ingestion(json.dumps(fixture_records(folder))))
    return store


def test_two_disjoint_sources_into_empty_federator():
    a, b = _fixture_store("catalog_a", "city-a"), _fixture_store("catalog_b", "city-b")
    fed = EntityStore(catalog_id="federator")
    reports = [fed.federate_pull(a), fed.federate_pull(b)]
    expected_datasets = sum(1 for f in ("catalog_a", "catalog_b") for r in fixture_records(f) if r["kind"] == "DATASET")
    assert expected_datasets == 7
    assert sum(r.created for r in reports) == 7 + 2
    assert sum(r.conflicts for r in reports) == 0
    sources = {fed.get_entity(u).source_catalog_id for u in fed.live_urns()}
    assert sources == {"city-a", "city-b"}


def test_second_pull_is_a_no_op():
    a = _fixture_store("catalog_a", "city-a")
    fed = EntityStore(catalog_id="federator")
    fed.federate_pull(a)
    before = (fed.latest_seq, {u: fed.get_entity(u) for u in fed.live_urns()})
    report = fed.federate_pull(a)
    assert (report.created, report.updated, report.unchanged) == (0, 0, 4)
    assert (fed.latest_seq, {u: fed.get_entity(u) for u in fed.live_urns()}) == before


def test_conflict_newer_record_wins():
    early, late = Clock(), Clock()
    late.advance(hours=1)
    old = populated_store({"shared": ["x"]}, catalog_id="src-old", clock=early)
    new = EntityStore(catalog_id="src-new", clock=late)
    new.upsert_entity(domain("shared"))
    new.upsert_entity(dataset("x", description="newer"), aspect("x", "shared"))
    fed = EntityStore(catalog_id="federator")
    fed.federate_pull(new)
    report = fed.federate_pull(old)
    assert report.conflicts == 2  # the domain and the dataset
    assert fed.get_entity(dataset_urn("x")).description == "newer"
    assert fed.get_entity(dataset_urn("x")).source_catalog_id == "src-new"


def test_unreachable_source_leaves_store_untouched():
    class Flaky:
        def __init__(self, inner):
            self.inner = inner

        def list_domains(self, page):
            return self.inner.list_domains(page)

        def list_datasets_in_domain(self, domain, page):
            raise SourceUnreachable("connection reset")

        def get_dataset_detail(self, urn):
            raise SourceUnreachable("connection reset")

    fed = EntityStore()
    with pytest.raises(SourceUnreachable):
        fed.federate_pull(Flaky(_fixture_store("catalog_a", "a")))
    assert fed.latest_seq == 0 and fed.live_urns() == set()


source_layouts = st.lists(
    st.lists(st.tuples(st.integers(0, 4), st.integers(0, 3)), max_size=5),
    min_size=1,
    max_size=4,
)


@given(source_layouts, st.randoms(use_true_random=False))
@settings(max_examples=60, deadline=None)
def test_federation_matches_merge_oracle(layouts, rnd):
    base = datetime(2025, 1, 1, tzinfo=timezone.utc)
    sources = []
    for index, layout in enumerate(layouts):
        clock = Clock(base + timedelta(minutes=rnd.randint(0, 3)))
        src = EntityStore(catalog_id=f"src-{index}", clock=clock)
        src.upsert_entity(domain("shared"))
        for item, minutes in layout:
            clock.now = base + timedelta(minutes=minutes)
            src.upsert_entity(dataset(f"d{item}", description=f"from {index}"), aspect(f"d{item}", "shared"))
        sources.append(src)
    order = list(range(len(sources)))
    rnd.shuffle(order)

    fed = EntityStore(catalog_id="federator")
    pulls = []
    for index in order:
        fed.federate_pull(sources[index])
        records = [sources[index].get_entity("urn:li:domain:shared")]
        records += sorted((sources[index].get_entity(u) for u in sources[index].live_urns() if "dataset" in u), key=lambda r: r.urn)
        pulls.append([{"urn": r.urn, "updatedAt": to_iso(r.updated_at), "sourceCatalogId": r.source_catalog_id} for r in records])

    expected = merge_oracle(pulls)
    actual = {
        u: {"urn": u, "updatedAt": to_iso(fed.get_entity(u).updated_at), "sourceCatalogId": fed.get_entity(u).source_catalog_id}
        for u in fed.live_urns()
    }
    assert actual == expected


# -- persistence --------------------------------------------------------------------


def _state(store: EntityStore):
    return (
        {u: store.get_entity(u) for u in store.live_urns()},
        {u: store.get_aspect(u) for u in store.live_urns()},
        store.events_since(0),
    )


@pytest.mark.parametrize("snapshot_every", [3, 500])
def test_reload_restores_state(tmp_path, snapshot_every):
    store = populated_store({"m": ["a", "b", "c"], "n": ["d"]}, data_dir=tmp_path, snapshot_every=snapshot_every)
    store.add_lineage_edge(dataset_urn("a"), dataset_urn("b"))
    store.delete_entity(dataset_urn("c"))
    before = _state(store)
    store.close()
    again = EntityStore(tmp_path, snapshot_every=snapshot_every)
    assert _state(again) == before
    assert again.get_lineage(dataset_urn("b"), Direction.UPSTREAM) == [dataset_urn("a")]
    again.upsert_entity(dataset("e"), aspect("e", "m"))
    assert again.latest_seq == before[2][-1].seq_no + 1


def test_torn_journal_tail_is_dropped(tmp_path):
    store = populated_store({"m": ["a"]}, data_dir=tmp_path)
    store.close()
    with open(tmp_path / "journal.jsonl", "a") as fh:
        fh.write('{"seqNo": 3, "urn": "urn:li:dom')
    again = EntityStore(tmp_path)
    assert again.latest_seq == 2
    again.upsert_entity(dataset("b"), aspect("b", "m"))
    again.close()
    assert EntityStore(tmp_path).latest_seq == 3
