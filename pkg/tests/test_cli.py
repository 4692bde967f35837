"""CLI commands against a real connector subprocess."""

import json

import pytest

from conftest import FIXTURES, PARKING, TRAFFIC
from fedspace import cli
from fedspace.demo import ADMIN_TOKEN, free_port, spawn, wait_healthy
from fedspace.negotiation import NegotiationProcess, NegotiationState
from fedspace.store.model import FederationReport, IngestReport

pytestmark = pytest.mark.filterwarnings("ignore::DeprecationWarning")


@pytest.fixture(scope="module")
def nodes(tmp_path_factory):
    workdir = tmp_path_factory.mktemp("cli")
    extra = {"end_system": str(FIXTURES / "end_system" / "manifest.json")}
    provider = spawn("provider", workdir, "PROVIDER", extra)
    source = spawn("source", workdir, "PROVIDER")
    try:
        wait_healthy(provider)
        wait_healthy(source)
        yield provider, source
    finally:
        provider.stop()
        source.stop()


def run(capsys, *argv):
    try:
        code = cli.main(list(argv))
    except SystemExit as exc:
        code = exc.code
    out, err = capsys.readouterr()
    return code, out, err


def admin(*argv):
    return (*argv, "--admin-token", ADMIN_TOKEN)


def test_usage_errors(capsys):
    assert run(capsys)[0] == 1
    assert run(capsys, "fly")[0] == 1
    assert run(capsys, "negotiate", "--provider", "http://x")[0] == 1


def test_unreachable_provider(capsys):
    code, _, err = run(capsys, "domains", "--provider", f"http://127.0.0.1:{free_port()}")
    assert code == 2 and err


def test_ingest_and_listing(capsys, nodes):
    provider, source = nodes
    code, out, _ = run(capsys, *admin("ingest", "--json", "--file", str(FIXTURES / "catalog_a" / "catalog.json"), "--store", provider.url))
    assert code == 0
    assert IngestReport.from_dict(json.loads(out)).created == 4
    code, out, _ = run(capsys, "domains", "--json", "--provider", provider.url)
    assert code == 0 and [d["urn"] for d in json.loads(out)] == ["urn:li:domain:mobility"]
    code, out, _ = run(capsys, "datasets", "--provider", provider.url, "--domain", "urn:li:domain:mobility")
    assert code == 0 and TRAFFIC in out
    code, out, _ = run(capsys, "search", "--provider", provider.url, "traffic")
    assert code == 0 and TRAFFIC in out


def test_malformed_ingest_reports_line(capsys, nodes):
    provider, _ = nodes
    code, _, err = run(capsys, *admin("ingest", "--file", str(FIXTURES / "malformed.json"), "--store", provider.url))
    assert code == 1 and "line" in err


def test_wrong_admin_token(capsys, nodes):
    provider, _ = nodes
    code, _, _ = run(capsys, "ingest", "--file", str(FIXTURES / "catalog_a" / "catalog.json"),
                     "--store", provider.url, "--admin-token", "nope")
    assert code == 1


def test_federate_json(capsys, nodes):
    provider, source = nodes
    run(capsys, *admin("ingest", "--file", str(FIXTURES / "catalog_b" / "catalog.json"), "--store", source.url))
    code, out, _ = run(capsys, *admin("federate", "--json", "--source", source.url, "--store", provider.url))
    assert code == 0
    report = FederationReport.from_dict(json.loads(out))
    assert report.created == 5 and report.updated == 0


def test_negotiate_and_transfer(capsys, nodes, tmp_path):
    provider, _ = nodes
    run(capsys, *admin("ingest", "--file", str(FIXTURES / "catalog_a" / "catalog.json"), "--store", provider.url))
    code, out, _ = run(capsys, *admin("policy", "create", "--provider", provider.url, "--target", TRAFFIC,
                                      "--file", str(FIXTURES / "policy.json")))
    assert code == 0
    offer = out.strip()
    code, out, _ = run(capsys, "negotiate", "--json", "--provider", provider.url, "--offer", offer)
    assert code == 0
    process = NegotiationProcess.from_document(json.loads(out))
    assert process.state is NegotiationState.FINALIZED
    target = tmp_path / "out.csv"
    code, out, _ = run(capsys, "transfer", "--provider", provider.url, "--agreement", process.agreement_uid,
                       "--out", str(target))
    assert code == 0 and "COMPLETED" in out
    assert target.read_bytes() == (FIXTURES / "end_system" / "data" / "traffic_counts.csv").read_bytes()
    code, out, _ = run(capsys, *admin("policy", "list", "--json", "--provider", provider.url, "--target", TRAFFIC))
    assert code == 0 and offer in {p["uid"] for p in json.loads(out)}


def test_negotiate_deleted_target(capsys, nodes):
    from fedspace.service.client import ConnectorClient

    provider, _ = nodes
    run(capsys, *admin("ingest", "--file", str(FIXTURES / "catalog_a" / "catalog.json"), "--store", provider.url))
    code, out, _ = run(capsys, *admin("policy", "create", "--provider", provider.url, "--target", PARKING,
                                      "--file", str(FIXTURES / "policy.json")))
    offer = out.strip()
    with ConnectorClient(provider.url, admin_token=ADMIN_TOKEN) as client:
        client.delete_entity(PARKING)
    code, out, _ = run(capsys, "negotiate", "--provider", provider.url, "--offer", offer)
    assert code == 3
    assert "TERMINATED" in out


def test_denied_transfer(capsys, nodes, tmp_path):
    provider, _ = nodes
    run(capsys, *admin("ingest", "--file", str(FIXTURES / "catalog_a" / "catalog.json"), "--store", provider.url))
    expired = tmp_path / "expired.json"
    expired.write_text(json.dumps({
        "@type": "Offer",
        "permission": [{"action": "use", "constraint": [
            {"leftOperand": "dateTime", "operator": "lt", "rightOperand": "2001-01-01T00:00:00Z"}]}],
    }))
    _, out, _ = run(capsys, *admin("policy", "create", "--provider", provider.url, "--target", TRAFFIC, "--file", str(expired)))
    _, out, _ = run(capsys, "negotiate", "--provider", provider.url, "--offer", out.strip())
    code, _, err = run(capsys, "transfer", "--provider", provider.url, "--agreement", out.strip(),
                       "--out", str(tmp_path / "never"))
    assert code == 4 and "policy denied" in err
    assert not (tmp_path / "never").exists()
