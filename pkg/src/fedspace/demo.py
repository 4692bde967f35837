"""Loopback demo: five connector processes, one full data-sharing round.

Two source stores each ingest a fixture catalog, a federator pulls both, a
provider exposes the federated catalogs through its facade, and a consumer
negotiates and transfers one dataset. The fetched bytes are compared with
the end-system file.
"""

from __future__ import annotations

import json
import os
import shutil
import socket
import subprocess
import sys
import tempfile
import time
from contextlib import ExitStack
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from fedspace.errors import FedspaceError, ProviderUnreachable
from fedspace.service.client import ConnectorClient

ADMIN_TOKEN = "demo-admin"
DEMO_TARGET = "urn:li:dataset:(urn:li:dataPlatform:postgres,traffic_counts,PROD)"


def default_fixtures() -> Path:
    for candidate in (Path(__file__).resolve().parents[2] / "fixtures", Path.cwd() / "fixtures"):
        if (candidate / "catalog_a").is_dir():
            return candidate
    raise FileNotFoundError("fixtures directory not found; pass --fixtures")


def free_port() -> int:
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


@dataclass
class Node:
    name: str
    url: str
    process: subprocess.Popen
    log_path: Path

    def stop(self) -> None:
        if self.process.poll() is None:
            self.process.terminate()
            try:
                self.process.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self.process.kill()
                self.process.wait()


def spawn(name: str, workdir: Path, role: str, extra: dict | None = None) -> Node:
    port = free_port()
    data_dir = workdir / name
    data_dir.mkdir(parents=True, exist_ok=True)
    config = {
        "participant_id": name,
        "role": role,
        "port": port,
        "data_dir": str(data_dir),
        "admin_token": ADMIN_TOKEN,
        "feed_poll_seconds": 0.1,
        **(extra or {}),
    }
    config_path = workdir / f"{name}.json"
    config_path.write_text(json.dumps(config, indent=2))
    log_path = workdir / f"{name}.log"
    env = {k: v for k, v in os.environ.items() if not k.startswith(("FEDSPACE_", "FACADE_"))}
    with open(log_path, "wb") as log_file:
        process = subprocess.Popen(
            [sys.executable, "-m", "fedspace", "serve", "--config", str(config_path)],
            stdout=log_file,
            stderr=subprocess.STDOUT,
            env=env,
        )
    return Node(name, f"http://127.0.0.1:{port}", process, log_path)


def wait_healthy(node: Node, timeout: float = 15.0) -> None:
    deadline = time.monotonic() + timeout
    with ConnectorClient(node.url, timeout=1.0) as client:
        while time.monotonic() < deadline:
            if node.process.poll() is not None:
                raise ProviderUnreachable(f"{node.name} exited early; see {node.log_path}")
            try:
                client.healthz()
                return
            except ProviderUnreachable:
                time.sleep(0.05)
    raise ProviderUnreachable(f"{node.name} did not become healthy within {timeout}s")


@dataclass
class DemoResult:
    passed: bool
    steps: list[dict] = field(default_factory=list)
    error: str | None = None

    def to_dict(self) -> dict:
        return {"result": "PASS" if self.passed else "FAIL", "steps": self.steps, "error": self.error}


def run_demo(
    fixtures: Path | None = None,
    workdir: Path | None = None,
    report: Callable[[str], None] = lambda line: None,
) -> DemoResult:
    fixtures = Path(fixtures) if fixtures is not None else default_fixtures()
    result = DemoResult(passed=False)

    def step(name: str, **detail) -> None:
        result.steps.append({"step": name, **detail})
        report(f"{name}: " + ", ".join(f"{k}={v}" for k, v in detail.items()))

    with ExitStack() as stack:
        if workdir is None:
            workdir = Path(tempfile.mkdtemp(prefix="fedspace-demo-"))
            stack.callback(shutil.rmtree, workdir, True)
        workdir.mkdir(parents=True, exist_ok=True)
        nodes: list[Node] = []
        stack.callback(lambda: [n.stop() for n in reversed(nodes)])
        try:
            source_a = spawn("source-a", workdir, "PROVIDER")
            source_b = spawn("source-b", workdir, "PROVIDER")
            federator = spawn("federator", workdir, "PROVIDER")
            nodes += [source_a, source_b, federator]
            provider = spawn(
                "provider",
                workdir,
                "PROVIDER",
                {
                    "end_system": str((fixtures / "end_system" / "manifest.json").resolve()),
                    "facade": {"store_url": federator.url},
                },
            )
            consumer = spawn("consumer", workdir, "CONSUMER")
            nodes += [provider, consumer]
            for node in nodes:
                wait_healthy(node)
            step("start", nodes=len(nodes))

            admin = {n.name: stack.enter_context(ConnectorClient(n.url, admin_token=ADMIN_TOKEN)) for n in nodes}
            for node, folder in ((source_a, "catalog_a"), (source_b, "catalog_b")):
                counts = admin[node.name].ingest((fixtures / folder / "catalog.json").read_bytes())
                step("ingest", store=node.name, **counts)
            for source in (source_a, source_b):
                counts = admin["federator"].federate(source.url)
                step("federate", source=source.name, **counts)

            catalog = admin["provider"].catalog()
            catalogs = catalog["dcat:catalog"]
            datasets = sum(len(c["dcat:dataset"]) for c in catalogs)
            step("catalog", catalogs=len(catalogs), datasets=datasets)

            policy_doc = json.loads((fixtures / "policy.json").read_text())
            policy_doc["target"] = DEMO_TARGET
            offer = admin["provider"].create_policy(policy_doc)
            step("policy", offer=offer["uid"])

            negotiation = admin["consumer"].consumer_negotiate(provider.url, offer["uid"])
            step("negotiate", state=negotiation["state"], agreement=negotiation["agreementId"])
            if negotiation["state"] != "FINALIZED":
                raise FedspaceError(f"negotiation ended {negotiation['state']}: {negotiation.get('reason')}")

            transfer, data = admin["consumer"].consumer_transfer(provider.url, negotiation["agreementId"])
            expected = (fixtures / "end_system" / "data" / "traffic_counts.csv").read_bytes()
            step("transfer", state=transfer["state"], bytes=len(data), identical=data == expected)

            result.passed = (
                len(catalogs) == 2
                and datasets == 7
                and transfer["state"] == "COMPLETED"
                and data == expected
            )
        except (FedspaceError, OSError) as exc:
            result.error = f"{type(exc).__name__}: {exc}"
            report(f"error: {result.error}")
    return result
