from __future__ import annotations

import json
import sys
from datetime import datetime, timedelta, timezone
from pathlib import Path

import httpx
import pytest

sys.path.insert(0, str(Path(__file__).parent))

REPO = Path(__file__).resolve().parents[1]
FIXTURES = REPO / "fixtures"
TRAFFIC = "urn:li:dataset:(urn:li:dataPlatform:postgres,traffic_counts,PROD)"
PARKING = "urn:li:dataset:(urn:li:dataPlatform:postgres,parking_occupancy,PROD)"
BIKES = "urn:li:dataset:(urn:li:dataPlatform:s3,bike_stations,PROD)"
MOBILITY = "urn:li:domain:mobility"
ENERGY = "urn:li:domain:energy"

# criterion number -> (title, passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


class Clock:
    """Manually advanced UTC clock."""

    def __init__(self, start: datetime | None = None):
        self.now = start or datetime(2025, 3, 1, 12, 0, tzinfo=timezone.utc)

    def __call__(self) -> datetime:
        return self.now

    def advance(self, **kw) -> None:
        self.now += timedelta(**kw)


class Router(httpx.BaseTransport):
    """Routes httpx requests to in-process ASGI apps by host name."""

    def __init__(self):
        self.apps = {}

    def add(self, host: str, app) -> str:
        from fastapi.testclient import TestClient

        self.apps[host] = TestClient(app, base_url=f"http://{host}", raise_server_exceptions=True)
        return f"http://{host}"

    def handle_request(self, request: httpx.Request) -> httpx.Response:
        client = self.apps.get(request.url.host)
        if client is None:
            raise httpx.ConnectError(f"no route to {request.url.host}", request=request)
        resp = client.request(
            request.method,
            request.url.raw_path.decode("ascii"),
            headers={k: v for k, v in request.headers.items() if k.lower() != "host"},
            content=request.read(),
        )
        return httpx.Response(resp.status_code, headers=resp.headers, content=resp.content)


def fixture_records(folder: str) -> list[dict]:
    return json.loads((FIXTURES / folder / "catalog.json").read_text())


@pytest.fixture
def clock() -> Clock:
    return Clock()


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {number}. {title}: {detail}")
