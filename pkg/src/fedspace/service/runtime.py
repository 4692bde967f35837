"""Wires the modules of one connector instance together."""

from __future__ import annotations

import json
import logging
import threading
from datetime import datetime, timedelta
from pathlib import Path
from typing import Callable

import httpx

from fedspace.docstore import DocumentStore
from fedspace.errors import FedspaceError
from fedspace.facade import Facade, OperationalMetadata
from fedspace.negotiation import NegotiationConsumer, NegotiationProcess, NegotiationProvider
from fedspace.odrl.store import PolicyStore
from fedspace.service.client import ConnectorClient, HttpProviderTransport, pull_transfer
from fedspace.service.config import ConnectorConfig
from fedspace.store import EntityStore, HttpStoreClient, LocalStoreClient, StoreClient, TokenIssuer
from fedspace.store.journal import write_json_atomic
from fedspace.timeutil import utcnow
from fedspace.transfer import EndSystem, TransferManager

log = logging.getLogger(__name__)


class FeedPump:
    """Polls the store's change feed and hands each event to the facade.

    The cursor survives restarts in ``cursor_path``; the facade drops any
    event it has already seen, so redelivery after a crash is harmless.
    """

    def __init__(self, facade: Facade, client: StoreClient, cursor_path: Path | None, poll_seconds: float):
        self.facade = facade
        self.client = client
        self.cursor_path = cursor_path
        self.poll_seconds = poll_seconds
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        if cursor_path is not None and cursor_path.exists():
            self.facade.seek(json.loads(cursor_path.read_text())["cursor"])

    @property
    def cursor(self) -> int:
        return self.facade.last_seq

    def drain(self) -> int:
        """Apply every pending event; returns the cursor afterwards."""
        with self._lock:
            while True:
                events = self.facade.with_session(lambda t: self.client.events_since(t.token, self.cursor))
                if not events:
                    return self.cursor
                for event in events:
                    self.facade.on_change(event)
                if self.cursor_path is not None:
                    write_json_atomic(self.cursor_path, {"cursor": self.cursor})

    def _run(self) -> None:
        while not self._stop.is_set():
            try:
                self.drain()
            except FedspaceError as exc:
                log.warning("event=feed.poll_failed error=%s", exc)
            self._stop.wait(self.poll_seconds)

    def start(self) -> None:
        if self._thread is None:
            self._thread = threading.Thread(target=self._run, name="feed-pump", daemon=True)
            self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=5)
            self._thread = None


class Runtime:
    def __init__(
        self,
        config: ConnectorConfig,
        *,
        clock: Callable[[], datetime] = utcnow,
        store_transport: httpx.BaseTransport | None = None,
        peer_transport: httpx.BaseTransport | None = None,
    ):
        self.config = config
        self.clock = clock
        self.peer_transport = peer_transport
        self.store: EntityStore | None = None
        self.facade: Facade | None = None
        self.provider: NegotiationProvider | None = None
        self.transfers: TransferManager | None = None
        self.pump: FeedPump | None = None
        self.consumer: NegotiationConsumer | None = None

        if config.role.provides:
            self.store = EntityStore(
                config.subdir("store"),
                catalog_id=config.catalog_id,
                clock=clock,
                snapshot_every=config.snapshot_every,
            )
            self.issuer = TokenIssuer(
                config.store_credentials, timedelta(seconds=config.session_token_lifetime_seconds), clock
            )
            if config.facade.store_url:
                self.store_client: StoreClient = HttpStoreClient(config.facade.store_url, transport=store_transport)
            else:
                self.store_client = LocalStoreClient(self.store, self.issuer)
            self.policies = PolicyStore(config.subdir("policies"), clock=clock)
            self.facade = Facade(self.store_client, config.facade, clock=clock, on_target_deleted=self._target_deleted)
            self.provider = NegotiationProvider(
                config.participant_id,
                self.policies,
                self.resolve_fresh,
                data_dir=config.subdir("negotiations-provider"),
                clock=clock,
            )
            end_system = EndSystem.from_manifest(config.end_system) if config.end_system else EndSystem()
            self.transfers = TransferManager(
                self.policies,
                self.provider.find_by_agreement,
                self.resolve_fresh,
                end_system,
                data_dir=config.subdir("transfers"),
                clock=clock,
                token_lifetime=timedelta(seconds=config.transfer_token_lifetime_seconds),
            )
            cursor = config.data_dir / "feed-cursor.json" if config.data_dir is not None else None
            self.pump = FeedPump(self.facade, self.store_client, cursor, config.feed_poll_seconds)

        if config.role.consumes:
            self.consumer = NegotiationConsumer(
                config.participant_id, data_dir=config.subdir("negotiations-consumer"), clock=clock
            )
            self.consumer_transfers = DocumentStore(config.subdir("transfers-consumer"))

    def resolve_fresh(self, urn: str) -> OperationalMetadata:
        return self.facade.resolve(urn, fresh=True)

    def _target_deleted(self, urn: str) -> None:
        count = self.policies.invalidate_by_target(urn)
        log.info("event=facade.target_deleted urn=%s invalidated=%d", urn, count)

    # -- consumer side --------------------------------------------------------------

    def _peer(self, url: str) -> ConnectorClient:
        return ConnectorClient(url, transport=self.peer_transport)

    def negotiate(self, provider_url: str, offer_uid: str) -> NegotiationProcess:
        with self._peer(provider_url) as provider:
            return self.consumer.negotiate(HttpProviderTransport(provider), offer_uid)

    def pull(self, provider_url: str, agreement_uid: str, fmt: str | None = None) -> tuple[dict, bytes]:
        with self._peer(provider_url) as provider:
            process, data = pull_transfer(provider, agreement_uid, fmt)
        self.consumer_transfers.save(process["transferId"], process)
        return process, data

    # -- lifecycle ------------------------------------------------------------------

    def start(self) -> None:
        if self.pump is not None:
            self.pump.start()

    def close(self) -> None:
        if self.pump is not None:
            self.pump.stop()
        if self.store is not None:
            self.store.close()
        if isinstance(getattr(self, "store_client", None), HttpStoreClient):
            self.store_client.close()
