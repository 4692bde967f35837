"""Persistent policy store indexed by target urn.

With a ``data_dir`` each policy lives in its own JSON document, rewritten on
every status change. Policies are never deleted, only invalidated.
"""

from __future__ import annotations

import json
import logging
import threading
import uuid
from dataclasses import replace
from datetime import datetime, timedelta
from pathlib import Path
from typing import Callable, Iterable
from urllib.parse import quote

from fedspace.errors import NotAnOffer, OfferInvalidated, UnknownPolicy
from fedspace.odrl.model import OdrlPolicy, PolicyKind, PolicyStatus, Rule
from fedspace.store.journal import write_json_atomic
from fedspace.timeutil import utcnow

log = logging.getLogger(__name__)


def new_uid() -> str:
    return f"urn:uuid:{uuid.uuid4()}"


class PolicyStore:
    def __init__(self, data_dir: Path | str | None = None, *, clock: Callable[[], datetime] = utcnow):
        self._clock = clock
        self._lock = threading.Lock()
        self._policies: dict[str, OdrlPolicy] = {}
        self._by_target: dict[str, list[str]] = {}
        self._last_created: datetime | None = None
        self._dir = Path(data_dir) if data_dir is not None else None
        if self._dir is not None:
            self._dir.mkdir(parents=True, exist_ok=True)
            self._load()

    def _load(self) -> None:
        loaded = []
        for path in self._dir.glob("*.json"):
            with open(path, encoding="utf-8") as fh:
                loaded.append(OdrlPolicy.from_document(json.load(fh)))
        for policy in sorted(loaded, key=lambda p: p.created_at):
            self._index(policy)
        log.info("event=policies.loaded count=%d", len(loaded))

    def _index(self, policy: OdrlPolicy) -> None:
        if policy.uid not in self._policies:
            self._by_target.setdefault(policy.target, []).append(policy.uid)
        self._policies[policy.uid] = policy
        if self._last_created is None or policy.created_at > self._last_created:
            self._last_created = policy.created_at

    def _save(self, policy: OdrlPolicy) -> None:
        # caller holds the lock
        self._index(policy)
        if self._dir is not None:
            write_json_atomic(self._dir / f"{quote(policy.uid, safe='')}.json", policy.to_document())

    def _stamp(self) -> datetime:
        # strictly increasing so "newest first" is total and survives reloads
        now = self._clock()
        if self._last_created is not None and now <= self._last_created:
            now = self._last_created + timedelta(microseconds=1)
        return now

    def create_policy(
        self,
        kind: PolicyKind,
        target: str,
        assigner: str,
        *,
        permissions: Iterable[Rule] = (),
        prohibitions: Iterable[Rule] = (),
        obligations: Iterable[Rule] = (),
        assignee: str | None = None,
        resolver: Callable[[str], object],
    ) -> OdrlPolicy:
        """Create and persist a policy after confirming its target resolves.

        ``resolver`` raises :class:`~fedspace.errors.TargetNotFound` for
        unknown or deleted targets; that error propagates unchanged.
        """
        draft = OdrlPolicy(
            uid=new_uid(),
            kind=PolicyKind(kind),
            target=target,
            assigner=assigner,
            assignee=assignee,
            permissions=tuple(permissions),
            prohibitions=tuple(prohibitions),
            obligations=tuple(obligations),
        )
        resolver(target)
        with self._lock:
            policy = replace(draft, created_at=self._stamp())
            self._save(policy)
        log.info("event=policy.created uid=%s kind=%s target=%s", policy.uid, policy.kind.value, target)
        return policy

    def get(self, uid: str) -> OdrlPolicy:
        try:
            return self._policies[uid]
        except KeyError:
            raise UnknownPolicy(uid) from None

    def all(self) -> list[OdrlPolicy]:
        return list(self._policies.values())

    def list_policies_by_target(self, target: str) -> list[OdrlPolicy]:
        uids = list(self._by_target.get(target, ()))
        return sorted((self._policies[u] for u in uids), key=lambda p: p.created_at, reverse=True)

    def make_agreement(self, offer: OdrlPolicy, assignee: str) -> OdrlPolicy:
        if offer.kind is not PolicyKind.OFFER:
            raise NotAnOffer(offer.uid)
        with self._lock:
            current = self._policies.get(offer.uid, offer)
            if offer.status is not PolicyStatus.ACTIVE or current.status is not PolicyStatus.ACTIVE:
                raise OfferInvalidated(offer.uid)
            agreement = replace(
                offer,
                uid=new_uid(),
                kind=PolicyKind.AGREEMENT,
                assignee=assignee,
                status=PolicyStatus.ACTIVE,
                created_at=self._stamp(),
                offer_uid=offer.uid,
            )
            self._save(agreement)
        log.info("event=policy.agreement uid=%s offer=%s assignee=%s", agreement.uid, offer.uid, assignee)
        return agreement

    def invalidate(self, uid: str) -> bool:
        with self._lock:
            policy = self.get(uid)
            if policy.status is PolicyStatus.INVALIDATED:
                return False
            self._save(replace(policy, status=PolicyStatus.INVALIDATED))
            return True

    def invalidate_by_target(self, target: str) -> int:
        count = 0
        with self._lock:
            for uid in list(self._by_target.get(target, ())):
                policy = self._policies[uid]
                if policy.status is PolicyStatus.ACTIVE:
                    self._save(replace(policy, status=PolicyStatus.INVALIDATED))
                    count += 1
        if count:
            log.info("event=policy.invalidated target=%s count=%d", target, count)
        return count
