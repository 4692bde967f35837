from __future__ import annotations

import secrets
import threading
from dataclasses import dataclass
from datetime import datetime, timedelta
from typing import Callable, Mapping

from fedspace.errors import BadCredentials, TokenExpired
from fedspace.timeutil import from_iso, to_iso, utcnow


@dataclass(frozen=True)
class SessionToken:
    token: str
    expires_at: datetime

    def expired(self, now: datetime) -> bool:
        return now >= self.expires_at

    def to_dict(self) -> dict:
        return {"token": self.token, "expiresAt": to_iso(self.expires_at)}

    @classmethod
    def from_dict(cls, doc: Mapping) -> SessionToken:
        return cls(doc["token"], from_iso(doc["expiresAt"]))


class TokenIssuer:
    """Static client-credentials check in front of the store's query interface."""

    def __init__(
        self,
        credentials: Mapping[str, str],
        lifetime: timedelta = timedelta(hours=1),
        clock: Callable[[], datetime] = utcnow,
    ):
        if lifetime <= timedelta(0):
            raise ValueError("token lifetime must be positive")
        self._credentials = dict(credentials)
        self._lifetime = lifetime
        self._clock = clock
        self._issued: dict[str, datetime] = {}
        self._lock = threading.Lock()

    def issue(self, client_id: str, client_secret: str) -> SessionToken:
        expected = self._credentials.get(client_id)
        if expected is None or not secrets.compare_digest(expected, client_secret or ""):
            raise BadCredentials(f"bad credentials for client {client_id!r}")
        token = SessionToken(secrets.token_urlsafe(24), self._clock() + self._lifetime)
        with self._lock:
            self._issued[token.token] = token.expires_at
        return token

    def check(self, token: str) -> None:
        expires_at = self._issued.get(token)
        if expires_at is None:
            raise TokenExpired("unknown session token")
        if self._clock() >= expires_at:
            with self._lock:
                self._issued.pop(token, None)
            raise TokenExpired("session token expired")
