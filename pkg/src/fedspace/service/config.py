"""Connector configuration: a JSON file overlaid with ``FEDSPACE_*`` variables.

Every top-level field ``foo_bar`` can be overridden with ``FEDSPACE_FOO_BAR``;
facade settings use the ``FACADE_*`` variables understood by
:class:`fedspace.facade.FacadeConfig`. Store client credentials are given as
``FEDSPACE_STORE_CREDENTIALS=id:secret,id2:secret2``.
"""

from __future__ import annotations

import dataclasses
import json
import os
import tempfile
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Mapping

from fedspace.facade import FacadeConfig


class Role(str, Enum):
    PROVIDER = "PROVIDER"
    CONSUMER = "CONSUMER"
    BOTH = "BOTH"

    @property
    def provides(self) -> bool:
        return self is not Role.CONSUMER

    @property
    def consumes(self) -> bool:
        return self is not Role.PROVIDER


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ConnectorConfig:
    participant_id: str
    role: Role = Role.BOTH
    host: str = "127.0.0.1"
    port: int = 8080
    data_dir: Path | None = None
    admin_token: str = "change-me"
    catalog_id: str = ""
    store_credentials: Mapping[str, str] = field(default_factory=lambda: {"facade": "facade-secret"})
    session_token_lifetime_seconds: int = 3600
    transfer_token_lifetime_seconds: int = 900
    page_size: int = 100
    end_system: Path | None = None
    feed_poll_seconds: float = 0.25
    snapshot_every: int = 500
    facade: FacadeConfig = field(default_factory=FacadeConfig)

    def __post_init__(self):
        object.__setattr__(self, "role", Role(str(self.role).upper()))
        if not self.participant_id:
            raise ConfigError("participant_id must be non-empty")
        if not self.catalog_id:
            object.__setattr__(self, "catalog_id", self.participant_id)
        for name in ("session_token_lifetime_seconds", "transfer_token_lifetime_seconds", "page_size", "snapshot_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.feed_poll_seconds <= 0:
            raise ConfigError("feed_poll_seconds must be > 0")
        if self.data_dir is not None:
            path = Path(self.data_dir)
            object.__setattr__(self, "data_dir", path)
            _check_writable(path)
        if self.end_system is not None:
            object.__setattr__(self, "end_system", Path(self.end_system))

    @property
    def listen_address(self) -> str:
        return f"{self.host}:{self.port}"

    def subdir(self, name: str) -> Path | None:
        return self.data_dir / name if self.data_dir is not None else None


def _check_writable(path: Path) -> None:
    try:
        path.mkdir(parents=True, exist_ok=True)
        with tempfile.NamedTemporaryFile(dir=path):
            pass
    except OSError as exc:
        raise ConfigError(f"data_dir {path} is not writable: {exc}") from None


def _credentials(value: Any) -> dict[str, str]:
    if isinstance(value, Mapping):
        return {str(k): str(v) for k, v in value.items()}
    pairs = {}
    for item in str(value).split(","):
        client_id, sep, secret = item.strip().partition(":")
        if not sep or not client_id:
            raise ConfigError(f"bad credential entry {item!r}; expected id:secret")
        pairs[client_id] = secret
    return pairs


_CASTS = {
    "port": int,
    "session_token_lifetime_seconds": int,
    "transfer_token_lifetime_seconds": int,
    "page_size": int,
    "snapshot_every": int,
    "feed_poll_seconds": float,
    "store_credentials": _credentials,
}


def load_config(path: Path | str | None = None, env: Mapping[str, str] = os.environ) -> ConnectorConfig:
    raw: dict[str, Any] = {}
    base_dir = Path.cwd()
    if path is not None:
        path = Path(path)
        base_dir = path.parent
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")

    names = {f.name for f in dataclasses.fields(ConnectorConfig)} - {"facade"}
    unknown = set(raw) - names - {"facade"}
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    values = {k: v for k, v in raw.items() if k in names}
    for name in names:
        env_value = env.get(f"FEDSPACE_{name.upper()}")
        if env_value is not None:
            values[name] = env_value
    try:
        for name, cast in _CASTS.items():
            if name in values:
                values[name] = cast(values[name])
        # relative paths in a config file are relative to that file
        for name in ("data_dir", "end_system"):
            if values.get(name):
                values[name] = base_dir / Path(values[name]).expanduser()
        facade_raw = raw.get("facade", {})
        if not isinstance(facade_raw, dict):
            raise ConfigError("'facade' must be an object")
        facade = FacadeConfig.from_env(env, base=FacadeConfig(**facade_raw))
        values.setdefault("participant_id", "")
        return ConnectorConfig(facade=facade, **values)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None
