from __future__ import annotations

import json
import threading
from pathlib import Path
from typing import Any, Callable, Generic, TypeVar
from urllib.parse import quote

from fedspace.store.journal import write_json_atomic

P = TypeVar("P")


class DocumentStore:
    """One JSON file per keyed document; a no-op when ``directory`` is None."""

    def __init__(self, directory: Path | str | None):
        self.directory = Path(directory) if directory is not None else None
        if self.directory is not None:
            self.directory.mkdir(parents=True, exist_ok=True)

    def save(self, key: str, doc: dict[str, Any]) -> None:
        if self.directory is not None:
            write_json_atomic(self.directory / f"{quote(key, safe='')}.json", doc)

    def load_all(self) -> list[dict[str, Any]]:
        if self.directory is None:
            return []
        docs = []
        for path in sorted(self.directory.glob("*.json")):
            with open(path, encoding="utf-8") as fh:
                docs.append(json.load(fh))
        return docs


class ProcessTable(Generic[P]):
    """In-memory processes with per-process locks and write-through persistence."""

    def __init__(
        self,
        directory: Path | str | None,
        from_document: Callable[[dict[str, Any]], P],
        key: Callable[[P], str],
        missing: Callable[[str], Exception],
    ):
        self._docs = DocumentStore(directory)
        self._key = key
        self._missing = missing
        self._processes: dict[str, P] = {}
        self._locks: dict[str, threading.RLock] = {}
        self._guard = threading.Lock()
        for doc in self._docs.load_all():
            process = from_document(doc)
            self._processes[key(process)] = process

    def lock(self, process_id: str) -> threading.RLock:
        with self._guard:
            return self._locks.setdefault(process_id, threading.RLock())

    def add(self, process: P) -> None:
        with self._guard:
            self._processes[self._key(process)] = process

    def get(self, process_id: str | None) -> P:
        process = self._processes.get(process_id) if process_id else None
        if process is None:
            raise self._missing(process_id or "(missing process id)")
        return process

    def find(self, process_id: str | None) -> P | None:
        return self._processes.get(process_id) if process_id else None

    def save(self, process: P, doc: dict[str, Any]) -> None:
        self._docs.save(self._key(process), doc)

    def all(self) -> list[P]:
        with self._guard:
            return list(self._processes.values())

    def __len__(self) -> int:
        return len(self._processes)
