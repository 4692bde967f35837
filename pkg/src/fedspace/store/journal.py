"""On-disk layout of an entity store.

::

    <data_dir>/
        journal.jsonl          append-only, one JSON object per change event
        snapshot.json          full state as of ``snapshot["seqNo"]``

Each journal line carries the change event plus the payload needed to replay
it (``op`` is ``upsert``, ``delete`` or ``lineage``). Loading reads the
snapshot, then replays journal lines whose ``seqNo`` is above the snapshot's.
A torn final line (process killed mid-write) is discarded.
"""

from __future__ import annotations

import json
import logging
import os
from pathlib import Path
from typing import Any, Iterator

log = logging.getLogger(__name__)

JOURNAL_NAME = "journal.jsonl"
SNAPSHOT_NAME = "snapshot.json"


def write_json_atomic(path: Path, doc: Any) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, ensure_ascii=False)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


class Journal:
    def __init__(self, data_dir: Path):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.journal_path = self.data_dir / JOURNAL_NAME
        self.snapshot_path = self.data_dir / SNAPSHOT_NAME
        self._fh = None

    def repair_tail(self) -> None:
        """Cut a torn final line so later appends start on a line boundary."""
        if not self.journal_path.exists():
            return
        data = self.journal_path.read_bytes()
        if data and not data.endswith(b"\n"):
            keep = data.rfind(b"\n") + 1
            with open(self.journal_path, "r+b") as fh:
                fh.truncate(keep)
            log.warning("event=journal.repaired dropped_bytes=%d", len(data) - keep)

    def append(self, entry: dict[str, Any]) -> None:
        if self._fh is None:
            self._fh = open(self.journal_path, "a", encoding="utf-8")
        self._fh.write(json.dumps(entry, sort_keys=True, ensure_ascii=False) + "\n")
        self._fh.flush()

    def write_snapshot(self, state: dict[str, Any]) -> None:
        write_json_atomic(self.snapshot_path, state)

    def load_snapshot(self) -> dict[str, Any] | None:
        if not self.snapshot_path.exists():
            return None
        with open(self.snapshot_path, encoding="utf-8") as fh:
            return json.load(fh)

    def entries(self, after_seq: int = 0) -> Iterator[dict[str, Any]]:
        if not self.journal_path.exists():
            return
        with open(self.journal_path, encoding="utf-8") as fh:
            lines = fh.readlines()
        for lineno, line in enumerate(lines, 1):
            if not line.endswith("\n"):
                log.warning("event=journal.torn_line line=%d", lineno)
                break
            entry = json.loads(line)
            if entry["seqNo"] > after_seq:
                yield entry

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None
