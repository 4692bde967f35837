"""Parser for ingestion files.

An ingestion file is a UTF-8 JSON list of records::

    [
      {"urn": "urn:li:domain:mobility", "kind": "DOMAIN", "name": "Mobility",
       "description": "...", "customProperties": {}},
      {"urn": "urn:li:dataset:(urn:li:dataPlatform:csv,traffic,PROD)",
       "kind": "DATASET", "name": "Traffic counts", "description": "...",
       "customProperties": {"license": "CC-BY"},
       "aspect": {"domainUrn": "urn:li:domain:mobility",
                  "distributionType": "HTTP_PULL",
                  "accessEndpoint": "https://data.example.org/traffic.csv",
                  "authScheme": "BEARER", "formatHint": "text/csv"}}
    ]

Errors carry the 1-based line on which the offending record starts.
"""

from __future__ import annotations

import json
from typing import Any

from fedspace.errors import FedspaceError, IngestError
from fedspace.store.model import AuthScheme, DatasetAspect, DistributionType, EntityKind, EntityRecord

_ASPECT_KEYS = ("domainUrn", "distributionType", "accessEndpoint", "authScheme", "formatHint")


def _line_of(text: str, offset: int) -> int:
    return text.count("\n", 0, offset) + 1


def _skip_ws(text: str, idx: int) -> int:
    while idx < len(text) and text[idx] in " \t\r\n":
        idx += 1
    return idx


def _split_records(text: str) -> list[tuple[int, Any]]:
    """Decode the top-level list, remembering where each element starts."""
    decoder = json.JSONDecoder()
    idx = _skip_ws(text, 0)
    if idx >= len(text) or text[idx] != "[":
        raise IngestError("expected a top-level JSON list", _line_of(text, idx))
    idx = _skip_ws(text, idx + 1)
    elements: list[tuple[int, Any]] = []
    if idx < len(text) and text[idx] == "]":
        idx += 1
    else:
        while True:
            start = idx
            try:
                value, idx = decoder.raw_decode(text, idx)
            except json.JSONDecodeError as exc:
                raise IngestError(exc.msg, exc.lineno) from exc
            elements.append((_line_of(text, start), value))
            idx = _skip_ws(text, idx)
            if idx < len(text) and text[idx] == ",":
                idx = _skip_ws(text, idx + 1)
                continue
            if idx < len(text) and text[idx] == "]":
                idx += 1
                break
            raise IngestError("expected ',' or ']' after record", _line_of(text, idx))
    if _skip_ws(text, idx) != len(text):
        raise IngestError("trailing data after the record list", _line_of(text, idx))
    return elements


def _text(doc: dict, key: str, line: int, default: str | None = None) -> str:
    value = doc.get(key, default)
    if value is None:
        raise IngestError(f"missing required key {key!r}", line)
    if not isinstance(value, str):
        raise IngestError(f"key {key!r} must be a string", line)
    return value


def parse_ingestion(
    text: str | bytes, *, source_catalog_id: str = ""
) -> list[tuple[EntityRecord, DatasetAspect | None]]:
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise IngestError(f"file is not UTF-8: {exc}") from exc
    items: list[tuple[EntityRecord, DatasetAspect | None]] = []
    seen: set[str] = set()
    for line, doc in _split_records(text):
        if not isinstance(doc, dict):
            raise IngestError("record must be a JSON object", line)
        urn = _text(doc, "urn", line)
        kind = _text(doc, "kind", line)
        if kind not in EntityKind.__members__:
            raise IngestError(f"kind must be DOMAIN or DATASET, got {kind!r}", line)
        props = doc.get("customProperties", {})
        if not isinstance(props, dict) or not all(isinstance(v, str) for v in props.values()):
            raise IngestError("customProperties must be an object of strings", line)
        if urn in seen:
            raise IngestError(f"duplicate urn {urn}", line)
        seen.add(urn)
        try:
            record = EntityRecord(
                urn=urn,
                kind=EntityKind(kind),
                name=_text(doc, "name", line),
                description=_text(doc, "description", line, ""),
                custom_properties=props,
                source_catalog_id=source_catalog_id,
            )
            aspect = None
            if record.kind is EntityKind.DATASET:
                raw = doc.get("aspect")
                if not isinstance(raw, dict):
                    raise IngestError("dataset record needs an 'aspect' object", line)
                for key in _ASPECT_KEYS:
                    _text(raw, key, line)
                if raw["distributionType"] not in DistributionType.__members__:
                    raise IngestError(f"unknown distributionType {raw['distributionType']!r}", line)
                if raw["authScheme"] not in AuthScheme.__members__:
                    raise IngestError(f"unknown authScheme {raw['authScheme']!r}", line)
                aspect = DatasetAspect.from_dict(urn, raw)
            elif "aspect" in doc:
                raise IngestError("only DATASET records may carry an aspect", line)
        except IngestError:
            raise
        except FedspaceError as exc:
            raise IngestError(str(exc), line) from exc
        items.append((record, aspect))
    return items
