"""Independent reference implementations the tests compare against.

Nothing here imports the package's evaluation, merge or mapping code; each
oracle works on plain dicts so a shared bug cannot hide on both sides.
"""

from __future__ import annotations

import json
from datetime import datetime, timezone
from pathlib import Path

FIXTURES = Path(__file__).parent / "fixtures"
ILLEGAL = "x"


# -- state tables ---------------------------------------------------------------


def load_negotiation_table() -> dict[tuple[str | None, str, str | None, str], str]:
    """Legal cells as (state|None, @type, event|None, sender) -> next state."""
    doc = json.loads((FIXTURES / "negotiation_table.json").read_text())
    table = {}
    for row, cells in doc["rows"].items():
        state, sender = row.split("/")
        for column, target in zip(doc["columns"], cells):
            kind, _, event = column.partition(":")
            if target != ILLEGAL:
                table[(None if state == "-" else state, kind, event or None, sender)] = target
    return table


def load_transfer_table() -> dict[tuple[str, str], str]:
    doc = json.loads((FIXTURES / "transfer_table.json").read_text())
    return {
        (state, command): target
        for state, cells in doc["rows"].items()
        for command, target in zip(doc["columns"], cells)
        if target != ILLEGAL
    }


def is_negotiation_path(states: list[str], table=None) -> bool:
    """True when every step of ``states`` is some legal cell of the oracle table."""
    table = table or load_negotiation_table()
    steps = {}
    for (src, _kind, _event, _sender), dst in table.items():
        steps.setdefault(src, set()).add(dst)
    prev = None
    for state in states:
        if state not in steps.get(prev, ()):
            return False
        prev = state
    return True


# -- ODRL -------------------------------------------------------------------------


def _parse_time(text):
    if not isinstance(text, str):
        return None
    if text[-1:] in ("Z", "z"):
        text = text[:-1] + "+00:00"
    try:
        value = datetime.fromisoformat(text)
    except ValueError:
        return None
    if value.tzinfo is None:
        value = value.replace(tzinfo=timezone.utc)
    return value


def _parse_int(text):
    try:
        return int(text)
    except (TypeError, ValueError):
        return None


def reference_constraint(constraint: dict, attributes: dict) -> bool:
    name = constraint["leftOperand"]
    if name not in attributes:
        return False
    if name == "dateTime":
        left, right = _parse_time(attributes[name]), _parse_time(constraint["rightOperand"])
    elif name == "count":
        left, right = _parse_int(attributes[name]), _parse_int(constraint["rightOperand"])
    else:
        left, right = attributes[name], constraint["rightOperand"]
    if left is None or right is None:
        return False
    op = constraint["operator"]
    if op == "eq":
        return left == right
    if op == "neq":
        return left != right
    if op == "lt":
        return left < right
    if op == "lteq":
        return left <= right
    if op == "gt":
        return left > right
    if op == "gteq":
        return left >= right
    raise ValueError(op)


def reference_evaluate(policy: dict, action: str, attributes: dict) -> str:
    """Brute force: visit every rule and every constraint, then decide."""
    matched_any = False
    prohibited = False
    permitted = False
    for key in ("prohibition", "permission"):
        for rule in policy.get(key, []):
            if rule["action"] != action:
                continue
            matched_any = True
            satisfied = True
            for constraint in rule.get("constraint", []):
                if not reference_constraint(constraint, attributes):
                    satisfied = False
            if satisfied and key == "prohibition":
                prohibited = True
            if satisfied and key == "permission":
                permitted = True
    if not matched_any:
        return "NOT_APPLICABLE"
    if prohibited:
        return "DENY"
    if permitted:
        return "PERMIT"
    return "DENY"


# -- federation merge -----------------------------------------------------------


def merge_oracle(pulls: list[list[dict]]) -> dict[str, dict]:
    """Expected federated state after pulling each source in order.

    Records are plain dicts with ``urn``, ``updatedAt`` (ISO text) and
    ``sourceCatalogId``. For every urn the winner is the record with the
    greatest (updatedAt, sourceCatalogId); same-source records always replace.
    """
    state: dict[str, dict] = {}
    for records in pulls:
        for record in records:
            current = state.get(record["urn"])
            if current is None or current["sourceCatalogId"] == record["sourceCatalogId"]:
                state[record["urn"]] = record
                continue
            candidates = sorted(
                [current, record], key=lambda r: (_parse_time(r["updatedAt"]), r["sourceCatalogId"])
            )
            state[record["urn"]] = candidates[-1]
    return state


# -- DCAT mapping -----------------------------------------------------------------


def straight_line_dcat(domain: dict, datasets: list[dict]) -> dict:
    """Expected DCAT document for a domain from raw ingestion records."""
    rows = sorted(datasets, key=lambda d: d["urn"])
    return {
        "@context": "https://www.w3.org/ns/dcat#",
        "@type": "dcat:Catalog",
        "dct:identifier": domain["urn"],
        "dct:title": domain["name"],
        "dct:description": domain.get("description", ""),
        "dcat:dataset": [
            {
                "@type": "dcat:Dataset",
                "dct:identifier": d["urn"],
                "dct:title": d["name"],
                "dct:description": d.get("description", ""),
                "dcat:distribution": [
                    {
                        "@type": "dcat:Distribution",
                        "dct:format": d["aspect"]["formatHint"],
                        "dcat:accessService": d["urn"] + "#access-service",
                    }
                ],
                **({"dcat:version": d["aspect"]["versionTag"]} if "versionTag" in d["aspect"] else {}),
            }
            for d in rows
        ],
        "dcat:service": [
            {
                "@type": "dcat:DataService",
                "dct:identifier": d["urn"] + "#access-service",
                "dcat:endpointURL": d["aspect"]["accessEndpoint"],
                "dcat:endpointDescription": "authScheme={}; distributionType={}".format(
                    d["aspect"]["authScheme"], d["aspect"]["distributionType"]
                ),
            }
            for d in rows
        ],
    }
