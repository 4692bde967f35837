from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from typing import Any, Mapping

from fedspace.errors import InvalidPolicy, InvalidRuleSet
from fedspace.timeutil import from_iso, to_iso
from fedspace.urn import is_dataset_urn


class PolicyKind(str, Enum):
    SET = "Set"
    OFFER = "Offer"
    AGREEMENT = "Agreement"


class PolicyStatus(str, Enum):
    ACTIVE = "ACTIVE"
    INVALIDATED = "INVALIDATED"


class Action(str, Enum):
    USE = "use"
    READ = "read"
    DISTRIBUTE = "distribute"


class LeftOperand(str, Enum):
    DATE_TIME = "dateTime"
    COUNT = "count"
    PURPOSE = "purpose"
    SPATIAL = "spatial"


class Operator(str, Enum):
    EQ = "eq"
    NEQ = "neq"
    LT = "lt"
    LTEQ = "lteq"
    GT = "gt"
    GTEQ = "gteq"


class Decision(str, Enum):
    PERMIT = "PERMIT"
    DENY = "DENY"
    NOT_APPLICABLE = "NOT_APPLICABLE"


ORDERED_OPERANDS = frozenset({LeftOperand.DATE_TIME, LeftOperand.COUNT})
ORDERING_OPERATORS = frozenset({Operator.LT, Operator.LTEQ, Operator.GT, Operator.GTEQ})


def _enum(cls, value, what: str):
    try:
        return cls(value)
    except ValueError:
        raise InvalidPolicy(f"unknown {what} {value!r}") from None


@dataclass(frozen=True)
class Constraint:
    left_operand: LeftOperand
    operator: Operator
    right_operand: str

    def __post_init__(self):
        object.__setattr__(self, "left_operand", _enum(LeftOperand, self.left_operand, "leftOperand"))
        object.__setattr__(self, "operator", _enum(Operator, self.operator, "operator"))
        if not isinstance(self.right_operand, str):
            raise InvalidPolicy("rightOperand must be a string literal")
        if self.operator in ORDERING_OPERATORS and self.left_operand not in ORDERED_OPERANDS:
            raise InvalidPolicy(f"operator {self.operator.value} is not defined for {self.left_operand.value}")
        try:
            if self.left_operand is LeftOperand.DATE_TIME:
                from_iso(self.right_operand)
            elif self.left_operand is LeftOperand.COUNT:
                int(self.right_operand)
        except ValueError:
            raise InvalidPolicy(
                f"rightOperand {self.right_operand!r} is not a valid {self.left_operand.value}"
            ) from None

    def to_dict(self) -> dict[str, str]:
        return {
            "leftOperand": self.left_operand.value,
            "operator": self.operator.value,
            "rightOperand": self.right_operand,
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> Constraint:
        try:
            return cls(doc["leftOperand"], doc["operator"], doc["rightOperand"])
        except (KeyError, TypeError) as exc:
            raise InvalidPolicy(f"malformed constraint: {exc}") from None


@dataclass(frozen=True)
class Rule:
    action: Action
    constraints: tuple[Constraint, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "action", _enum(Action, self.action, "action"))
        object.__setattr__(self, "constraints", tuple(self.constraints))

    def to_dict(self) -> dict[str, Any]:
        return {"action": self.action.value, "constraint": [c.to_dict() for c in self.constraints]}

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> Rule:
        if not isinstance(doc, Mapping) or "action" not in doc:
            raise InvalidPolicy("rule needs an 'action'")
        raw = doc.get("constraint", [])
        if not isinstance(raw, list):
            raise InvalidPolicy("'constraint' must be a list")
        return cls(doc["action"], tuple(Constraint.from_dict(c) for c in raw))


def _rules(doc: Mapping[str, Any], key: str) -> tuple[Rule, ...]:
    raw = doc.get(key, [])
    if not isinstance(raw, list):
        raise InvalidPolicy(f"{key!r} must be a list")
    return tuple(Rule.from_dict(r) for r in raw)


@dataclass(frozen=True)
class OdrlPolicy:
    uid: str
    kind: PolicyKind
    target: str
    assigner: str
    assignee: str | None = None
    permissions: tuple[Rule, ...] = ()
    prohibitions: tuple[Rule, ...] = ()
    obligations: tuple[Rule, ...] = ()
    status: PolicyStatus = PolicyStatus.ACTIVE
    created_at: datetime | None = None
    offer_uid: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", _enum(PolicyKind, self.kind, "policy type"))
        object.__setattr__(self, "status", PolicyStatus(self.status))
        for name in ("permissions", "prohibitions", "obligations"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if not self.uid:
            raise InvalidPolicy("policy uid is empty")
        if not is_dataset_urn(self.target):
            raise InvalidPolicy(f"target is not a dataset urn: {self.target!r}")
        if self.kind is PolicyKind.OFFER and not self.assigner:
            raise InvalidPolicy("an Offer needs an assigner")
        if self.kind is PolicyKind.AGREEMENT and not self.assignee:
            raise InvalidPolicy("an Agreement needs an assignee")
        if not self.permissions and not self.prohibitions:
            raise InvalidRuleSet("policy has neither permissions nor prohibitions")

    @property
    def rules(self) -> tuple[tuple[Rule, ...], tuple[Rule, ...], tuple[Rule, ...]]:
        """Structural identity of the policy body, used for agreement checks."""
        return (self.permissions, self.prohibitions, self.obligations)

    def to_document(self, *, meta: bool = True) -> dict[str, Any]:
        doc: dict[str, Any] = {
            "uid": self.uid,
            "@type": self.kind.value,
            "target": self.target,
            "assigner": self.assigner,
            "permission": [r.to_dict() for r in self.permissions],
            "prohibition": [r.to_dict() for r in self.prohibitions],
            "obligation": [r.to_dict() for r in self.obligations],
        }
        if self.assignee is not None:
            doc["assignee"] = self.assignee
        if meta:
            doc["status"] = self.status.value
            if self.created_at is not None:
                doc["createdAt"] = to_iso(self.created_at)
            if self.offer_uid is not None:
                doc["offerId"] = self.offer_uid
        return doc

    @classmethod
    def from_document(cls, doc: Any) -> OdrlPolicy:
        if not isinstance(doc, Mapping):
            raise InvalidPolicy("policy document must be an object")
        for key in ("uid", "@type", "target"):
            if not isinstance(doc.get(key), str):
                raise InvalidPolicy(f"policy document needs a string {key!r}")
        created = doc.get("createdAt")
        return cls(
            uid=doc["uid"],
            kind=doc["@type"],
            target=doc["target"],
            assigner=doc.get("assigner") or "",
            assignee=doc.get("assignee"),
            permissions=_rules(doc, "permission"),
            prohibitions=_rules(doc, "prohibition"),
            obligations=_rules(doc, "obligation"),
            status=_enum(PolicyStatus, doc.get("status", "ACTIVE"), "status"),
            created_at=from_iso(created) if created else None,
            offer_uid=doc.get("offerId"),
        )


@dataclass(frozen=True)
class RequestContext:
    action: Action
    participant: str
    attributes: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "action", _enum(Action, self.action, "action"))
        object.__setattr__(self, "attributes", dict(self.attributes))
