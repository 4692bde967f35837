from fedspace.odrl.evaluate import constraint_holds, evaluate
from fedspace.odrl.model import (
    Action,
    Constraint,
    Decision,
    LeftOperand,
    OdrlPolicy,
    Operator,
    PolicyKind,
    PolicyStatus,
    RequestContext,
    Rule,
)
from fedspace.odrl.store import PolicyStore, new_uid

__all__ = [
    "Action",
    "Constraint",
    "Decision",
    "LeftOperand",
    "OdrlPolicy",
    "Operator",
    "PolicyKind",
    "PolicyStatus",
    "PolicyStore",
    "RequestContext",
    "Rule",
    "constraint_holds",
    "evaluate",
    "new_uid",
]
