"""Policy decision: prohibitions take precedence, then permissions, deny otherwise.

A constraint holds when the request context carries a value for its left
operand and that value compares true against the right operand. A missing
or unparsable context value makes the constraint fail rather than raise.
"""

from __future__ import annotations

import operator as op

from fedspace.errors import PolicyInvalidated
from fedspace.odrl.model import (
    Constraint,
    Decision,
    LeftOperand,
    OdrlPolicy,
    Operator,
    PolicyStatus,
    RequestContext,
    Rule,
)
from fedspace.timeutil import from_iso

_COMPARE = {
    Operator.EQ: op.eq,
    Operator.NEQ: op.ne,
    Operator.LT: op.lt,
    Operator.LTEQ: op.le,
    Operator.GT: op.gt,
    Operator.GTEQ: op.ge,
}


def _coerce(operand: LeftOperand, literal: str):
    if operand is LeftOperand.DATE_TIME:
        return from_iso(literal)
    if operand is LeftOperand.COUNT:
        return int(literal)
    return literal


def constraint_holds(constraint: Constraint, attributes) -> bool:
    actual = attributes.get(constraint.left_operand.value)
    if actual is None:
        return False
    try:
        left = _coerce(constraint.left_operand, str(actual))
    except ValueError:
        return False
    right = _coerce(constraint.left_operand, constraint.right_operand)
    return _COMPARE[constraint.operator](left, right)


def _fires(rule: Rule, ctx: RequestContext) -> bool:
    return all(constraint_holds(c, ctx.attributes) for c in rule.constraints)


def evaluate(policy: OdrlPolicy, ctx: RequestContext) -> Decision:
    if policy.status is not PolicyStatus.ACTIVE:
        raise PolicyInvalidated(policy.uid)
    permissions = [r for r in policy.permissions if r.action is ctx.action]
    prohibitions = [r for r in policy.prohibitions if r.action is ctx.action]
    if not permissions and not prohibitions:
        return Decision.NOT_APPLICABLE
    if any(_fires(r, ctx) for r in prohibitions):
        return Decision.DENY
    if any(_fires(r, ctx) for r in permissions):
        return Decision.PERMIT
    return Decision.DENY
