"""Quantitative HyperLTL: state predicates, temporal bodies, and the
single-alternation counting template ``forall t0. # t1 : diff. body <| N(Z)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence, Union

from .sexpr import Sexpr, SexprError, parse_one
from .system import TransitionSystem
from .terms import (
    And,
    Cmp,
    Distinct,
    IntLit,
    Not,
    PLAIN,
    Signature,
    Sub,
    Tag,
    Term,
    TRUE,
    Var,
    free_vars,
    indexed,
    retag_free,
    term_from_sexpr,
)


class QhlError(ValueError):
    pass


class MissingAssignment(QhlError):
    pass


@dataclass(frozen=True)
class StatePredicate:
    """A k-ary predicate over states: body uses variable copies 1..k."""

    arity: int
    body: Term

    def __post_init__(self) -> None:
        for v in free_vars(self.body):
            if v.primed or v.copy is None or not (1 <= v.copy <= self.arity):
                raise QhlError(f"predicate body mentions {v.mangled} outside copies 1..{self.arity}")


@dataclass(frozen=True)
class HyperLtlBody:
    pass


@dataclass(frozen=True)
class PredApp(HyperLtlBody):
    pred: StatePredicate
    trace_vars: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.trace_vars) != self.pred.arity:
            raise QhlError("predicate application arity mismatch")


@dataclass(frozen=True)
class HNot(HyperLtlBody):
    operand: HyperLtlBody


@dataclass(frozen=True)
class HAnd(HyperLtlBody):
    left: HyperLtlBody
    right: HyperLtlBody


@dataclass(frozen=True)
class HOr(HyperLtlBody):
    left: HyperLtlBody
    right: HyperLtlBody


@dataclass(frozen=True)
class HImplies(HyperLtlBody):
    left: HyperLtlBody
    right: HyperLtlBody


@dataclass(frozen=True)
class HNext(HyperLtlBody):
    operand: HyperLtlBody


@dataclass(frozen=True)
class HUntil(HyperLtlBody):
    left: HyperLtlBody
    right: HyperLtlBody


@dataclass(frozen=True)
class HFinally(HyperLtlBody):
    operand: HyperLtlBody


@dataclass(frozen=True)
class HGlobally(HyperLtlBody):
    operand: HyperLtlBody


@dataclass(frozen=True)
class QhpProperty:
    forall_var: str
    count_var: str
    diff: HyperLtlBody
    body: HyperLtlBody
    cmp: str  # leq | eq | geq
    bound: Term
    assuming: Term = TRUE


def predicate_to_formula(pred: StatePredicate, assignment: Sequence[Tag]) -> Term:
    """Instantiate copies 1..k of ``pred`` at the given tags."""
    if len(assignment) != pred.arity:
        raise MissingAssignment(
            f"predicate of arity {pred.arity} given {len(assignment)} tags"
        )
    mapping = {indexed(i + 1): tag for i, tag in enumerate(assignment)}
    return retag_free(pred.body, mapping)


def app_to_formula(app: PredApp, assignment: Mapping[str, Tag]) -> Term:
    tags = []
    for tv in app.trace_vars:
        if tv not in assignment:
            raise MissingAssignment(f"trace variable {tv} unassigned")
        tags.append(assignment[tv])
    return predicate_to_formula(app.pred, tags)


@dataclass(frozen=True)
class WellDefinedResult:
    ok: bool
    reason: str = ""


def _difference_pattern(pred: StatePredicate) -> Optional[Term]:
    """If pred(s1, s2) has shape f(s1) != f(s2), return f over copy 1."""
    body = pred.body
    if isinstance(body, Not) and isinstance(body.operand, Cmp) and body.operand.op == "=":
        left, right = body.operand.left, body.operand.right
    elif isinstance(body, Distinct) and len(body.args) == 2:
        left, right = body.args
    else:
        return None
    if any(v.copy != 1 or v.primed for v in free_vars(left)):
        return None
    if retag_free(left, {indexed(1): indexed(2)}) == right:
        return left
    return None


def difference_term(prop: QhpProperty) -> Term:
    """The observation term f with diff = F(f(s1) != f(s2)), over copy 1."""
    assert isinstance(prop.diff, HFinally) and isinstance(prop.diff.operand, PredApp)
    f = _difference_pattern(prop.diff.operand.pred)
    if f is None:
        raise QhlError("difference formula is not of the shape f(s1) != f(s2)")
    return f


def check_well_defined(prop: QhpProperty, system: TransitionSystem) -> WellDefinedResult:
    """Syntactic well-definedness: diff is a difference pattern, body is a
    top-level G whose conjunction forces equality of every parameter."""
    diff = prop.diff
    if not (isinstance(diff, HFinally) and isinstance(diff.operand, PredApp)):
        return WellDefinedResult(False, "diff is not of the form F(predicate)")
    dapp = diff.operand
    if dapp.pred.arity != 2 or len(set(dapp.trace_vars)) != 2:
        return WellDefinedResult(False, "diff predicate must relate two distinct traces")
    if _difference_pattern(dapp.pred) is None:
        return WellDefinedResult(False, "diff predicate is not a difference pattern f(s1) != f(s2)")
    body = prop.body
    if not (isinstance(body, HGlobally) and isinstance(body.operand, PredApp)):
        return WellDefinedResult(False, "body is not of the form G(predicate)")
    bapp = body.operand
    if bapp.trace_vars != (prop.forall_var, prop.count_var):
        return WellDefinedResult(False, "body predicate must be applied to (forall var, count var)")
    conjuncts = (
        list(bapp.pred.body.args) if isinstance(bapp.pred.body, And) else [bapp.pred.body]
    )
    for z in system.params:
        z1 = Var(z, system.sort_of(z), 1, False)
        z2 = Var(z, system.sort_of(z), 2, False)
        found = any(
            isinstance(c, Cmp)
            and c.op == "="
            and ((c.left, c.right) == (z1, z2) or (c.left, c.right) == (z2, z1))
            for c in conjuncts
        )
        if not found:
            return WellDefinedResult(False, f"body does not force equality of parameter {z}")
    for v in free_vars(prop.bound):
        if v.tag != PLAIN or v.name not in system.params:
            return WellDefinedResult(False, f"bound mentions non-parameter {v.mangled}")
    return WellDefinedResult(True)


def parse_property(
    text: str,
    system: TransitionSystem,
    signature: Signature = Signature(),
) -> QhpProperty:
    """Read a ``(qhp (forall t0) (count t1 :diff ... :body ... :cmp ... :bound ...))`` file."""
    form = parse_one(text)
    if not isinstance(form, list) or not form or form[0] != "qhp":
        raise SexprError("expected (qhp ...)")
    forall_var = None
    count_section = None
    for item in form[1:]:
        if isinstance(item, list) and item and item[0] == "forall":
            forall_var = item[1]
        elif isinstance(item, list) and item and item[0] == "count":
            count_section = item
    if forall_var is None or count_section is None:
        raise SexprError("qhp needs (forall t) and (count t ...) sections")
    count_var = count_section[1]
    kw: dict[str, Sexpr] = {}
    rest = count_section[2:]
    i = 0
    while i < len(rest):
        key = rest[i]
        if not (isinstance(key, str) and key.startswith(":")):
            raise SexprError(f"expected keyword, got {key!r}")
        kw[key[1:]] = rest[i + 1]
        i += 2
    for needed in ("diff", "body", "cmp", "bound"):
        if needed not in kw:
            raise SexprError(f"count section missing :{needed}")

    env2 = {}
    for vname, sort in system.state_vars:
        env2[f"{vname}$1"] = sort
        env2[f"{vname}$2"] = sort

    def temporal(expr: Sexpr, trace_vars: tuple[str, str]) -> HyperLtlBody:
        if not (isinstance(expr, list) and len(expr) == 2 and expr[0] in ("finally", "globally")):
            raise SexprError("diff/body must be (finally <pred>) or (globally <pred>)")
        pred = StatePredicate(2, term_from_sexpr(expr[1], env2, signature))
        app = PredApp(pred, trace_vars)
        return HFinally(app) if expr[0] == "finally" else HGlobally(app)

    diff = temporal(kw["diff"], (f"{count_var}.a", f"{count_var}.b"))
    body = temporal(kw["body"], (forall_var, count_var))

    env_z = {z: system.sort_of(z) for z in system.params}
    bound = term_from_sexpr(kw["bound"], env_z, signature)
    assuming = (
        term_from_sexpr(kw["assuming"], env_z, signature) if "assuming" in kw else TRUE
    )
    cmp = kw["cmp"]
    if cmp in ("lt", "gt"):
        if not isinstance(bound, IntLit):
            raise QhlError("strict comparators require a literal bound")
        bound = IntLit(bound.value - 1 if cmp == "lt" else bound.value + 1)
        cmp = "leq" if cmp == "lt" else "geq"
    if cmp not in ("leq", "eq", "geq"):
        raise SexprError(f"bad comparator {cmp!r}")
    return QhpProperty(forall_var, count_var, diff, body, cmp, bound, assuming)
