"""Explicit-state brute-force engine for finite instantiations.

Enumerates bounded traces, evaluates temporal bodies with three-valued
bounded semantics, counts difference-equivalence classes, and model-counts
finite-domain formulas exactly.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Optional, Sequence, Union

from .qhl import (
    HAnd,
    HFinally,
    HGlobally,
    HImplies,
    HNext,
    HNot,
    HOr,
    HUntil,
    HyperLtlBody,
    PredApp,
    QhpProperty,
)
from .system import TransitionSystem
from .terms import (
    Add,
    And,
    App,
    BoolLit,
    Cmp,
    ConstArray,
    Distinct,
    Div,
    Exists,
    Forall,
    Implies,
    IntLit,
    Ite,
    Mod,
    Mul,
    Neg,
    Not,
    Or,
    Quant,
    Select,
    Store,
    Sub,
    Term,
    Var,
    free_vars,
    BoolSort,
    IntSort,
)


class OracleError(ValueError):
    pass


class CapExceeded(OracleError):
    pass


DEFAULT_CAP = 10**6


# ---------------------------------------------------------------------------
# Values and domains


@dataclass(frozen=True)
class FArray:
    """Integer array with explicit window [lo, lo+len) and a default outside."""

    lo: int
    vals: tuple[int, ...]
    default: int = 0

    def get(self, i: int) -> int:
        if self.lo <= i < self.lo + len(self.vals):
            return self.vals[i - self.lo]
        return self.default

    def put(self, i: int, v: int) -> "FArray":
        if self.lo <= i < self.lo + len(self.vals):
            vals = list(self.vals)
            vals[i - self.lo] = v
            return FArray(self.lo, tuple(vals), self.default)
        if v == self.default:
            return self
        # grow the explicit window to cover i, padding with the default
        lo = min(self.lo, i)
        hi = max(self.lo + len(self.vals), i + 1)
        vals = [self.get(k) for k in range(lo, hi)]
        vals[i - lo] = v
        return FArray(lo, tuple(vals), self.default)


Value = Union[int, bool, FArray]


def values_equal(a: Value, b: Value) -> bool:
    if isinstance(a, FArray) and isinstance(b, FArray):
        if a.default != b.default:
            lo = min(a.lo, b.lo)
            hi = max(a.lo + len(a.vals), b.lo + len(b.vals))
            # unequal defaults differ somewhere outside both windows
            return False
        lo = min(a.lo, b.lo)
        hi = max(a.lo + len(a.vals), b.lo + len(b.vals))
        return all(a.get(i) == b.get(i) for i in range(lo, hi))
    if isinstance(a, bool) != isinstance(b, bool):
        return False
    return a == b


@dataclass(frozen=True)
class ScalarDomain:
    values: tuple[Value, ...]

    def __iter__(self) -> Iterator[Value]:
        return iter(self.values)

    def size(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class ArrayDomain:
    lo: int
    hi: int  # inclusive
    values: tuple[int, ...]
    default: int = 0

    def __iter__(self) -> Iterator[FArray]:
        width = self.hi - self.lo + 1
        for combo in itertools.product(self.values, repeat=width):
            yield FArray(self.lo, combo, self.default)

    def size(self) -> int:
        return len(self.values) ** (self.hi - self.lo + 1)


Domain = Union[ScalarDomain, ArrayDomain]

State = dict  # variable name -> Value


def state_key(state: State) -> tuple:
    out = []
    for name in sorted(state):
        v = state[name]
        if isinstance(v, FArray):
            out.append((name, "arr", v.lo, v.vals, v.default))
        else:
            out.append((name, type(v).__name__, v))
    return tuple(out)


@dataclass
class FiniteInstance:
    system: TransitionSystem
    domains: dict[str, Domain]
    params: dict[str, Value]
    depth: int
    stable_from: Optional[int] = None
    deterministic: bool = False
    quant_lo: int = -2
    quant_hi: int = 8
    cap: int = DEFAULT_CAP
    # pins the *initial* value of a state variable without restricting how it
    # may evolve afterwards (unlike params, which freeze it for the whole run)
    init_fix: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.depth < 1:
            raise OracleError("depth must be >= 1")
        for name, _ in self.system.state_vars:
            if name in self.params:
                continue
            if name not in self.domains:
                raise OracleError(f"no domain for state variable {name}")


# ---------------------------------------------------------------------------
# Term evaluation


def _pow2(n: int) -> int:
    if n < 0:
        raise OracleError("pow2 of negative argument")
    return 2**n


def _fact(n: int) -> int:
    if n < 0:
        raise OracleError("fact of negative argument")
    out = 1
    for k in range(2, n + 1):
        out *= k
    return out


def eval_term(
    term: Term,
    env: Mapping[str, Value],
    quant_lo: int = -2,
    quant_hi: int = 8,
    funcs: Optional[Mapping[str, object]] = None,
) -> Value:
    """Evaluate ``term`` in ``env`` (keyed by mangled variable names)."""

    def go(t: Term, scope: Mapping[str, Value]) -> Value:
        if isinstance(t, Var):
            key = t.mangled
            if key not in scope:
                raise OracleError(f"unbound variable {key} in oracle evaluation")
            return scope[key]
        if isinstance(t, IntLit):
            return t.value
        if isinstance(t, BoolLit):
            return t.value
        if isinstance(t, App):
            args = [go(a, scope) for a in t.args]
            if funcs and t.func in funcs:
                return funcs[t.func](*args)  # type: ignore[operator]
            if t.func == "pow2":
                return _pow2(args[0])
            if t.func == "fact":
                return _fact(args[0])
            raise OracleError(f"uninterpreted function {t.func} in oracle evaluation")
        if isinstance(t, Add):
            return sum(go(a, scope) for a in t.args)
        if isinstance(t, Sub):
            return go(t.left, scope) - go(t.right, scope)
        if isinstance(t, Neg):
            return -go(t.operand, scope)
        if isinstance(t, Mul):
            return go(t.left, scope) * go(t.right, scope)
        if isinstance(t, Div):
            a, b = go(t.left, scope), go(t.right, scope)
            if b <= 0:
                raise OracleError("division by non-positive divisor")
            return a // b
        if isinstance(t, Mod):
            a, b = go(t.left, scope), go(t.right, scope)
            if b <= 0:
                raise OracleError("modulus by non-positive divisor")
            return a % b
        if isinstance(t, Cmp):
            a, b = go(t.left, scope), go(t.right, scope)
            if t.op == "=":
                return values_equal(a, b)
            if t.op == "<":
                return a < b
            if t.op == "<=":
                return a <= b
            if t.op == ">":
                return a > b
            return a >= b
        if isinstance(t, Distinct):
            vals = [go(a, scope) for a in t.args]
            return all(
                not values_equal(vals[i], vals[j])
                for i in range(len(vals))
                for j in range(i + 1, len(vals))
            )
        if isinstance(t, Not):
            return not go(t.operand, scope)
        if isinstance(t, And):
            return all(go(a, scope) for a in t.args)
        if isinstance(t, Or):
            return any(go(a, scope) for a in t.args)
        if isinstance(t, Implies):
            return (not go(t.left, scope)) or go(t.right, scope)
        if isinstance(t, Ite):
            return go(t.then, scope) if go(t.cond, scope) else go(t.other, scope)
        if isinstance(t, Select):
            arr = go(t.array, scope)
            if not isinstance(arr, FArray):
                raise OracleError("select on non-array value")
            return arr.get(go(t.index, scope))
        if isinstance(t, Store):
            arr = go(t.array, scope)
            if not isinstance(arr, FArray):
                raise OracleError("store on non-array value")
            return arr.put(go(t.index, scope), go(t.value, scope))
        if isinstance(t, ConstArray):
            return FArray(0, (), go(t.value, scope))
        if isinstance(t, Quant):
            ranges = []
            for name, sort in t.bound:
                if isinstance(sort, IntSort):
                    ranges.append([(name, v) for v in range(quant_lo, quant_hi + 1)])
                elif isinstance(sort, BoolSort):
                    ranges.append([(name, False), (name, True)])
                else:
                    raise OracleError(f"cannot enumerate quantifier over {sort}")
            results = []
            for combo in itertools.product(*ranges):
                inner = dict(scope)
                inner.update(dict(combo))
                results.append(bool(go(t.body, inner)))
            return all(results) if isinstance(t, Forall) else any(results)
        raise OracleError(f"cannot evaluate {t!r}")

    return go(term, env)


# ---------------------------------------------------------------------------
# Trace enumeration


@dataclass(frozen=True)
class BoundedTrace:
    states: tuple  # tuple of State dicts (treated as immutable)

    @property
    def depth(self) -> int:
        return len(self.states)


def _var_domains(instance: FiniteInstance, initial: bool = False) -> dict[str, Domain]:
    doms: dict[str, Domain] = {}
    for name, _ in instance.system.state_vars:
        if name in instance.params:
            doms[name] = ScalarDomain((instance.params[name],))
        elif initial and name in instance.init_fix:
            doms[name] = ScalarDomain((instance.init_fix[name],))
        else:
            doms[name] = instance.domains[name]
    return doms


def _product_states(doms: Mapping[str, Domain], cap: int) -> Iterator[State]:
    names = list(doms)
    total = 1
    for d in doms.values():
        total *= d.size()
        if total > cap:
            raise CapExceeded(f"state domain product exceeds cap {cap}")
    for combo in itertools.product(*(list(doms[n]) for n in names)):
        yield dict(zip(names, combo))


def _definitional_order(tx: Term, var_names: set[str]) -> tuple[list[tuple[str, Term]], list[str]]:
    """Split Tx into primed-variable definitions plus leftover free primed vars."""
    conjuncts = list(tx.args) if isinstance(tx, And) else [tx]
    # variables whose primed copy never appears alone on one side of a
    # top-level equation are genuine choices; definitions may depend on them
    # because choices are assigned before the definitions are evaluated
    eq_defined: set[str] = set()
    for c in conjuncts:
        if isinstance(c, Cmp) and c.op == "=":
            for side in (c.left, c.right):
                if isinstance(side, Var) and side.primed and side.copy is None:
                    eq_defined.add(side.name)
    choices = var_names - eq_defined
    defs: list[tuple[str, Term]] = []
    defined: set[str] = set()
    pending = list(conjuncts)
    changed = True
    while changed:
        changed = False
        for c in list(pending):
            if not (isinstance(c, Cmp) and c.op == "="):
                continue
            for lhs, rhs in ((c.left, c.right), (c.right, c.left)):
                if (
                    isinstance(lhs, Var)
                    and lhs.primed
                    and lhs.copy is None
                    and lhs.name not in defined
                ):
                    rhs_primed = {v.name for v in free_vars(rhs) if v.primed}
                    if rhs_primed <= defined | choices:
                        defs.append((lhs.name, rhs))
                        defined.add(lhs.name)
                        pending.remove(c)
                        changed = True
                        break
            if changed:
                break
    free = sorted(var_names - defined)
    return defs, free


def successors(instance: FiniteInstance, state: State) -> list[State]:
    system = instance.system
    var_names = {n for n, _ in system.state_vars}
    defs, free = _definitional_order(system.tx, var_names)
    doms = _var_domains(instance)
    base_env = {name: state[name] for name in var_names}
    out: list[State] = []
    seen = set()
    free_iter = itertools.product(*(list(doms[n]) for n in free)) if free else [()]
    for combo in free_iter:
        env = dict(base_env)
        for name, value in zip(free, combo):
            env[f"{name}!"] = value
        ok = True
        for name, rhs in defs:
            try:
                env[f"{name}!"] = eval_term(rhs, env, instance.quant_lo, instance.quant_hi)
            except OracleError:
                ok = False
                break
        if not ok:
            continue
        try:
            holds = eval_term(system.tx, env, instance.quant_lo, instance.quant_hi)
        except OracleError:
            continue
        if not holds:
            continue
        nxt = {name: env[f"{name}!"] for name in var_names}
        # keep successors inside the declared domains
        in_domain = True
        for name in var_names:
            dom = doms[name]
            val = nxt[name]
            if isinstance(dom, ScalarDomain):
                if not any(values_equal(val, dv) for dv in dom.values):
                    in_domain = False
                    break
            else:
                if not isinstance(val, FArray):
                    in_domain = False
                    break
        if not in_domain:
            continue
        key = state_key(nxt)
        if key not in seen:
            seen.add(key)
            out.append(nxt)
    if instance.deterministic and len(out) > 1:
        raise OracleError("instance declared deterministic but a state has several successors")
    return out


def enumerate_traces(instance: FiniteInstance) -> list[BoundedTrace]:
    """All depth-d trace prefixes of the instance, in canonical order."""
    doms = _var_domains(instance, initial=True)
    initials = [
        s
        for s in _product_states(doms, instance.cap)
        if eval_term(instance.system.init, s, instance.quant_lo, instance.quant_hi)
    ]
    level: list[tuple[State, ...]] = [(s,) for s in initials]
    for _ in range(instance.depth - 1):
        nxt_level: list[tuple[State, ...]] = []
        for prefix in level:
            for succ in successors(instance, prefix[-1]):
                nxt_level.append(prefix + (succ,))
                if len(nxt_level) > instance.cap:
                    raise CapExceeded(f"trace count exceeds cap {instance.cap}")
        level = nxt_level
    traces = [BoundedTrace(t) for t in level]
    traces.sort(key=lambda tr: tuple(state_key(s) for s in tr.states))
    return traces


# ---------------------------------------------------------------------------
# Bounded three-valued evaluation

TV = Optional[bool]  # True / False / None (unknown)


def _and3(a: TV, b: TV) -> TV:
    if a is False or b is False:
        return False
    if a is True and b is True:
        return True
    return None


def _or3(a: TV, b: TV) -> TV:
    if a is True or b is True:
        return True
    if a is False and b is False:
        return False
    return None


def _not3(a: TV) -> TV:
    return None if a is None else (not a)


def _settled(trace: BoundedTrace) -> bool:
    for k in range(len(trace.states) - 1):
        if state_key(trace.states[k]) == state_key(trace.states[k + 1]):
            return True
    return False


def eval_bounded(
    body: HyperLtlBody,
    traces: Mapping[str, BoundedTrace],
    instance: FiniteInstance,
) -> TV:
    """Three-valued bounded evaluation at position 0.

    A verdict requiring knowledge of the infinite tail is only produced when
    the tail is pinned: either the instance's stabilization certificate covers
    the explored depth, or the instance is deterministic and every involved
    trace has reached a self-loop within the prefix.
    """
    depths = {t.depth for t in traces.values()}
    if len(depths) != 1:
        raise OracleError("traces of unequal depth")
    d = depths.pop()
    tail_known = False
    if instance.stable_from is not None and d - 1 >= instance.stable_from:
        tail_known = True
    elif instance.deterministic and all(_settled(t) for t in traces.values()):
        tail_known = True

    def atom(app: PredApp, p: int) -> TV:
        if p >= d:
            if not tail_known:
                return None
            p = d - 1
        env: dict[str, Value] = {}
        for j, tv in enumerate(app.trace_vars):
            if tv not in traces:
                raise OracleError(f"trace variable {tv} unbound")
            state = traces[tv].states[p]
            for name, value in state.items():
                env[f"{name}${j + 1}"] = value
        return bool(
            eval_term(app.pred.body, env, instance.quant_lo, instance.quant_hi)
        )

    def ev(node: HyperLtlBody, p: int) -> TV:
        if isinstance(node, PredApp):
            return atom(node, p)
        if isinstance(node, HNot):
            return _not3(ev(node.operand, p))
        if isinstance(node, HAnd):
            return _and3(ev(node.left, p), ev(node.right, p))
        if isinstance(node, HOr):
            return _or3(ev(node.left, p), ev(node.right, p))
        if isinstance(node, HImplies):
            return _or3(_not3(ev(node.left, p)), ev(node.right, p))
        if isinstance(node, HNext):
            if p + 1 >= d and not tail_known:
                return None
            return ev(node.operand, min(p + 1, d - 1))
        if isinstance(node, HGlobally):
            acc: TV = True
            for k in range(p, d):
                acc = _and3(acc, ev(node.operand, k))
                if acc is False:
                    return False
            if not tail_known:
                acc = _and3(acc, None)
            return acc
        if isinstance(node, HFinally):
            acc = False
            for k in range(p, d):
                acc = _or3(acc, ev(node.operand, k))
                if acc is True:
                    return True
            if not tail_known:
                acc = _or3(acc, None)
            return acc
        if isinstance(node, HUntil):
            if tail_known:
                u = ev(node.right, d - 1)
            else:
                u = _or3(ev(node.right, d - 1), _and3(ev(node.left, d - 1), None))
            for k in range(d - 2, p - 1, -1):
                u = _or3(ev(node.right, k), _and3(ev(node.left, k), u))
            return u
        raise OracleError(f"cannot evaluate body node {node!r}")

    return ev(body, 0)


# ---------------------------------------------------------------------------
# Class counting and model counting


def count_equivalence_classes(
    instance: FiniteInstance,
    prop: QhpProperty,
    pivot: BoundedTrace,
    traces: Optional[Sequence[BoundedTrace]] = None,
) -> Union[int, str]:
    """Number of difference-equivalence classes among body-related traces.

    Returns ``"unknown"`` if any body or pairwise difference verdict is
    three-valued unknown.
    """
    if traces is None:
        traces = enumerate_traces(instance)
    candidates = []
    for t in traces:
        verdict = eval_bounded(
            prop.body, {prop.forall_var: pivot, prop.count_var: t}, instance
        )
        if verdict is None:
            return "unknown"
        if verdict:
            candidates.append(t)
    if not candidates:
        return 0
    assert isinstance(prop.diff, HFinally) and isinstance(prop.diff.operand, PredApp)
    tva, tvb = prop.diff.operand.trace_vars
    n = len(candidates)
    parent = list(range(n))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            delta = eval_bounded(
                prop.diff, {tva: candidates[i], tvb: candidates[j]}, instance
            )
            if delta is None:
                return "unknown"
            if not delta:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[ri] = rj
    return len({find(i) for i in range(n)})


def brute_count(
    formula: Term,
    counted: Mapping[str, Domain],
    params: Optional[Mapping[str, Value]] = None,
    quant_lo: int = -2,
    quant_hi: int = 8,
    cap: int = DEFAULT_CAP,
) -> int:
    """Exact model count of ``formula`` over the counted variables' domains."""
    names = list(counted)
    total = 1
    for dom in counted.values():
        total *= dom.size()
        if total > cap:
            raise CapExceeded(f"domain product exceeds cap {cap}")
    base_env: dict[str, Value] = dict(params or {})
    count = 0
    for combo in itertools.product(*(list(counted[n]) for n in names)):
        env = dict(base_env)
        env.update(zip(names, combo))
        if eval_term(formula, env, quant_lo, quant_hi):
            count += 1
    return count
