"""SMT-LIB2 query emission and external solver process management."""

from __future__ import annotations

import os
import shlex
import shutil
import subprocess
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from . import sexpr
from .terms import (
    ArraySort,
    Signature,
    Sort,
    Term,
    UninterpSort,
    Var,
    free_vars,
    iter_subterms,
    sort_to_sexpr,
    term_to_sexpr,
    App,
)


class BackendError(RuntimeError):
    pass


class EmitError(BackendError):
    pass


class SolverSpawnError(BackendError):
    pass


class ProtocolError(BackendError):
    pass


DEFAULT_LOGIC = "AUFLIA"
# Verification obligations mix arrays, quantifiers, and the nonlinear count
# arithmetic of the proof kernel, so they run under the unrestricted logic.
OBLIGATION_LOGIC = "ALL"
DEFAULT_TIMEOUT_MS = 120_000

# Options for universally quantified validity queries: model-based quantifier
# instantiation diverges on the array-heavy obligations, E-matching does not.
VALIDITY_OPTIONS: tuple[tuple[str, str], ...] = (("smt.mbqi", "false"),)
# Options for queries where a model (sat answer) is the useful outcome.
MODEL_OPTIONS: tuple[tuple[str, str], ...] = ()
# Fallback for model searches that the default tactic cannot finish: force
# model-based quantifier instantiation, which can build the ite-shaped array
# models the default search misses.
MBQI_OPTIONS: tuple[tuple[str, str], ...] = (("smt.mbqi", "true"),)


@dataclass(frozen=True)
class Query:
    assertions: tuple[Term, ...]
    logic: str = DEFAULT_LOGIC
    options: tuple[tuple[str, str], ...] = VALIDITY_OPTIONS
    sorts: tuple[str, ...] = ()
    functions: tuple[tuple[str, tuple[Sort, ...], Sort], ...] = ()
    consts: tuple[tuple[str, Sort], ...] = ()
    timeout_ms: int = DEFAULT_TIMEOUT_MS
    get_model: bool = False


@dataclass(frozen=True)
class Verdict:
    status: str  # sat | unsat | unknown
    model: Optional[tuple[tuple[str, str], ...]] = None
    wall_ms: int = 0
    transcript: str = ""


def _uninterp_sorts(sorts: Iterable[Sort]) -> set[str]:
    names: set[str] = set()

    def walk(s: Sort) -> None:
        if isinstance(s, UninterpSort):
            names.add(s.name)
        elif isinstance(s, ArraySort):
            walk(s.index)
            walk(s.element)

    for s in sorts:
        walk(s)
    return names


def build_query(
    assertions: Sequence[Term],
    signature: Signature = Signature(),
    logic: str = DEFAULT_LOGIC,
    options: tuple[tuple[str, str], ...] = VALIDITY_OPTIONS,
    timeout_ms: int = DEFAULT_TIMEOUT_MS,
    get_model: bool = False,
) -> Query:
    """Collect declarations for the free symbols of ``assertions``."""
    consts: dict[str, Sort] = {}
    funcs: dict[str, tuple[tuple[Sort, ...], Sort]] = {}
    for formula in assertions:
        for v in free_vars(formula):
            prev = consts.get(v.mangled)
            if prev is not None and prev != v.sort:
                raise EmitError(f"constant {v.mangled} used at two sorts")
            consts[v.mangled] = v.sort
        for sub in iter_subterms(formula):
            if isinstance(sub, App):
                rank = signature.rank(sub.func)
                funcs[sub.func] = rank
    all_sorts = list(consts.values())
    for args, res in funcs.values():
        all_sorts.extend(args)
        all_sorts.append(res)
    return Query(
        assertions=tuple(assertions),
        logic=logic,
        options=options,
        sorts=tuple(sorted(_uninterp_sorts(all_sorts))),
        functions=tuple((n, *funcs[n]) for n in sorted(funcs)),
        consts=tuple(sorted(consts.items())),
        timeout_ms=timeout_ms,
        get_model=get_model,
    )


def emit(query: Query) -> str:
    """Deterministic SMT-LIB2 text for ``query``."""
    lines: list[str] = [f"(set-logic {query.logic})"]
    for name, value in query.options:
        lines.append(f"(set-option :{name} {value})")
    for sort_name in query.sorts:
        lines.append(f"(declare-sort {sort_name} 0)")
    for fname, arg_sorts, result in query.functions:
        args_txt = " ".join(sexpr.to_text(sort_to_sexpr(s)) for s in arg_sorts)
        res_txt = sexpr.to_text(sort_to_sexpr(result))
        lines.append(f"(declare-fun {fname} ({args_txt}) {res_txt})")
    for cname, sort in query.consts:
        lines.append(f"(declare-const {cname} {sexpr.to_text(sort_to_sexpr(sort))})")
    for formula in query.assertions:
        lines.append(f"(assert {sexpr.to_text(term_to_sexpr(formula))})")
    lines.append("(check-sat)")
    if query.get_model:
        lines.append("(get-model)")
    return "\n".join(lines) + "\n"


def resolve_solver(solver: Optional[Sequence[str]] = None) -> list[str]:
    """Pick the solver command: explicit > env > z3 on PATH > bundled wrapper."""
    if solver:
        return list(solver)
    env = os.environ.get("QHENUM_SOLVER")
    if env:
        return shlex.split(env)
    z3 = shutil.which("z3")
    if z3:
        return [z3, "-smt2", "-in"]
    wrapper = Path(__file__).resolve().parents[2] / "solver" / "z3smt2.mjs"
    node = shutil.which("node")
    if node and wrapper.exists():
        return [node, str(wrapper)]
    raise SolverSpawnError(
        "no SMT solver found: set QHENUM_SOLVER or install z3 on PATH"
    )


def solve(
    query: Query,
    solver: Optional[Sequence[str]] = None,
    debug_path: Optional[Path] = None,
) -> Verdict:
    """Run ``query`` through the external solver; timeouts yield ``unknown``."""
    cmd = resolve_solver(solver)
    text = emit(query)
    if debug_path is not None:
        debug_path.parent.mkdir(parents=True, exist_ok=True)
        debug_path.write_text(text)
    start = time.monotonic()
    try:
        proc = subprocess.run(
            cmd,
            input=text,
            capture_output=True,
            text=True,
            timeout=max(query.timeout_ms, 1) / 1000.0,
        )
    except FileNotFoundError as exc:
        raise SolverSpawnError(str(exc)) from exc
    except subprocess.TimeoutExpired:
        wall = int((time.monotonic() - start) * 1000)
        return Verdict("unknown", None, wall, "timeout")
    wall = int((time.monotonic() - start) * 1000)
    transcript = proc.stdout
    if debug_path is not None:
        reply_path = debug_path.with_suffix(debug_path.suffix + ".out")
        reply_path.write_text(transcript + ("\n--- stderr ---\n" + proc.stderr if proc.stderr else ""))
    status = None
    rest: list[str] = []
    for line in transcript.splitlines():
        stripped = line.strip()
        if status is None:
            if stripped in ("sat", "unsat", "unknown"):
                status = stripped
            elif stripped.startswith("(error"):
                raise ProtocolError(f"solver error: {stripped}")
            elif stripped:
                raise ProtocolError(f"unparseable solver reply: {stripped!r}")
        else:
            rest.append(line)
    if status is None:
        raise ProtocolError(f"no verdict in solver reply (exit {proc.returncode})")
    model = None
    if status == "sat" and query.get_model and rest:
        model = _parse_model("\n".join(rest))
    return Verdict(status, model, wall, transcript)


def _parse_model(text: str) -> tuple[tuple[str, str], ...]:
    try:
        forms = sexpr.parse_all(text)
    except sexpr.SexprError:
        return ()
    entries: list[tuple[str, str]] = []
    for form in forms:
        if not isinstance(form, list):
            continue
        items = form[1:] if form and form[0] == "model" else form
        for item in items:
            if (
                isinstance(item, list)
                and len(item) == 5
                and item[0] == "define-fun"
                and item[2] == []
            ):
                entries.append((str(item[1]), sexpr.to_text(item[4])))
    return tuple(entries)
