"""Project loading, the end-to-end verification pipeline, the benchmark
suite runner, and the finite-state oracle front end.

A project directory bundles a transition system, a counting property, an
enumeration witness, and a model-counting proof script. ``verify`` runs:

1. syntactic well-definedness of the property,
2. generation and discharge of the enumeration bundle(s) — injective for
   ``>=``, surjective for ``<=``, both for ``=``,
3. the proof script through the counting kernel,
4. a final entailment linking the script's goal to the property bound.

Exit codes: 0 verified, 1 refuted or stage-failed, 2 unknown, 3 usage or
configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence

from . import backend
from .backend import OBLIGATION_LOGIC, VALIDITY_OPTIONS, build_query
from .counting import (
    BUILTIN_AXIOMS,
    BUILTIN_SIGNATURE,
    ProofScript,
    check_script,
    parse_proof,
)
from .enumeration import (
    EnumerationWitness,
    discharge,
    gen_injective_vcs,
    gen_surjective_vcs,
    parse_enumeration,
)
from .oracle import (
    ArrayDomain,
    Domain,
    FiniteInstance,
    OracleError,
    ScalarDomain,
    brute_count,
    count_equivalence_classes,
    enumerate_traces,
)
from .qhl import QhpProperty, check_well_defined, parse_property
from .sexpr import Sexpr, SexprError, parse_one
from .system import TransitionSystem, parse_system
from .terms import (
    App,
    Cmp,
    Forall,
    INT,
    Implies,
    IntLit,
    Not,
    PLAIN,
    Signature,
    Term,
    Var,
    indexed,
    retag_free,
)

TOOL_ID = "qhenum 0.1.0"

VERIFIED = "QHP-verified"
STAGE_FAILED = "stage-failed"
UNKNOWN = "unknown"

CMP_OPS = {"geq": ">=", "leq": "<=", "eq": "="}


class ProjectError(ValueError):
    pass


@dataclass(frozen=True)
class Project:
    directory: Path
    system: TransitionSystem
    prop: QhpProperty
    witness: EnumerationWitness
    script: ProofScript
    valid_pred: str
    solver: Optional[list[str]]
    timeout_ms: int
    debug_dir: Optional[Path]


def load_project(
    directory: Path,
    solver: Optional[Sequence[str]] = None,
    timeout_ms: Optional[int] = None,
    debug_dir: Optional[Path] = None,
) -> Project:
    manifest = directory / "project.sexp"
    if not manifest.is_file():
        raise ProjectError(f"{directory} has no project.sexp")
    form = parse_one(manifest.read_text())
    if not isinstance(form, list) or not form or form[0] != "project":
        raise ProjectError(f"{manifest} is not a (project ...) file")
    sections: dict[str, Sexpr] = {}
    for item in form[1:]:
        if not isinstance(item, list) or not item or not isinstance(item[0], str):
            raise ProjectError(f"bad project section {item!r}")
        sections[item[0]] = item
    for needed in ("system", "property", "enumeration", "proof", "valid-pred"):
        if needed not in sections:
            raise ProjectError(f"project misses ({needed} ...)")

    def read(key: str) -> str:
        path = directory / str(sections[key][1]).strip('"')
        if not path.is_file():
            raise ProjectError(f"missing {key} file {path}")
        return path.read_text()

    options: dict[str, Sexpr] = {}
    if "options" in sections:
        for entry in sections["options"][1:]:
            options[entry[0]] = entry[1]
    if timeout_ms is None:
        timeout_ms = int(options.get("timeout-ms", backend.DEFAULT_TIMEOUT_MS))
    if solver is None and "solver" in options:
        solver = [str(options["solver"]).strip('"')]

    system = parse_system(read("system"))
    prop = parse_property(read("property"), system, BUILTIN_SIGNATURE)
    witness = parse_enumeration(read("enumeration"), system)
    script = parse_proof(read("proof"))
    return Project(
        directory,
        system,
        prop,
        witness,
        script,
        str(sections["valid-pred"][1]),
        list(solver) if solver else None,
        timeout_ms,
        debug_dir,
    )


# ---------------------------------------------------------------------------
# Verification pipeline


def _skipped() -> dict[str, Any]:
    return {"verdict": "skipped"}


def _link_formula(project: Project) -> Term:
    """The final claim: for all parameters, goal count ◁ property bound."""
    decl = None
    for pred in project.script.declarations:
        if pred.name == project.valid_pred:
            decl = pred
    if decl is None:
        raise ProjectError(f"proof script declares no predicate {project.valid_pred}")
    witness_valid = retag_free(project.witness.valid, {indexed(1): PLAIN})
    if witness_valid != decl.body:
        raise ProjectError(
            f"predicate {decl.name} in the proof script does not match the "
            "enumeration's valid predicate"
        )
    count = App(f"cnt.{decl.name}", tuple(Var(n, s) for n, s in decl.params))
    op = CMP_OPS[project.prop.cmp]
    params = tuple((z, project.system.sort_of(z)) for z in project.system.params)
    claim = Implies(project.prop.assuming, Cmp(op, count, project.prop.bound))
    return Forall(params, claim) if params else claim


def _entails(
    assertions: Sequence[Term],
    goal: Term,
    signature: Signature,
    project: Project,
    label: str,
) -> str:
    query = build_query(
        [*assertions, Not(goal)],
        signature=signature,
        logic=OBLIGATION_LOGIC,
        options=VALIDITY_OPTIONS,
        timeout_ms=project.timeout_ms,
    )
    debug_path = (
        project.debug_dir / f"{label}.smt2" if project.debug_dir is not None else None
    )
    verdict = backend.solve(query, project.solver, debug_path=debug_path)
    return {"unsat": "passed", "sat": "failed"}.get(verdict.status, "unknown")


def verify(project: Project) -> dict[str, Any]:
    started = time.monotonic()
    report: dict[str, Any] = {
        "schema": "report/v1",
        "tool": TOOL_ID,
        "solver": " ".join(backend.resolve_solver(project.solver)),
        "project": project.directory.name,
        "verdict": UNKNOWN,
        "failed_stage": None,
        "stages": {
            "well-definedness": _skipped(),
            "enumeration": _skipped(),
            "counting": _skipped(),
            "link": _skipped(),
        },
    }

    def finish(verdict: str, failed_stage: Optional[str] = None) -> dict[str, Any]:
        report["verdict"] = verdict
        report["failed_stage"] = failed_stage
        report["wall_ms"] = int((time.monotonic() - started) * 1000)
        return report

    wd = check_well_defined(project.prop, project.system)
    report["stages"]["well-definedness"] = {
        "verdict": "passed" if wd.ok else "failed",
        "reason": wd.reason,
    }
    if not wd.ok:
        return finish(STAGE_FAILED, "well-definedness")

    kinds = {"geq": ("injective",), "leq": ("surjective",), "eq": ("injective", "surjective")}
    bundles = []
    status = "passed"
    for kind in kinds[project.prop.cmp]:
        gen = gen_injective_vcs if kind == "injective" else gen_surjective_vcs
        bundle = gen(project.system, project.prop, project.witness)
        rep = discharge(
            bundle,
            solver=project.solver,
            timeout_ms=project.timeout_ms,
            debug_dir=project.debug_dir,
        )
        bundles.append(
            {
                "kind": kind,
                "established": rep.established,
                "wall_ms": rep.wall_ms,
                "obligations": [
                    {"label": r.label, "status": r.status, "wall_ms": r.wall_ms}
                    for r in rep.results
                ],
            }
        )
        if any(r.status == "failed" for r in rep.results):
            status = "failed"
        elif not rep.established and status != "failed":
            status = "unknown"
    report["stages"]["enumeration"] = {"verdict": status, "bundles": bundles}
    if status == "failed":
        return finish(STAGE_FAILED, "enumeration")
    if status == "unknown":
        return finish(UNKNOWN, "enumeration")

    t0 = time.monotonic()
    result = check_script(
        project.script,
        solver=project.solver,
        timeout_ms=project.timeout_ms,
        debug_dir=project.debug_dir,
    )
    report["stages"]["counting"] = {
        "verdict": "passed" if result.accepted else "failed",
        "rejected_at": result.rejected_at,
        "reason": result.reason,
        "wall_ms": int((time.monotonic() - t0) * 1000),
    }
    if not result.accepted:
        if "solver returned unknown" in result.reason:
            return finish(UNKNOWN, "counting")
        return finish(STAGE_FAILED, "counting")

    t0 = time.monotonic()
    signature = result.signature
    for pred in project.script.declarations:
        if not signature.has(f"cnt.{pred.name}"):
            signature = signature.extend(
                f"cnt.{pred.name}", tuple(s for _, s in pred.params), INT
            )
    assertions = [*BUILTIN_AXIOMS, *(f.axiom for f in result.facts)]
    if project.script.goal is not None:
        assertions.append(project.script.goal)
    link_status = _entails(
        assertions, _link_formula(project), signature, project, "link"
    )
    if link_status == "passed" and project.prop.cmp == "leq":
        zparams = tuple(
            (z, project.system.sort_of(z)) for z in project.system.params
        )
        nonneg = Implies(
            project.prop.assuming, Cmp("<=", IntLit(0), project.prop.bound)
        )
        link_status = _entails(
            list(BUILTIN_AXIOMS),
            Forall(zparams, nonneg) if zparams else nonneg,
            BUILTIN_SIGNATURE,
            project,
            "link-bound-nonneg",
        )
    report["stages"]["link"] = {
        "verdict": link_status,
        "wall_ms": int((time.monotonic() - t0) * 1000),
    }
    if link_status == "failed":
        return finish(STAGE_FAILED, "link")
    if link_status == "unknown":
        return finish(UNKNOWN, "link")
    return finish(VERIFIED)


EXIT_BY_VERDICT = {VERIFIED: 0, STAGE_FAILED: 1, UNKNOWN: 2}


# ---------------------------------------------------------------------------
# Benchmark suite


def run_benchmarks(
    suite: Path,
    solver: Optional[Sequence[str]] = None,
    timeout_ms: Optional[int] = None,
    json_out: Optional[Path] = None,
) -> int:
    dirs = sorted(d for d in suite.iterdir() if (d / "project.sexp").is_file())
    if not dirs:
        print(f"warning: no projects found under {suite}", file=sys.stderr)
        if json_out is not None:
            json_out.write_text(
                json.dumps({"schema": "report/v1", "suite": [], "verdict": "empty"}, indent=2)
                + "\n"
            )
        print("(empty suite)")
        return 0
    rows = []
    reports = []
    for d in dirs:
        project = load_project(d, solver=solver, timeout_ms=timeout_ms)
        report = verify(project)
        reports.append(report)
        rows.append(
            {
                "project": d.name,
                "model_lines": _line_count(d / "project.sexp", project, "system"),
                "proof_lines": _line_count(d / "project.sexp", project, "proof"),
                "annotations": _annotation_count(project.witness),
                "verdict": report["verdict"],
                "wall_ms": report["wall_ms"],
            }
        )
    header = f"{'project':<22}{'model':>6}{'proof':>6}{'annot':>6}{'time':>9}  verdict"
    print(header)
    for row in rows:
        print(
            f"{row['project']:<22}{row['model_lines']:>6}{row['proof_lines']:>6}"
            f"{row['annotations']:>6}{row['wall_ms'] / 1000.0:>8.1f}s  {row['verdict']}"
        )
    if json_out is not None:
        json_out.write_text(
            json.dumps(
                {"schema": "report/v1", "suite": rows, "reports": reports}, indent=2
            )
            + "\n"
        )
    worst = 0
    for report in reports:
        worst = max(worst, EXIT_BY_VERDICT[report["verdict"]])
    return worst


def _line_count(manifest: Path, project: Project, key: str) -> int:
    form = parse_one(manifest.read_text())
    for item in form[1:]:
        if isinstance(item, list) and item and item[0] == key:
            path = manifest.parent / str(item[1]).strip('"')
            return sum(1 for _ in path.read_text().splitlines())
    return 0


def _annotation_count(witness: EnumerationWitness) -> int:
    return (
        len(witness.skolem_init)
        + len(witness.skolem_step)
        + len(witness.strengthening)
        + len(witness.cover)
    )


# ---------------------------------------------------------------------------
# Oracle front end


def parse_domain(expr: Sexpr) -> Domain:
    if not isinstance(expr, list) or not expr:
        raise OracleError(f"bad domain {expr!r}")
    head = expr[0]
    if head == "range":  # (range lo hi) inclusive
        return ScalarDomain(tuple(range(int(expr[1]), int(expr[2]) + 1)))
    if head == "values":
        return ScalarDomain(tuple(int(v) for v in expr[1:]))
    if head == "bool":
        return ScalarDomain((False, True))
    if head == "array":  # (array lo hi (v ...) [default])
        values = tuple(int(v) for v in expr[3])
        default = int(expr[4]) if len(expr) > 4 else 0
        return ArrayDomain(int(expr[1]), int(expr[2]), values, default)
    raise OracleError(f"unknown domain kind {head!r}")


def parse_value(expr: Sexpr):
    """A concrete value: integer, true/false, or (arr lo (v ...) [default])."""
    if isinstance(expr, int):
        return expr
    if expr in ("true", "false"):
        return expr == "true"
    if isinstance(expr, list) and expr and expr[0] == "arr":
        from .oracle import FArray

        default = int(expr[3]) if len(expr) > 3 else 0
        return FArray(int(expr[1]), tuple(int(v) for v in expr[2]), default)
    raise OracleError(f"bad value {expr!r}")


@dataclass(frozen=True)
class OracleSetup:
    project: Project
    instance: FiniteInstance
    count_domains: dict[str, Domain]


def load_instance(path: Path, depth: Optional[int] = None) -> OracleSetup:
    form = parse_one(path.read_text())
    if not isinstance(form, list) or not form or form[0] != "instance":
        raise OracleError(f"{path} is not an (instance ...) file")
    sections: dict[str, Sexpr] = {}
    for item in form[1:]:
        sections[item[0]] = item
    project_dir = path.parent / str(sections.get("project", ["project", "."])[1]).strip('"')
    project = load_project(project_dir)
    params = {e[0]: parse_value(e[1]) for e in sections.get("params", ["params"])[1:]}
    init_fix = {
        e[0]: parse_value(e[1]) for e in sections.get("init-fix", ["init-fix"])[1:]
    }
    domains = {
        e[0]: parse_domain(e[1]) for e in sections.get("domains", ["domains"])[1:]
    }
    count_domains = {
        e[0]: parse_domain(e[1]) for e in sections.get("count-vars", ["count-vars"])[1:]
    }
    kw: dict[str, Sexpr] = sections
    instance = FiniteInstance(
        system=project.system,
        domains=domains,
        params=params,
        depth=depth if depth is not None else int(kw.get("depth", ["depth", 4])[1]),
        stable_from=int(kw["stable-from"][1]) if "stable-from" in kw else None,
        deterministic=str(kw.get("deterministic", ["deterministic", "false"])[1])
        == "true",
        quant_lo=int(kw["quant-bounds"][1]) if "quant-bounds" in kw else -2,
        quant_hi=int(kw["quant-bounds"][2]) if "quant-bounds" in kw else 8,
        init_fix=init_fix,
    )
    return OracleSetup(project, instance, count_domains)


def oracle_main(args: argparse.Namespace) -> int:
    setup = load_instance(Path(args.instance), args.depth)
    if args.count_classes:
        traces = enumerate_traces(setup.instance)
        if not (0 <= args.pivot < len(traces)):
            print(f"pivot index out of range (have {len(traces)} traces)", file=sys.stderr)
            return 3
        result = count_equivalence_classes(
            setup.instance, setup.project.prop, traces[args.pivot], traces
        )
        print(result)
        return 0 if result != "unknown" else 2
    name = args.brute_count
    if name == "valid":
        formula = retag_free(setup.project.witness.valid, {indexed(1): PLAIN})
        counted = {n: setup.count_domains[n] for n, _ in setup.project.witness.enum_vars}
    else:
        decl = None
        for pred in setup.project.script.declarations:
            if pred.name == name:
                decl = pred
        if decl is None:
            print(f"no such formula {name!r}", file=sys.stderr)
            return 3
        formula = decl.body
        counted = {c: setup.count_domains[c] for c in decl.counted}
    print(brute_count(formula, counted, setup.instance.params,
                      setup.instance.quant_lo, setup.instance.quant_hi))
    return 0


# ---------------------------------------------------------------------------
# Entry point


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(prog="qhenum")
    sub = parser.add_subparsers(dest="command", required=True)

    p_verify = sub.add_parser("verify", help="verify a project directory")
    p_verify.add_argument("project", type=Path)
    p_verify.add_argument("--solver", type=str, default=None)
    p_verify.add_argument("--timeout", type=int, default=None, metavar="MS")
    p_verify.add_argument("--json", type=Path, default=None)
    p_verify.add_argument("--debug-dir", type=Path, default=None)

    p_oracle = sub.add_parser("oracle", help="finite-state oracle checks")
    p_oracle.add_argument("--instance", required=True)
    p_oracle.add_argument("--depth", type=int, default=None)
    p_oracle.add_argument("--pivot", type=int, default=0)
    group = p_oracle.add_mutually_exclusive_group(required=True)
    group.add_argument("--count-classes", action="store_true")
    group.add_argument("--brute-count", type=str, metavar="FORMULA")

    p_bench = sub.add_parser("bench", help="run a benchmark suite directory")
    p_bench.add_argument("suite", type=Path)
    p_bench.add_argument("--solver", type=str, default=None)
    p_bench.add_argument("--timeout", type=int, default=None, metavar="MS")
    p_bench.add_argument("--json", type=Path, default=None)

    args = parser.parse_args(argv)
    try:
        if args.command == "verify":
            solver = args.solver.split() if args.solver else None
            project = load_project(
                args.project,
                solver=solver,
                timeout_ms=args.timeout,
                debug_dir=args.debug_dir,
            )
            report = verify(project)
            text = json.dumps(report, indent=2) + "\n"
            if args.json is not None:
                args.json.write_text(text)
            print(text, end="")
            return EXIT_BY_VERDICT[report["verdict"]]
        if args.command == "oracle":
            return oracle_main(args)
        if args.command == "bench":
            solver = args.solver.split() if args.solver else None
            return run_benchmarks(
                args.suite, solver=solver, timeout_ms=args.timeout, json_out=args.json
            )
    except (ProjectError, SexprError, OracleError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 3


if __name__ == "__main__":
    sys.exit(main())
