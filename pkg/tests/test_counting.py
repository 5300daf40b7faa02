import pytest

from qhenum.counting import (
    DeclaredPred,
    Kernel,
    KernelError,
    NotValid,
    VarsOverlap,
    check_script,
    parse_proof,
)
from qhenum.terms import INT, IntLit, Var, term_from_text

TIMEOUT = 20_000


def pred(name, variables, counted, body_text):
    env = {n: s for n, s in variables}
    return DeclaredPred(name, tuple(variables), tuple(counted), term_from_text(body_text, env))


def make_kernel(solver, *preds):
    kernel = Kernel(solver, TIMEOUT)
    for p in preds:
        kernel.declare_pred(p)
    return kernel


V, W, B, K, N = [("v", INT)], [("w", INT)], [("b", INT)], ("k", INT), ("n", INT)


# -- declarations -------------------------------------------------------------


def test_declare_pred_validation():
    with pytest.raises(KernelError):
        pred("P", V, [], "(= v 0)")  # no counted variables
    with pytest.raises(KernelError):
        pred("P", V, ["q"], "(= v 0)")  # counted var undeclared
    with pytest.raises(KernelError):
        pred("P", V + V, ["v"], "(= v 0)")  # duplicate variables


def test_unknown_predicate_rejected(solver):
    kernel = make_kernel(solver)
    with pytest.raises(KernelError):
        kernel.rule_positive("nope")


# -- range ---------------------------------------------------------------------


def test_range_accepts_interval(solver):
    kernel = make_kernel(solver, pred("R", V + [K], ["v"], "(and (<= 0 v) (< v k))"))
    fact = kernel.rule_range("R")
    assert fact.rule == "range"
    assert kernel.entails(
        term_from_text("(= (cnt.R 5) 5)", {}, kernel.signature), "t"
    )
    assert kernel.entails(
        term_from_text("(= (cnt.R (- 2)) 0)", {}, kernel.signature), "t"
    )


def test_range_rejects_wrong_shape(solver):
    kernel = make_kernel(
        solver,
        pred("R1", V + [K], ["v"], "(and (< 0 v) (< v k))"),
        pred("R2", V + [K], ["v"], "(and (<= 0 v) (< v v))"),
        pred("R3", V + [W[0], K], ["v", "w"], "(and (<= 0 v) (< v k))"),
    )
    with pytest.raises(KernelError):
        kernel.rule_range("R1")  # strict lower bound
    with pytest.raises(KernelError):
        kernel.rule_range("R2")  # bound mentions the counted variable
    with pytest.raises(KernelError):
        kernel.rule_range("R3")  # two counted variables


# -- positive --------------------------------------------------------------------


def test_positive(solver):
    kernel = make_kernel(solver, pred("P", V + [K], ["v"], "(= v k)"))
    kernel.rule_positive("P")
    assert kernel.entails(
        term_from_text("(forall ((k Int)) (>= (cnt.P k) 0))", {}, kernel.signature),
        "t",
    )


# -- const bounds -----------------------------------------------------------------


def test_const_lb_model_search(solver):
    kernel = make_kernel(solver, pred("P", V, ["v"], "(and (<= 0 v) (< v 3))"))
    kernel.rule_const_bound("P", 3, "lb")
    assert kernel.entails(term_from_text("(>= cnt.P 3)", {}, kernel.signature), "t")
    with pytest.raises(NotValid):
        kernel.rule_const_bound("P", 4, "lb")


def test_const_lb_explicit_witnesses(solver):
    kernel = make_kernel(solver, pred("P", V, ["v"], "(and (<= 0 v) (< v 3))"))
    models = [{"v": IntLit(0)}, {"v": IntLit(2)}]
    kernel.rule_const_bound("P", 2, "lb", models)
    assert kernel.entails(term_from_text("(>= cnt.P 2)", {}, kernel.signature), "t")


def test_const_lb_bad_witnesses_rejected(solver):
    kernel = make_kernel(solver, pred("P", V, ["v"], "(and (<= 0 v) (< v 3))"))
    with pytest.raises(NotValid):
        # 5 violates the body
        kernel.rule_const_bound("P", 2, "lb", [{"v": IntLit(0)}, {"v": IntLit(5)}])
    with pytest.raises(NotValid):
        # witnesses are not pairwise distinct
        kernel.rule_const_bound("P", 2, "lb", [{"v": IntLit(1)}, {"v": IntLit(1)}])
    with pytest.raises(KernelError):
        kernel.rule_const_bound("P", 2, "lb", [{"v": IntLit(0)}])


def test_const_lb_parameterized(solver):
    kernel = make_kernel(
        solver,
        pred("P", V + [K], ["v"], "(or (= v 0) (= v k))"),
        pred("Q", V + [K], ["v"], "(and (= v 0) (= v k))"),
    )
    kernel.rule_const_bound("P", 1, "lb")
    assert kernel.entails(
        term_from_text("(forall ((k Int)) (>= (cnt.P k) 1))", {}, kernel.signature),
        "t",
    )
    with pytest.raises(NotValid):
        kernel.rule_const_bound("P", 2, "lb")  # fails when k = 0
    with pytest.raises(NotValid):
        kernel.rule_const_bound("Q", 1, "lb")  # fails when k != 0


def test_const_ub(solver):
    kernel = make_kernel(solver, pred("P", V, ["v"], "(= v 7)"))
    kernel.rule_const_bound("P", 2, "ub")
    assert kernel.entails(term_from_text("(<= cnt.P 1)", {}, kernel.signature), "t")
    with pytest.raises(NotValid):
        kernel.rule_const_bound("P", 1, "ub")  # one model does exist


def test_const_bound_rejects_degenerate_count(solver):
    kernel = make_kernel(solver, pred("P", V, ["v"], "(= v 7)"))
    with pytest.raises(KernelError):
        kernel.rule_const_bound("P", 0, "lb")


# -- ub (subset) --------------------------------------------------------------------


def test_ub(solver):
    kernel = make_kernel(
        solver,
        pred("F", V, ["v"], "(and (<= 0 v) (< v 2))"),
        pred("G", V, ["v"], "(and (<= 0 v) (< v 5))"),
    )
    kernel.rule_ub("F", "G")
    assert kernel.entails(
        term_from_text("(<= cnt.F cnt.G)", {}, kernel.signature), "t"
    )
    with pytest.raises(NotValid):
        kernel.rule_ub("G", "F")  # G is not a subset of F


# -- or --------------------------------------------------------------------------------


def test_or(solver):
    kernel = make_kernel(
        solver,
        pred("F", V, ["v"], "(and (<= 0 v) (< v 4))"),
        pred("G", V, ["v"], "(and (<= 0 v) (< v 2))"),
        pred("H", V, ["v"], "(and (<= 2 v) (< v 4))"),
    )
    kernel.rule_or("F", "G", "H")
    with pytest.raises(NotValid):
        kernel.rule_or("G", "F", "H")  # G != F or H


def test_or_overlap_is_subtracted(solver):
    kernel = make_kernel(
        solver,
        pred("F", V, ["v"], "(and (<= 0 v) (< v 4))"),
        pred("G", V, ["v"], "(and (<= 0 v) (< v 3))"),
        pred("H", V, ["v"], "(and (<= 2 v) (< v 4))"),
    )
    kernel.rule_or("F", "G", "H")
    goal = term_from_text(
        "(= cnt.F (- (+ cnt.G cnt.H) cnt.G&H))", {}, kernel.signature
    )
    assert kernel.entails(goal, "t")


# -- products -----------------------------------------------------------------------------


def test_disjoint(solver):
    kernel = make_kernel(
        solver,
        pred("H", V + W, ["v", "w"], "(and (and (<= 0 v) (< v 2)) (and (<= 0 w) (< w 3)))"),
        pred("F", V, ["v"], "(and (<= 0 v) (< v 2))"),
        pred("G", W, ["w"], "(and (<= 0 w) (< w 3))"),
    )
    kernel.rule_disjoint("H", "F", "G")
    assert kernel.entails(
        term_from_text("(= cnt.H (* cnt.F cnt.G))", {}, kernel.signature), "t"
    )


def test_disjoint_rejects_shared_variables(solver):
    kernel = make_kernel(
        solver,
        pred("H", V, ["v"], "(and (<= 0 v) (< v 2))"),
        pred("F", V, ["v"], "(<= 0 v)"),
        pred("G", V, ["v"], "(< v 2)"),
    )
    with pytest.raises(VarsOverlap):
        kernel.rule_disjoint("H", "F", "G")


def test_and_ub(solver):
    kernel = make_kernel(
        solver,
        pred("H", V, ["v"], "(and (<= 0 v) (< v 2))"),
        pred("F", V, ["v"], "(<= 0 v)"),
        pred("G", W, ["w"], "(< w 2)"),
    )
    with pytest.raises(KernelError):
        kernel.rule_and_ub("H", "F", "G")  # counted vars of h miss w
    kernel2 = make_kernel(
        solver,
        pred("H", V + W, ["v", "w"], "(and (and (<= 0 v) (< v 2)) (and (<= 0 w) (< w 3)))"),
        pred("F", V, ["v"], "(and (<= 0 v) (< v 2))"),
        pred("G", W, ["w"], "(and (<= 0 w) (< w 3))"),
        pred("Bad", W, ["w"], "(and (<= 0 w) (< w 1))"),
    )
    kernel2.rule_and_ub("H", "F", "G")
    with pytest.raises(NotValid):
        kernel2.rule_and_ub("H", "F", "Bad")


# -- injective ---------------------------------------------------------------------------------


def test_injective(solver):
    kernel = make_kernel(
        solver,
        pred("F", V, ["v"], "(and (<= 0 v) (< v 3))"),
        pred("G", W, ["w"], "(and (<= 0 w) (< w 6))"),
    )
    env = {"v": INT}
    kernel.rule_injectivity("F", "G", {"w": term_from_text("(* 2 v)", env)})
    assert kernel.entails(
        term_from_text("(<= cnt.F cnt.G)", {}, kernel.signature), "t"
    )


def test_injective_rejects_collapsing_witness(solver):
    kernel = make_kernel(
        solver,
        pred("F", V, ["v"], "(and (<= 0 v) (< v 3))"),
        pred("G", W, ["w"], "(and (<= 0 w) (< w 6))"),
    )
    with pytest.raises(NotValid):
        kernel.rule_injectivity("F", "G", {"w": IntLit(0)})


def test_injective_rejects_escaping_image(solver):
    kernel = make_kernel(
        solver,
        pred("F", V, ["v"], "(and (<= 0 v) (< v 3))"),
        pred("G", W, ["w"], "(and (<= 0 w) (< w 2))"),
    )
    with pytest.raises(NotValid):
        kernel.rule_injectivity("F", "G", {"w": term_from_text("v", {"v": INT})})


# -- induction ----------------------------------------------------------------------------------


def test_ind_geq(solver):
    kernel = make_kernel(
        solver,
        pred("F", V + [N], ["v"], "(and (<= 0 v) (< v n))"),
        pred("G", B, ["b"], "(= b 0)"),
    )
    env = {"v": INT, "b": INT}
    kernel.rule_ind(
        "geq",
        "F",
        "G",
        "n",
        {"g": {"v": term_from_text("v", env)}},
        term_from_text("(>= n 0)", {"n": INT}),
    )
    goal = term_from_text(
        "(forall ((n Int)) (=> (>= n 0) (>= (cnt.F (+ n 1)) (* (cnt.F n) cnt.G))))",
        {},
        kernel.signature,
    )
    assert kernel.entails(goal, "t")


def test_ind_geq_rejects_noninjective_lift(solver):
    kernel = make_kernel(
        solver,
        pred("F", V + [N], ["v"], "(and (<= 0 v) (< v n))"),
        pred("G", B, ["b"], "(and (<= 0 b) (< b 2))"),
    )
    env = {"v": INT, "b": INT}
    with pytest.raises(NotValid):
        # ignores b, so two g-models map to one lifted model
        kernel.rule_ind("geq", "F", "G", "n", {"g": {"v": term_from_text("v", env)}})


def test_ind_leq(solver):
    kernel = make_kernel(
        solver,
        pred("F", V + [N], ["v"], "(and (<= 0 v) (< v (* 2 n)))"),
        pred("G", B, ["b"], "(and (<= 0 b) (< b 2))"),
    )
    env = {"v": INT}
    kernel.rule_ind(
        "leq",
        "F",
        "G",
        "n",
        {
            "hx": {"v": term_from_text("(div v 2)", env)},
            "hy": {"b": term_from_text("(mod v 2)", env)},
        },
        term_from_text("(>= n 1)", {"n": INT}),
    )
    goal = term_from_text(
        "(forall ((n Int)) (=> (>= n 1) (<= (cnt.F (+ n 1)) (* (cnt.F n) cnt.G))))",
        {},
        kernel.signature,
    )
    assert kernel.entails(goal, "t")


def test_ind_leq_rejects_bad_lowering(solver):
    kernel = make_kernel(
        solver,
        pred("F", V + [N], ["v"], "(and (<= 0 v) (< v (* 2 n)))"),
        pred("G", B, ["b"], "(and (<= 0 b) (< b 2))"),
    )
    env = {"v": INT}
    with pytest.raises(NotValid):
        # identity does not land back in F at n
        kernel.rule_ind(
            "leq",
            "F",
            "G",
            "n",
            {
                "hx": {"v": term_from_text("v", env)},
                "hy": {"b": term_from_text("0", env)},
            },
            term_from_text("(>= n 1)", {"n": INT}),
        )


def test_ind_requires_fresh_counted_names(solver):
    kernel = make_kernel(
        solver,
        pred("F", V + [N], ["v"], "(and (<= 0 v) (< v n))"),
        pred("G", V, ["v"], "(= v 0)"),
    )
    with pytest.raises(KernelError):
        kernel.rule_ind("geq", "F", "G", "n", {"g": {"v": Var("v", INT)}})


# -- close --------------------------------------------------------------------------------------


def close_kernel(solver, timeout=TIMEOUT):
    kernel = Kernel(solver, timeout)
    kernel.declare_pred(pred("F", V + [N], ["v"], "(and (<= 0 v) (< v n))"))
    kernel.rule_range("F")
    return kernel


def test_close_recurrence(solver):
    kernel = close_kernel(solver)
    one = IntLit(1)
    kernel.close_recurrence("F", "n", one, one, one, one, ">=")
    goal = term_from_text(
        "(forall ((n Int)) (=> (>= n 1) (>= (cnt.F n) 1)))", {}, kernel.signature
    )
    assert kernel.entails(goal, "t")


# A failed entailment behind close can surface either as an explicit mismatch
# (solver finds a countermodel) or as an inconclusive-solver rejection (the
# recursive count axioms admit no finite model); both refuse the fact.


def test_close_base_mismatch(solver):
    kernel = close_kernel(solver, timeout=3000)
    before = len(kernel.facts)
    with pytest.raises(KernelError):
        kernel.close_recurrence("F", "n", IntLit(1), IntLit(5), IntLit(1), IntLit(1), ">=")
    assert len(kernel.facts) == before


def test_close_step_mismatch(solver):
    kernel = close_kernel(solver, timeout=3000)
    before = len(kernel.facts)
    with pytest.raises(KernelError):
        # facts do not entail doubling
        kernel.close_recurrence(
            "F",
            "n",
            IntLit(1),
            IntLit(1),
            IntLit(2),
            term_from_text("(pow2 (- n 1))", {"n": INT}, kernel.signature),
            ">=",
        )
    assert len(kernel.facts) == before


def test_close_needs_single_parameter(solver):
    kernel = make_kernel(
        solver, pred("F", V + [K, N], ["v"], "(and (<= 0 v) (< v n))")
    )
    with pytest.raises(KernelError):
        kernel.close_recurrence(
            "F", "n", IntLit(1), IntLit(1), IntLit(1), IntLit(1), ">="
        )


# -- scripts ------------------------------------------------------------------------------------

SCRIPT = """
(proof
  (declare-pred R ((v Int) (k Int)) (counted v) (and (<= 0 v) (< v k)))
  (step 1 (range R) (positive R))
  (goal (forall ((k Int)) (=> (>= k 0) (= (cnt.R k) k)))))
"""


def test_check_script_accepts(solver):
    script = parse_proof(SCRIPT)
    result = check_script(script, solver, timeout_ms=TIMEOUT)
    assert result.accepted
    assert result.rejected_at is None
    assert [f.rule for f in result.facts] == ["range", "positive"]


def test_check_script_rejects_bad_step(solver):
    bad = SCRIPT.replace("(and (<= 0 v) (< v k))", "(and (< 0 v) (< v k))")
    result = check_script(parse_proof(bad), solver, timeout_ms=TIMEOUT)
    assert not result.accepted
    assert result.rejected_at == "step 1"


def test_check_script_rejects_unentailed_goal(solver):
    bad = SCRIPT.replace("(= (cnt.R k) k)", "(= (cnt.R k) (+ k 1))")
    result = check_script(parse_proof(bad), solver, timeout_ms=3000)
    assert not result.accepted
    assert result.rejected_at == "goal"


def test_check_script_requires_goal(solver):
    script = parse_proof(
        "(proof (declare-pred R ((v Int)) (counted v) (= v 0)) (step 1 (positive R)))"
    )
    result = check_script(script, solver, timeout_ms=TIMEOUT)
    assert not result.accepted
    assert result.rejected_at == "goal"


def test_parse_proof_const_lb_models():
    text = """
    (proof
      (declare-pred P ((v Int)) (counted v) (and (<= 0 v) (< v 2)))
      (step 1 (const-lb P 2 (model (v 0)) (model (v 1))))
      (goal (>= cnt.P 2)))
    """
    script = parse_proof(text)
    (step,) = script.steps
    (app,) = step.apps
    assert app.rule == "const-lb"
    assert app.payload[1] == 2
    assert app.payload[2] == ({"v": IntLit(0)}, {"v": IntLit(1)})
