import json

import pytest

from qhenum.cli import (
    EXIT_BY_VERDICT,
    ProjectError,
    load_instance,
    load_project,
    main,
    verify,
)

SYSTEM = """
(system chooser
  (vars (c Int) (o Int))
  (init (and (<= 0 c) (< c 2) (= o c)))
  (tx (and (= c! c) (= o! o))))
"""

PROPERTY = """
(qhp (forall t0)
     (count t1
       :diff (finally (not (= o$1 o$2)))
       :body (globally (= c$2 c$2))
       :cmp eq
       :bound 2))
"""

ENUMERATION = """
(enumeration
  (enum-vars (Y Int))
  (valid (and (<= 0 Y) (< Y 2)))
  (trel (and (= c$2 Y) (= o$2 Y)))
  (skolem-init (c Y) (o Y))
  (skolem-step (c Y) (o Y))
  (cover (Y o$2)))
"""

PROOF = """
(proof
  (declare-pred V ((Y Int)) (counted Y) (and (<= 0 Y) (< Y 2)))
  (step 1 (range V))
  (goal (= cnt.V 2)))
"""

PROJECT = """
(project
  (system "system.sexp")
  (property "property.sexp")
  (enumeration "enumeration.sexp")
  (proof "proof.sexp")
  (valid-pred V)
  (options (timeout-ms 20000)))
"""

INSTANCE = """
(instance
  (project ".")
  (domains (c (range 0 1)) (o (range 0 1)))
  (count-vars (Y (range 0 1)))
  (depth 3)
  (deterministic true))
"""


def write_project(directory, **overrides):
    files = {
        "system.sexp": SYSTEM,
        "property.sexp": PROPERTY,
        "enumeration.sexp": ENUMERATION,
        "proof.sexp": PROOF,
        "project.sexp": PROJECT,
        "instance.sexp": INSTANCE,
    }
    files.update(overrides)
    directory.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        (directory / name).write_text(text)
    return directory


@pytest.fixture(scope="module")
def project_dir(tmp_path_factory):
    return write_project(tmp_path_factory.mktemp("suite") / "chooser")


def test_load_project(project_dir):
    project = load_project(project_dir)
    assert project.valid_pred == "V"
    assert project.timeout_ms == 20000
    assert project.prop.cmp == "eq"


def test_load_project_missing_manifest(tmp_path):
    with pytest.raises(ProjectError):
        load_project(tmp_path)


def test_load_project_valid_pred_mismatch(tmp_path):
    d = write_project(
        tmp_path / "broken",
        **{"proof.sexp": PROOF.replace("(< Y 2)", "(< Y 3)")},
    )
    with pytest.raises(ProjectError):
        from qhenum.cli import _link_formula

        _link_formula(load_project(d))


def test_verify_end_to_end(project_dir):
    report = verify(load_project(project_dir))
    assert report["verdict"] == "QHP-verified"
    assert report["failed_stage"] is None
    stages = report["stages"]
    assert stages["well-definedness"]["verdict"] == "passed"
    assert stages["enumeration"]["verdict"] == "passed"
    assert {b["kind"] for b in stages["enumeration"]["bundles"]} == {
        "injective",
        "surjective",
    }
    assert stages["counting"]["verdict"] == "passed"
    assert stages["link"]["verdict"] == "passed"


def test_verify_cli_exit_and_json(project_dir, tmp_path, capsys):
    out = tmp_path / "report.json"
    code = main(["verify", str(project_dir), "--json", str(out)])
    assert code == 0
    report = json.loads(out.read_text())
    assert report["verdict"] == "QHP-verified"
    assert report["schema"] == "report/v1"
    assert json.loads(capsys.readouterr().out)["verdict"] == "QHP-verified"


def test_verify_wrong_bound_is_not_verified(tmp_path):
    # the admitted facts pin cnt.V to 2, so the claim "= 3" cannot be linked;
    # the refutation search cannot terminate either (the recursive count
    # axioms have no finite model), so the honest verdict is unknown
    d = write_project(
        tmp_path / "refuted",
        **{
            "property.sexp": PROPERTY.replace(":bound 2", ":bound 3"),
            "project.sexp": PROJECT.replace("20000", "8000"),
        },
    )
    report = verify(load_project(d))
    assert report["verdict"] in ("stage-failed", "unknown")
    assert report["failed_stage"] == "link"
    assert EXIT_BY_VERDICT[report["verdict"]] in (1, 2)


def test_verify_rejected_proof_exits_1(tmp_path):
    d = write_project(
        tmp_path / "badproof",
        **{"proof.sexp": PROOF.replace("(range V)", "(const-ub V 2)")},
    )
    report = verify(load_project(d))
    assert report["verdict"] == "stage-failed"
    assert report["failed_stage"] == "counting"


def test_verify_usage_error_exits_3(tmp_path):
    assert main(["verify", str(tmp_path / "absent")]) == 3


def test_exit_code_table():
    assert EXIT_BY_VERDICT == {"QHP-verified": 0, "stage-failed": 1, "unknown": 2}


def test_oracle_brute_count(project_dir, capsys):
    code = main(["oracle", "--instance", str(project_dir / "instance.sexp"),
                 "--brute-count", "valid"])
    assert code == 0
    assert capsys.readouterr().out.strip() == "2"


def test_oracle_count_classes(project_dir, capsys):
    code = main(["oracle", "--instance", str(project_dir / "instance.sexp"),
                 "--count-classes"])
    assert code == 0
    assert capsys.readouterr().out.strip() == "2"


def test_oracle_bad_pivot(project_dir, capsys):
    code = main(["oracle", "--instance", str(project_dir / "instance.sexp"),
                 "--count-classes", "--pivot", "9"])
    assert code == 3


def test_load_instance_depth_override(project_dir):
    setup = load_instance(project_dir / "instance.sexp", depth=5)
    assert setup.instance.depth == 5
    assert setup.instance.deterministic is True


def test_bench_suite(project_dir, tmp_path, capsys):
    code = main(["bench", str(project_dir.parent), "--json", str(tmp_path / "suite.json")])
    assert code == 0
    out = capsys.readouterr().out
    assert "chooser" in out and "QHP-verified" in out
    data = json.loads((tmp_path / "suite.json").read_text())
    assert data["suite"][0]["project"] == "chooser"


def test_bench_empty_suite_warns(tmp_path, capsys):
    code = main(["bench", str(tmp_path)])
    assert code == 0
    captured = capsys.readouterr()
    assert "warning" in captured.err
    assert "(empty suite)" in captured.out
