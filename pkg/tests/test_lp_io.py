"""LP serialization: golden files, round trips, feasibility checking."""

import math
from pathlib import Path

import pytest

from traincert.lp_io import (
    ConstraintSystem,
    LinearConstraint,
    Objective,
    QuadraticConstraint,
    SystemBuilder,
    SystemMetadata,
    Variable,
    check_feasible,
    complete_assignment,
    emit_lp_file,
    parse_lp_file,
)

GOLDEN = Path(__file__).parent / "golden"


def tiny_milp() -> ConstraintSystem:
    return ConstraintSystem(
        variables=(
            Variable("x", "continuous", 0.0, 2.0),
            Variable("y", "continuous", 1.0, 1.0),
            Variable("d", "binary", 0.0, 1.0),
        ),
        linear=(
            LinearConstraint("r1", ((1.0, "x"), (-1.0, "y")), "<=", 0.5),
            LinearConstraint("r2", ((3.0, "x"), (1.0, "d")), ">=", 1.0),
            LinearConstraint("r3", ((1.0, "d"),), "=", 1.0),
        ),
        quadratic=(),
        objective=Objective("minimize", ((1.0, "x"), (2.5, "y"))),
    )


def bilinear_qcp() -> ConstraintSystem:
    # w = a * b as an equality with one bracketed bilinear term
    return ConstraintSystem(
        variables=(
            Variable("a", "continuous", -1.0, 1.0),
            Variable("b", "continuous", 0.0, 1.0),
            Variable("w", "continuous", -1.0, 1.0),
        ),
        linear=(LinearConstraint("lin", ((1.0, "a"), (1.0, "b")), "<=", 1.5),),
        quadratic=(
            QuadraticConstraint("prod", ((1.0, "w"),), ((-1.0, "a", "b"),), "=", 0.0),
        ),
        objective=Objective("maximize", ((1.0, "w"),)),
    )


def float_precision() -> ConstraintSystem:
    # 0.1 and 0.2 need all 17 digits to survive text round trips
    return ConstraintSystem(
        variables=(
            Variable("u", "continuous", 0.1, 0.1 + 0.2),
            Variable("v", "binary", 0.0, 1.0),
        ),
        linear=(LinearConstraint("r", ((0.1, "u"), (1.0, "v")), ">=", 0.2),),
        quadratic=(),
        objective=Objective("minimize", ((-0.1, "u"),)),
    )


FIXTURES = {
    "tiny_milp": tiny_milp,
    "bilinear_qcp": bilinear_qcp,
    "float_precision": float_precision,
}


@pytest.mark.parametrize("name", sorted(FIXTURES))
def test_golden_files_byte_equal(name):
    text = emit_lp_file(FIXTURES[name]())
    golden = (GOLDEN / f"{name}.lp").read_bytes()
    assert text.encode("utf-8") == golden


@pytest.mark.parametrize("name", sorted(FIXTURES))
def test_emit_parse_emit_fixpoint(name):
    first = emit_lp_file(FIXTURES[name]())
    again = emit_lp_file(parse_lp_file(first))
    assert again == first


@pytest.mark.parametrize("name", sorted(FIXTURES))
def test_parse_recovers_structure(name):
    cs = FIXTURES[name]()
    back = parse_lp_file(emit_lp_file(cs))
    assert back.objective == cs.objective
    assert back.linear == cs.linear
    assert back.quadratic == cs.quadratic
    # parse orders continuous-then-binary, which the fixtures already use
    assert back.variables == cs.variables


def test_grammar_rules():
    text = emit_lp_file(tiny_milp())
    lines = text.split("\n")
    assert lines[0] == "Minimize"
    assert "Subject To" in lines and "Bounds" in lines and "Binaries" in lines
    assert lines[-2] == "End" and lines[-1] == ""
    # binaries never get Bounds lines
    bounds = lines[lines.index("Bounds") + 1 : lines.index("Binaries")]
    assert all("d" not in b.split() for b in bounds)
    # fixed variables use the "name = value" form
    assert " y = 1" in lines
    # no Binaries section when there are none
    assert "Binaries" not in emit_lp_file(bilinear_qcp())


def test_bilinear_term_syntax():
    text = emit_lp_file(bilinear_qcp())
    assert "[ -1 a * b ]" in text


def test_numbers_use_17_significant_digits():
    text = emit_lp_file(float_precision())
    assert "0.10000000000000001" in text
    assert "0.30000000000000004" in text


def test_negative_zero_coefficient_round_trips():
    # -0.0 compares >= 0, so a naive emitter writes the unparseable "+-0"
    cs = ConstraintSystem(
        (Variable("x", "continuous", 0.0, 1.0),),
        (LinearConstraint("r", ((-0.0, "x"),), "<=", 1.0),),
        (),
        Objective("minimize", ((1.0, "x"),)),
    )
    text = emit_lp_file(cs)
    assert "+0 x" in text and "+-" not in text
    assert emit_lp_file(parse_lp_file(text)) == text


def test_parse_rejects_malformed():
    with pytest.raises(ValueError):
        parse_lp_file("Minimize\n obj: +1 x\nSubject To\nBounds\n 0 <= x <= 1\n")
    with pytest.raises(ValueError):  # missing End
        parse_lp_file("Frobnicate\n")
    good = emit_lp_file(tiny_milp())
    with pytest.raises(ValueError):
        parse_lp_file(good.replace(" <= ", " <? "))


def test_system_validation():
    with pytest.raises(ValueError):
        Variable("z", "integer", 0.0, 1.0)
    with pytest.raises(ValueError):
        Variable("z", "binary", 0.0, 2.0)
    with pytest.raises(ValueError):
        Variable("z", "continuous", 1.0, 0.0)
    with pytest.raises(ValueError):
        LinearConstraint("r", ((1.0, "x"),), "==", 0.0)
    with pytest.raises(ValueError):
        QuadraticConstraint("q", (), (), "<=", 0.0)  # no bilinear part
    with pytest.raises(ValueError):  # undeclared variable in a row
        ConstraintSystem(
            (Variable("x", "continuous", 0.0, 1.0),),
            (LinearConstraint("r", ((1.0, "ghost"),), "<=", 0.0),),
            (),
            Objective("minimize", ((1.0, "x"),)),
        )
    with pytest.raises(ValueError):  # lp relaxation cannot carry quadratic rows
        ConstraintSystem(
            (
                Variable("a", "continuous", 0.0, 1.0),
                Variable("w", "continuous", 0.0, 1.0),
            ),
            (),
            (QuadraticConstraint("q", ((1.0, "w"),), ((-1.0, "a", "a"),), "=", 0.0),),
            Objective("minimize", ((1.0, "w"),)),
            SystemMetadata(relaxation="lp"),
        )


def test_builder_guards():
    b = SystemBuilder()
    b.add_variable("x", "continuous", 0.0, 1.0)
    with pytest.raises(ValueError):
        b.add_variable("x", "continuous", 0.0, 1.0)
    b.add_linear("r", [(1.0, "x")], "<=", 1.0)
    with pytest.raises(ValueError):
        b.add_linear("r", [(1.0, "x")], "<=", 2.0)
    with pytest.raises(ValueError):  # objective unset
        b.seal(SystemMetadata())
    b.set_objective("minimize", [(1.0, "x")])
    assert b.seal(SystemMetadata()).n_variables == 1


def test_relax_binaries():
    b = SystemBuilder()
    b.add_variable("d", "binary", 0.0, 1.0)
    b.set_objective("minimize", [(1.0, "d")])
    b.relax_binaries()
    cs = b.seal(SystemMetadata(relaxation="lp"))
    assert cs.n_binaries == 0
    assert cs.variable("d").kind == "continuous"
    assert (cs.variable("d").lower, cs.variable("d").upper) == (0.0, 1.0)


def test_check_feasible_clean_assignment():
    cs = tiny_milp()
    report = check_feasible(cs, {"x": 0.5, "y": 1.0, "d": 1.0}, tol=1e-9)
    assert report.feasible
    assert report.worst == 0.0


def test_check_feasible_reports_residuals():
    cs = tiny_milp()
    # x breaks its upper bound by 1 and pushes r1 over by 2.5
    report = check_feasible(cs, {"x": 3.0, "y": 1.0, "d": 1.0}, tol=1e-9)
    assert not report.feasible
    names = {v.row: v.residual for v in report.violations}
    assert names["bound:x"] == pytest.approx(1.0)
    assert names["r1"] == pytest.approx(1.5)
    # fractional binary beyond tol is an integrality violation
    report = check_feasible(cs, {"x": 0.5, "y": 1.0, "d": 0.5}, tol=1e-9)
    assert any(v.row == "integrality:d" for v in report.violations)
    assert check_feasible(cs, {"x": 0.5, "y": 1.0, "d": 0.5}, tol=0.5).feasible


def test_check_feasible_missing_variable():
    with pytest.raises(KeyError):
        check_feasible(tiny_milp(), {"x": 0.0, "y": 1.0}, tol=1e-9)


def test_check_feasible_quadratic_row():
    cs = bilinear_qcp()
    ok = {"a": 0.5, "b": 0.5, "w": 0.25}
    assert check_feasible(cs, ok, tol=1e-12).feasible
    bad = {"a": 0.5, "b": 0.5, "w": 0.5}  # w != a * b
    report = check_feasible(cs, bad, tol=1e-12)
    assert any(v.row == "prod" and math.isclose(v.residual, 0.25) for v in report.violations)


def test_complete_assignment_fills_products():
    cs = ConstraintSystem(
        variables=(
            Variable("a", "continuous", 0.0, 1.0),
            Variable("b", "continuous", 0.0, 1.0),
            Variable("w", "continuous", 0.0, 1.0),
        ),
        linear=(),
        quadratic=(),
        objective=Objective("minimize", ((1.0, "w"),)),
        metadata=SystemMetadata(aux_products=(("w", "a", "b"),)),
    )
    out = complete_assignment(cs, {"a": 0.25, "b": 0.5})
    assert out["w"] == 0.125
