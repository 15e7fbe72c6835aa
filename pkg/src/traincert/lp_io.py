"""Constraint systems and their LP-format serialization.

The in-memory representation is deliberately plain: named variables with
finite bounds, sparse linear rows, and quadratic rows whose nonlinearity
is a list of bilinear terms.  ``emit_lp_file`` writes the system in a
documented subset of the LP file format (Minimize/Maximize, Subject To
with bracketed bilinear terms, Bounds, Binaries, End) and
``parse_lp_file`` reads the same subset back, so emit -> parse -> emit
is a byte-level fixpoint.  ``check_feasible`` evaluates a concrete
assignment against every row, replacing an external solver in tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

__all__ = [
    "ConstraintSystem",
    "FeasibilityReport",
    "LinearConstraint",
    "Objective",
    "QuadraticConstraint",
    "RowViolation",
    "SystemBuilder",
    "SystemMetadata",
    "Variable",
    "check_feasible",
    "complete_assignment",
    "emit_lp_file",
    "parse_lp_file",
]

SENSES = ("<=", ">=", "=")

CONTINUOUS = "continuous"
BINARY = "binary"


@dataclass(frozen=True)
class Variable:
    name: str
    kind: str
    lower: float
    upper: float

    def __post_init__(self):
        if self.kind not in (CONTINUOUS, BINARY):
            raise ValueError(f"unknown variable kind {self.kind!r}")
        if self.kind == BINARY and (self.lower, self.upper) != (0.0, 1.0):
            raise ValueError(f"binary variable {self.name} must have bounds [0, 1]")
        if not self.lower <= self.upper:
            raise ValueError(f"empty bound interval for {self.name}")


@dataclass(frozen=True)
class LinearConstraint:
    name: str
    terms: tuple[tuple[float, str], ...]
    sense: str
    rhs: float

    def __post_init__(self):
        if self.sense not in SENSES:
            raise ValueError(f"unknown sense {self.sense!r}")


@dataclass(frozen=True)
class QuadraticConstraint:
    name: str
    terms: tuple[tuple[float, str], ...]
    bilinear: tuple[tuple[float, str, str], ...]
    sense: str
    rhs: float

    def __post_init__(self):
        if self.sense not in SENSES:
            raise ValueError(f"unknown sense {self.sense!r}")
        if not self.bilinear:
            raise ValueError("quadratic constraint without bilinear terms")


@dataclass(frozen=True)
class Objective:
    sense: str  # "minimize" | "maximize"
    terms: tuple[tuple[float, str], ...]

    def __post_init__(self):
        if self.sense not in ("minimize", "maximize"):
            raise ValueError(f"unknown objective sense {self.sense!r}")


@dataclass(frozen=True)
class SystemMetadata:
    """Provenance the LP text cannot carry.

    ``aux_products`` lists (product_var, factor_a, factor_b) triples
    introduced by McCormick linearization, letting a concrete assignment
    be completed mechanically (product_var := a * b).
    """

    window: tuple[int, int] = (0, 0)
    relaxation: str = "miqcp"
    aux_products: tuple[tuple[str, str, str], ...] = field(default=())


@dataclass(frozen=True)
class ConstraintSystem:
    variables: tuple[Variable, ...]
    linear: tuple[LinearConstraint, ...]
    quadratic: tuple[QuadraticConstraint, ...]
    objective: Objective
    metadata: SystemMetadata = field(default_factory=SystemMetadata)

    def __post_init__(self):
        declared = {v.name for v in self.variables}
        if len(declared) != len(self.variables):
            raise ValueError("duplicate variable declaration")
        for row in self.linear:
            for _, name in row.terms:
                if name not in declared:
                    raise ValueError(f"row {row.name} references undeclared {name}")
        for row in self.quadratic:
            for _, name in row.terms:
                if name not in declared:
                    raise ValueError(f"row {row.name} references undeclared {name}")
            for _, a, b in row.bilinear:
                if a not in declared or b not in declared:
                    raise ValueError(f"row {row.name} references undeclared factors")
        for _, name in self.objective.terms:
            if name not in declared:
                raise ValueError(f"objective references undeclared {name}")
        if self.metadata.relaxation in ("milp", "lp") and self.quadratic:
            raise ValueError(f"{self.metadata.relaxation} system has quadratic rows")

    @property
    def n_variables(self) -> int:
        return len(self.variables)

    @property
    def n_binaries(self) -> int:
        return sum(v.kind == BINARY for v in self.variables)

    @property
    def n_linear(self) -> int:
        return len(self.linear)

    @property
    def n_quadratic(self) -> int:
        return len(self.quadratic)

    def variable(self, name: str) -> Variable:
        for v in self.variables:
            if v.name == name:
                return v
        raise KeyError(name)


class SystemBuilder:
    """Mutable accumulator; ``seal`` produces the immutable system."""

    def __init__(self):
        self._variables: list[Variable] = []
        self._seen: set[str] = set()
        self._linear: list[LinearConstraint] = []
        self._quadratic: list[QuadraticConstraint] = []
        self._rownames: set[str] = set()
        self._objective: Objective | None = None

    def add_variable(self, name: str, kind: str, lower: float, upper: float) -> str:
        if name in self._seen:
            raise ValueError(f"duplicate variable {name}")
        self._seen.add(name)
        self._variables.append(Variable(name, kind, float(lower), float(upper)))
        return name

    def has_variable(self, name: str) -> bool:
        return name in self._seen

    def _check_rowname(self, name: str):
        if name in self._rownames:
            raise ValueError(f"duplicate row name {name}")
        self._rownames.add(name)

    def add_linear(self, name, terms, sense, rhs):
        self._check_rowname(name)
        self._linear.append(
            LinearConstraint(
                name, tuple((float(c), v) for c, v in terms), sense, float(rhs)
            )
        )

    def add_quadratic(self, name, terms, bilinear, sense, rhs):
        self._check_rowname(name)
        self._quadratic.append(
            QuadraticConstraint(
                name,
                tuple((float(c), v) for c, v in terms),
                tuple((float(c), a, b) for c, a, b in bilinear),
                sense,
                float(rhs),
            )
        )

    def add_row(self, name, terms, bilinear, sense, rhs):
        """Quadratic when bilinear terms are present, else linear."""
        if bilinear:
            self.add_quadratic(name, terms, bilinear, sense, rhs)
        else:
            self.add_linear(name, terms, sense, rhs)

    def set_objective(self, sense, terms):
        self._objective = Objective(sense, tuple((float(c), v) for c, v in terms))

    def relax_binaries(self):
        self._variables = [
            Variable(v.name, CONTINUOUS, v.lower, v.upper)
            if v.kind == BINARY
            else v
            for v in self._variables
        ]

    def seal(self, metadata: SystemMetadata) -> ConstraintSystem:
        if self._objective is None:
            raise ValueError("objective not set")
        return ConstraintSystem(
            tuple(self._variables),
            tuple(self._linear),
            tuple(self._quadratic),
            self._objective,
            metadata,
        )


# ---------------------------------------------------------------------------
# LP-format emission


def _num(x: float) -> str:
    return "%.17g" % x


def _signed_term(coeff: float, body: str) -> str:
    if coeff == 0.0:
        coeff = 0.0  # -0.0 satisfies >= 0 and would print as "+-0"
    if coeff >= 0 or coeff != coeff:  # NaN falls through to the + branch
        return f"+{_num(coeff)} {body}"
    return f"-{_num(-coeff)} {body}"


def _row_expr(terms, bilinear=()) -> str:
    parts = [_signed_term(c, v) for c, v in terms]
    if bilinear:
        inner = " ".join(_signed_term(c, f"{a} * {b}") for c, a, b in bilinear)
        parts.append(f"[ {inner} ]")
    return " ".join(parts)


def emit_lp_file(cs: ConstraintSystem) -> str:
    """Serialize the system; deterministic, UTF-8, LF line endings.

    Numbers use 17 significant digits so doubles survive a round trip.
    Binary variables get no Bounds line (the Binaries section implies
    [0, 1]).
    """
    lines = []
    lines.append("Minimize" if cs.objective.sense == "minimize" else "Maximize")
    lines.append(f" obj: {_row_expr(cs.objective.terms)}")
    lines.append("Subject To")
    for row in cs.linear:
        lines.append(f" {row.name}: {_row_expr(row.terms)} {row.sense} {_num(row.rhs)}")
    for row in cs.quadratic:
        lines.append(
            f" {row.name}: {_row_expr(row.terms, row.bilinear)} {row.sense} {_num(row.rhs)}"
        )
    lines.append("Bounds")
    for v in cs.variables:
        if v.kind == BINARY:
            continue
        if v.lower == v.upper:
            lines.append(f" {v.name} = {_num(v.lower)}")
        else:
            lines.append(f" {_num(v.lower)} <= {v.name} <= {_num(v.upper)}")
    binaries = [v for v in cs.variables if v.kind == BINARY]
    if binaries:
        lines.append("Binaries")
        for v in binaries:
            lines.append(f" {v.name}")
    lines.append("End")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# LP-format parsing (round-trip subset only)


def _parse_terms(tokens: list[str]):
    """Split a token stream into linear terms, bilinear terms, sense, rhs."""
    terms = []
    bilinear = []
    i = 0
    while i < len(tokens) and tokens[i] not in SENSES:
        tok = tokens[i]
        if tok == "[":
            i += 1
            while tokens[i] != "]":
                coeff = float(tokens[i])
                a = tokens[i + 1]
                if tokens[i + 2] != "*":
                    raise ValueError("malformed bilinear term")
                b = tokens[i + 3]
                bilinear.append((coeff, a, b))
                i += 4
            i += 1  # consume "]"
        else:
            terms.append((float(tok), tokens[i + 1]))
            i += 2
    if i >= len(tokens):
        raise ValueError("row missing sense")
    sense = tokens[i]
    rhs = float(tokens[i + 1])
    return terms, bilinear, sense, rhs


def parse_lp_file(text: str) -> ConstraintSystem:
    """Parse text produced by :func:`emit_lp_file`.

    Only the emitted subset is accepted.  Metadata is not representable
    in LP text, so the result carries a default metadata block; binaries
    are appended after continuous variables, which re-emits identically
    because the Bounds and Binaries sections are serialized separately.
    """
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines = lines[:-1]
    it = iter(enumerate(lines))

    def fail(lineno, msg):
        raise ValueError(f"line {lineno + 1}: {msg}")

    lineno, header = next(it)
    if header not in ("Minimize", "Maximize"):
        fail(lineno, f"expected objective section, got {header!r}")
    obj_sense = "minimize" if header == "Minimize" else "maximize"
    lineno, obj_line = next(it)
    name, _, body = obj_line.strip().partition(": ")
    if name != "obj":
        fail(lineno, "expected obj row")
    obj_terms, obj_bil = _parse_obj_terms(body)
    if obj_bil:
        fail(lineno, "quadratic objectives are not supported")

    lineno, sect = next(it)
    if sect != "Subject To":
        fail(lineno, "expected Subject To")

    linear = []
    quadratic = []
    bounds_rows = []
    binaries = []
    state = "rows"
    for lineno, line in it:
        if line == "Bounds":
            state = "bounds"
            continue
        if line == "Binaries":
            state = "binaries"
            continue
        if line == "End":
            state = "end"
            break
        body = line.strip()
        if state == "rows":
            name, sep, rest = body.partition(": ")
            if not sep:
                fail(lineno, "row missing name")
            terms, bil, sense, rhs = _parse_terms(rest.split(" "))
            if bil:
                quadratic.append(
                    QuadraticConstraint(name, tuple(terms), tuple(bil), sense, rhs)
                )
            else:
                linear.append(LinearConstraint(name, tuple(terms), sense, rhs))
        elif state == "bounds":
            toks = body.split(" ")
            if len(toks) == 3 and toks[1] == "=":
                bounds_rows.append((toks[0], float(toks[2]), float(toks[2])))
            elif len(toks) == 5 and toks[1] == "<=" and toks[3] == "<=":
                bounds_rows.append((toks[2], float(toks[0]), float(toks[4])))
            else:
                fail(lineno, f"malformed bounds line {body!r}")
        elif state == "binaries":
            binaries.append(body)
        else:
            fail(lineno, "content after End")
    if state != "end":
        raise ValueError("missing End marker")

    variables = [Variable(n, CONTINUOUS, lo, hi) for n, lo, hi in bounds_rows]
    variables += [Variable(n, BINARY, 0.0, 1.0) for n in binaries]
    return ConstraintSystem(
        tuple(variables),
        tuple(linear),
        tuple(quadratic),
        Objective(obj_sense, tuple(obj_terms)),
    )


def _parse_obj_terms(body: str):
    tokens = body.split(" ")
    terms = []
    bilinear = []
    i = 0
    while i < len(tokens):
        if tokens[i] == "[":
            raise ValueError("quadratic objective")
        terms.append((float(tokens[i]), tokens[i + 1]))
        i += 2
    return terms, bilinear


# ---------------------------------------------------------------------------
# feasibility checking


@dataclass(frozen=True)
class RowViolation:
    row: str
    residual: float


@dataclass(frozen=True)
class FeasibilityReport:
    violations: tuple[RowViolation, ...]

    @property
    def feasible(self) -> bool:
        return not self.violations

    @property
    def worst(self) -> float:
        return max((v.residual for v in self.violations), default=0.0)


def complete_assignment(
    cs: ConstraintSystem, assignment: Mapping[str, float]
) -> dict[str, float]:
    """Fill in McCormick product variables from their factors."""
    out = dict(assignment)
    for w, a, b in cs.metadata.aux_products:
        out[w] = out[a] * out[b]
    return out


def check_feasible(
    cs: ConstraintSystem, assignment: Mapping[str, float], tol: float
) -> FeasibilityReport:
    """Evaluate every row, bound and integrality condition at tol.

    Raises KeyError when the assignment misses a declared variable.  The
    report lists one entry per violated condition with the positive
    violation magnitude.
    """
    values = {}
    for v in cs.variables:
        if v.name not in assignment:
            raise KeyError(f"assignment missing variable {v.name}")
        values[v.name] = float(assignment[v.name])

    violations = []
    for v in cs.variables:
        x = values[v.name]
        excess = max(v.lower - x, x - v.upper)
        if excess > tol:
            violations.append(RowViolation(f"bound:{v.name}", excess))
        if v.kind == BINARY:
            drift = min(abs(x), abs(x - 1.0))
            if drift > tol:
                violations.append(RowViolation(f"integrality:{v.name}", drift))

    def eval_row(terms, bilinear=()):
        lhs = 0.0
        for c, name in terms:
            lhs += c * values[name]
        for c, a, b in bilinear:
            lhs += c * values[a] * values[b]
        return lhs

    for row in cs.linear:
        _check_row(violations, row.name, eval_row(row.terms), row.sense, row.rhs, tol)
    for row in cs.quadratic:
        _check_row(
            violations,
            row.name,
            eval_row(row.terms, row.bilinear),
            row.sense,
            row.rhs,
            tol,
        )
    return FeasibilityReport(tuple(violations))


def _check_row(violations, name, lhs, sense, rhs, tol):
    if sense == "<=":
        excess = lhs - rhs
    elif sense == ">=":
        excess = rhs - lhs
    else:
        excess = abs(lhs - rhs)
    if excess > tol:
        violations.append(RowViolation(name, excess))
