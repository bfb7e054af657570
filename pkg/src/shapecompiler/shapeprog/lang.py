"""Syntax tree, validation, parser, and printer for the shape DSL.

Surface grammar, one statement per line in canonical form:

    draw('<Part>','<Prim>',P=(x,y,z),G=(g1[,g2[,g3]]))
    for(i<count,'T',u=(dx,dy,dz)){ ... }
    for(i<count,'R',axis=<X|Y|Z>){ ... }
    reflect(axis=<X|Y|Z>){ ... }

Coordinates are integer grid cells in [-20, 20]; the z axis points up.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..errors import ContractError

PARTS = ("Top", "Leg", "Back", "Arm", "Base", "Seat")
PRIMITIVES = ("Square", "Circle", "Bar")
AXES = ("X", "Y", "Z")

PARAM_MIN, PARAM_MAX = -20, 20
LOOP_MIN, LOOP_MAX = 1, 8
MAX_DEPTH = 2

# (part, primitive) -> number of geometry parameters
DRAW_FORMS = {
    ("Top", "Square"): 2,   # thickness, side
    ("Top", "Circle"): 2,   # thickness, radius
    ("Leg", "Bar"): 3,      # dx, dy, dz extents
    ("Back", "Bar"): 3,
    ("Arm", "Bar"): 3,
    ("Base", "Bar"): 3,
    ("Seat", "Bar"): 3,
}


class ParseError(ContractError):
    def __init__(self, line, col, detail):
        super().__init__(f"line {line}, col {col}: {detail}")
        self.line = line
        self.col = col


@dataclass(frozen=True)
class Draw:
    part: str
    primitive: str
    p: tuple
    g: tuple


@dataclass(frozen=True)
class ForTranslate:
    count: int
    delta: tuple
    body: tuple


@dataclass(frozen=True)
class ForRotate:
    count: int
    axis: str
    body: tuple


@dataclass(frozen=True)
class Reflect:
    axis: str
    body: tuple


@dataclass(frozen=True)
class Program:
    statements: tuple = ()


def _check_range(value, label):
    if not PARAM_MIN <= value <= PARAM_MAX:
        raise ContractError(
            f"{label} out of range: {value} not in [{PARAM_MIN}, {PARAM_MAX}]")


def validate_program(program):
    """Check every statement invariant; raises ContractError on the first
    violation."""

    def walk(stmts, depth):
        for stmt in stmts:
            if isinstance(stmt, Draw):
                if (stmt.part, stmt.primitive) not in DRAW_FORMS:
                    raise ContractError(
                        f"invalid part/primitive pair {stmt.part}/{stmt.primitive}")
                want = DRAW_FORMS[(stmt.part, stmt.primitive)]
                if len(stmt.p) != 3:
                    raise ContractError(f"P must have 3 entries, got {len(stmt.p)}")
                if len(stmt.g) != want:
                    raise ContractError(
                        f"{stmt.part}/{stmt.primitive} takes {want} geometry "
                        f"parameters, got {len(stmt.g)}")
                for i, v in enumerate(stmt.p + stmt.g, start=1):
                    _check_range(int(v), f"parameter {i}")
            elif isinstance(stmt, (ForTranslate, ForRotate)):
                if depth + 1 > MAX_DEPTH:
                    raise ContractError(f"loop nesting exceeds depth {MAX_DEPTH}")
                if not LOOP_MIN <= stmt.count <= LOOP_MAX:
                    raise ContractError(
                        f"loop count {stmt.count} not in [{LOOP_MIN}, {LOOP_MAX}]")
                if isinstance(stmt, ForTranslate):
                    if len(stmt.delta) != 3:
                        raise ContractError("translation delta must have 3 entries")
                    for i, v in enumerate(stmt.delta, start=1):
                        _check_range(int(v), f"parameter {i}")
                else:
                    if stmt.axis not in AXES:
                        raise ContractError(f"invalid axis {stmt.axis!r}")
                walk(stmt.body, depth + 1)
            elif isinstance(stmt, Reflect):
                if depth + 1 > MAX_DEPTH:
                    raise ContractError(f"block nesting exceeds depth {MAX_DEPTH}")
                if stmt.axis not in AXES:
                    raise ContractError(f"invalid axis {stmt.axis!r}")
                walk(stmt.body, depth + 1)
            else:
                raise ContractError(f"unknown statement {type(stmt).__name__}")

    walk(program.statements, 0)
    return program


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

class _Scanner:
    def __init__(self, text):
        self.text = text
        self.pos = 0
        self.line = 1
        self.col = 1

    def error(self, detail):
        raise ParseError(self.line, self.col, detail)

    def _advance(self, n=1):
        for _ in range(n):
            if self.pos < len(self.text) and self.text[self.pos] == "\n":
                self.line += 1
                self.col = 1
            else:
                self.col += 1
            self.pos += 1

    def skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self._advance()

    def peek(self):
        self.skip_ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def at_end(self):
        return self.peek() == ""

    def expect(self, char):
        if self.peek() != char:
            got = self.peek() or "end of input"
            self.error(f"expected {char!r}, found {got!r}")
        self._advance()

    def expect_word(self, word):
        got = self.word()
        if got != word:
            self.error(f"expected {word!r}, found {got!r}")

    def word(self):
        self.skip_ws()
        start = self.pos
        while self.pos < len(self.text) and self.text[self.pos].isalpha():
            self._advance()
        if self.pos == start:
            self.error("expected a name")
        return self.text[start:self.pos]

    def quoted(self):
        self.expect("'")
        start = self.pos
        while self.pos < len(self.text) and self.text[self.pos] != "'":
            self._advance()
        if self.pos >= len(self.text):
            self.error("unterminated string")
        value = self.text[start:self.pos]
        self._advance()
        return value

    def integer(self, label):
        self.skip_ws()
        start = self.pos
        line, col = self.line, self.col
        if self.pos < len(self.text) and self.text[self.pos] == "-":
            self._advance()
        while self.pos < len(self.text) and self.text[self.pos].isdigit():
            self._advance()
        token = self.text[start:self.pos]
        if token in ("", "-"):
            self.error(f"expected an integer for {label}")
        value = int(token)
        if not PARAM_MIN <= value <= PARAM_MAX:
            raise ParseError(line, col,
                             f"range error at {label}: {value} not in "
                             f"[{PARAM_MIN}, {PARAM_MAX}]")
        return value


def _parse_tuple(sc, label_base, count_min, count_max, start=1):
    sc.expect("(")
    values = [sc.integer(f"{label_base} {start}")]
    i = start + 1
    while sc.peek() == ",":
        sc.expect(",")
        values.append(sc.integer(f"{label_base} {i}"))
        i += 1
    sc.expect(")")
    if not count_min <= len(values) <= count_max:
        sc.error(f"expected {count_min}..{count_max} values, got {len(values)}")
    return tuple(values)


def _parse_block(sc, depth):
    sc.expect("{")
    body = []
    while sc.peek() != "}":
        if sc.at_end():
            sc.error("unterminated block")
        body.append(_parse_statement(sc, depth))
    sc.expect("}")
    return tuple(body)


def _parse_statement(sc, depth):
    word = sc.word()
    if word == "draw":
        sc.expect("(")
        part = sc.quoted()
        if part not in PARTS:
            sc.error(f"unknown part {part!r}")
        sc.expect(",")
        prim = sc.quoted()
        if prim not in PRIMITIVES:
            sc.error(f"unknown primitive {prim!r}")
        if (part, prim) not in DRAW_FORMS:
            sc.error(f"invalid part/primitive pair {part}/{prim}")
        sc.expect(",")
        sc.expect_word("P")
        sc.expect("=")
        p = _parse_tuple(sc, "parameter", 3, 3)
        sc.expect(",")
        sc.expect_word("G")
        sc.expect("=")
        want = DRAW_FORMS[(part, prim)]
        g = _parse_tuple(sc, "parameter", 1, 3, start=4)
        if len(g) != want:
            sc.error(f"{part}/{prim} takes {want} geometry parameters, got {len(g)}")
        sc.expect(")")
        return Draw(part, prim, p, g)
    if word == "for":
        if depth >= MAX_DEPTH:
            sc.error(f"loop nesting exceeds depth {MAX_DEPTH}")
        sc.expect("(")
        sc.expect_word("i")
        sc.expect("<")
        count = sc.integer("loop count")
        if not LOOP_MIN <= count <= LOOP_MAX:
            sc.error(f"loop count {count} not in [{LOOP_MIN}, {LOOP_MAX}]")
        sc.expect(",")
        kind = sc.quoted()
        if kind == "T":
            sc.expect(",")
            sc.expect_word("u")
            sc.expect("=")
            delta = _parse_tuple(sc, "parameter", 3, 3)
            sc.expect(")")
            return ForTranslate(count, delta, _parse_block(sc, depth + 1))
        if kind == "R":
            sc.expect(",")
            sc.expect_word("axis")
            sc.expect("=")
            axis = sc.word()
            if axis not in AXES:
                sc.error(f"invalid axis {axis!r}")
            sc.expect(")")
            return ForRotate(count, axis, _parse_block(sc, depth + 1))
        sc.error(f"unknown loop kind {kind!r}, expected 'T' or 'R'")
    if word == "reflect":
        if depth >= MAX_DEPTH:
            sc.error(f"block nesting exceeds depth {MAX_DEPTH}")
        sc.expect("(")
        sc.expect_word("axis")
        sc.expect("=")
        axis = sc.word()
        if axis not in AXES:
            sc.error(f"invalid axis {axis!r}")
        sc.expect(")")
        return Reflect(axis, _parse_block(sc, depth + 1))
    sc.error(f"unknown statement {word!r}")


def parse(text):
    """Parse DSL source into a validated Program."""
    sc = _Scanner(text)
    statements = []
    while not sc.at_end():
        statements.append(_parse_statement(sc, 0))
    return validate_program(Program(tuple(statements)))


def print_program(program):
    """Canonical text form: one statement per line, two-space indents."""
    lines = []

    def emit(stmts, depth):
        pad = "  " * depth
        for stmt in stmts:
            if isinstance(stmt, Draw):
                p = ",".join(str(v) for v in stmt.p)
                g = ",".join(str(v) for v in stmt.g)
                lines.append(f"{pad}draw('{stmt.part}','{stmt.primitive}',"
                             f"P=({p}),G=({g}))")
            elif isinstance(stmt, ForTranslate):
                d = ",".join(str(v) for v in stmt.delta)
                lines.append(f"{pad}for(i<{stmt.count},'T',u=({d})){{")
                emit(stmt.body, depth + 1)
                lines.append(f"{pad}}}")
            elif isinstance(stmt, ForRotate):
                lines.append(f"{pad}for(i<{stmt.count},'R',axis={stmt.axis}){{")
                emit(stmt.body, depth + 1)
                lines.append(f"{pad}}}")
            elif isinstance(stmt, Reflect):
                lines.append(f"{pad}reflect(axis={stmt.axis}){{")
                emit(stmt.body, depth + 1)
                lines.append(f"{pad}}}")
            else:
                raise ContractError(f"unknown statement {type(stmt).__name__}")

    emit(program.statements, 0)
    return "\n".join(lines) + ("\n" if lines else "")
