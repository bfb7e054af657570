"""Exact integer codec between programs and fixed-width token streams.

Layout: every statement header widens to 8 raw integers
[opcode, p1..p7]; parameters shift by +20 into a parameter sub-vocabulary;
the stream ends with one END token and PAD fills the rest. The vocabulary
is 13 opcodes + 41 parameter values + 24 reserved ids = 78.

The same structural rules drive both decoding (strict, with slot-level
errors) and the per-position validity masks used for constrained sampling,
so any sampled stream decodes.
"""

from __future__ import annotations

import numpy as np

from ..errors import CapacityError, ContractError, DecodeError
from .lang import (AXES, LOOP_MAX, LOOP_MIN, MAX_DEPTH, Draw, ForRotate,
                   ForTranslate, Program, Reflect, validate_program)

STMT_WIDTH = 8
N_PROGRAM = 240

OP_PAD = 0
OP_END = 1
OP_FOR_T = 9
OP_FOR_R = 10
OP_REFLECT = 11
OP_END_BLOCK = 12

DRAW_OPCODES = {
    ("Top", "Circle"): 2,
    ("Top", "Square"): 3,
    ("Leg", "Bar"): 4,
    ("Back", "Bar"): 5,
    ("Arm", "Bar"): 6,
    ("Base", "Bar"): 7,
    ("Seat", "Bar"): 8,
}
OPCODE_DRAWS = {v: k for k, v in DRAW_OPCODES.items()}

N_OPCODES = 13
PARAM_BASE = N_OPCODES          # raw value v maps to PARAM_BASE + v + 20
PARAM_COUNT = 41
VOCAB_SIZE = 78                 # 13 opcodes + 41 parameters + 24 reserved

_PARAM_ZERO = PARAM_BASE + 20   # token for raw value 0


def _param_token(value):
    return PARAM_BASE + int(value) + 20


def _param_value(token, slot):
    if not PARAM_BASE <= token < PARAM_BASE + PARAM_COUNT:
        raise DecodeError(slot, f"token {token} is not a parameter token")
    return token - PARAM_BASE - 20


def encode_statement(stmt):
    """Raw 8-integer row for one statement header (paper-style layout)."""
    if isinstance(stmt, Draw):
        opcode = DRAW_OPCODES.get((stmt.part, stmt.primitive))
        if opcode is None:
            raise ContractError(
                f"no opcode for {stmt.part}/{stmt.primitive}")
        row = [opcode, *stmt.p, *stmt.g]
    elif isinstance(stmt, ForTranslate):
        row = [OP_FOR_T, stmt.count, *stmt.delta]
    elif isinstance(stmt, ForRotate):
        row = [OP_FOR_R, stmt.count, AXES.index(stmt.axis)]
    elif isinstance(stmt, Reflect):
        row = [OP_REFLECT, AXES.index(stmt.axis)]
    else:
        raise ContractError(f"cannot encode {type(stmt).__name__}")
    row = [int(v) for v in row]
    return row + [0] * (STMT_WIDTH - len(row))


def decode_statement(row):
    """Inverse of encode_statement for header rows (bodies come back empty)."""
    op = row[0]
    params = row[1:]
    if op in OPCODE_DRAWS:
        part, prim = OPCODE_DRAWS[op]
        n_g = 2 if part == "Top" else 3
        return Draw(part, prim, tuple(params[:3]), tuple(params[3:3 + n_g]))
    if op == OP_FOR_T:
        return ForTranslate(params[0], tuple(params[1:4]), ())
    if op == OP_FOR_R:
        return ForRotate(params[0], AXES[params[1]], ())
    if op == OP_REFLECT:
        return Reflect(AXES[params[0]], ())
    raise ContractError(f"not a statement opcode: {op}")


def _rows(program):
    out = []

    def walk(stmts):
        for stmt in stmts:
            out.append(encode_statement(stmt))
            if isinstance(stmt, (ForTranslate, ForRotate, Reflect)):
                walk(stmt.body)
                out.append([OP_END_BLOCK] + [0] * (STMT_WIDTH - 1))

    walk(program.statements)
    return out


def tokenized_length(program):
    """Token count before padding: 8 per row plus the END token."""
    return STMT_WIDTH * len(_rows(program)) + 1


def tokenize(program, length=N_PROGRAM):
    """Fixed-width token stream; exact inverse of detokenize."""
    validate_program(program)
    tokens = []
    for row in _rows(program):
        tokens.append(row[0])
        tokens.extend(_param_token(v) for v in row[1:])
    tokens.append(OP_END)
    if len(tokens) > length:
        raise CapacityError(
            f"program needs {len(tokens)} tokens, code width is {length}")
    tokens.extend([OP_PAD] * (length - len(tokens)))
    return np.array(tokens, dtype=np.int64)


def _expect_zeros(raw, row_base, start):
    for k in range(start, STMT_WIDTH):
        if raw[k] != 0:
            raise DecodeError(row_base + k, f"unused slot must be zero, got {raw[k]}")


def detokenize(code):
    """Decode a token stream back into a Program.

    Strict: every structural defect raises DecodeError naming the offending
    slot. An all-PAD stream decodes to the empty Program.
    """
    code = np.asarray(code).tolist()
    pos = 0
    n = len(code)
    stack = [[]]

    def fail_tail(start, why):
        for k in range(start, n):
            if code[k] != OP_PAD:
                raise DecodeError(k, why)

    while pos < n:
        op = code[pos]
        if op == OP_END:
            if len(stack) != 1:
                raise DecodeError(pos, "END inside an open block")
            fail_tail(pos + 1, "non-PAD token after END")
            break
        if op == OP_PAD:
            fail_tail(pos, "non-PAD token in padding without END")
            if len(stack) != 1:
                raise DecodeError(pos, "stream ends inside an open block")
            break
        if pos + STMT_WIDTH > n:
            raise DecodeError(pos, "truncated statement row")
        if not 2 <= op <= OP_END_BLOCK:
            raise DecodeError(pos, f"expected an opcode, got {op}")
        raw = [op] + [_param_value(code[pos + k], pos + k)
                      for k in range(1, STMT_WIDTH)]
        if op in OPCODE_DRAWS:
            part, prim = OPCODE_DRAWS[op]
            n_g = 2 if part == "Top" else 3
            _expect_zeros(raw, pos, 4 + n_g)
            stack[-1].append(Draw(part, prim, tuple(raw[1:4]),
                                  tuple(raw[4:4 + n_g])))
        elif op == OP_FOR_T:
            if not LOOP_MIN <= raw[1] <= LOOP_MAX:
                raise DecodeError(pos + 1, f"loop count {raw[1]} out of range")
            if len(stack) > MAX_DEPTH:
                raise DecodeError(pos, "block nesting too deep")
            _expect_zeros(raw, pos, 5)
            stack.append([("T", raw[1], tuple(raw[2:5]))])
        elif op == OP_FOR_R:
            if not LOOP_MIN <= raw[1] <= LOOP_MAX:
                raise DecodeError(pos + 1, f"loop count {raw[1]} out of range")
            if raw[2] not in (0, 1, 2):
                raise DecodeError(pos + 2, f"axis {raw[2]} out of range")
            if len(stack) > MAX_DEPTH:
                raise DecodeError(pos, "block nesting too deep")
            _expect_zeros(raw, pos, 3)
            stack.append([("R", raw[1], AXES[raw[2]])])
        elif op == OP_REFLECT:
            if raw[1] not in (0, 1, 2):
                raise DecodeError(pos + 1, f"axis {raw[1]} out of range")
            if len(stack) > MAX_DEPTH:
                raise DecodeError(pos, "block nesting too deep")
            _expect_zeros(raw, pos, 2)
            stack.append([("X", raw[1], AXES[raw[1]])])
        elif op == OP_END_BLOCK:
            if len(stack) == 1:
                raise DecodeError(pos, "END-BLOCK without an open block")
            _expect_zeros(raw, pos, 1)
            block = stack.pop()
            header, body = block[0], tuple(block[1:])
            kind = header[0]
            if kind == "T":
                stmt = ForTranslate(header[1], header[2], body)
            elif kind == "R":
                stmt = ForRotate(header[1], header[2], body)
            else:
                stmt = Reflect(header[2], body)
            stack[-1].append(stmt)
        pos += STMT_WIDTH if op != OP_END else 1
    else:
        if len(stack) != 1:
            raise DecodeError(n - 1, "stream ends inside an open block")
    return validate_program(Program(tuple(stack[0])))


# ---------------------------------------------------------------------------
# per-position validity for constrained sampling
# ---------------------------------------------------------------------------

def _any_param_mask():
    mask = np.zeros(VOCAB_SIZE, dtype=bool)
    mask[PARAM_BASE:PARAM_BASE + PARAM_COUNT] = True
    return mask


_ANY_PARAM = _any_param_mask()
_ZERO_ONLY = np.zeros(VOCAB_SIZE, dtype=bool)
_ZERO_ONLY[_PARAM_ZERO] = True
_COUNTS = np.zeros(VOCAB_SIZE, dtype=bool)
_COUNTS[_PARAM_ZERO + LOOP_MIN:_PARAM_ZERO + LOOP_MAX + 1] = True
_AXES_MASK = np.zeros(VOCAB_SIZE, dtype=bool)
_AXES_MASK[_PARAM_ZERO:_PARAM_ZERO + 3] = True
_PAD_ONLY = np.zeros(VOCAB_SIZE, dtype=bool)
_PAD_ONLY[OP_PAD] = True

# per-opcode slot masks for slots 1..7
_SLOT_MASKS = {}
for (_part, _prim), _op in DRAW_OPCODES.items():
    _n_g = 2 if _part == "Top" else 3
    _SLOT_MASKS[_op] = [_ANY_PARAM] * (3 + _n_g) + [_ZERO_ONLY] * (4 - _n_g)
_SLOT_MASKS[OP_FOR_T] = [_COUNTS, _ANY_PARAM, _ANY_PARAM, _ANY_PARAM,
                         _ZERO_ONLY, _ZERO_ONLY, _ZERO_ONLY]
_SLOT_MASKS[OP_FOR_R] = [_COUNTS, _AXES_MASK] + [_ZERO_ONLY] * 5
_SLOT_MASKS[OP_REFLECT] = [_AXES_MASK] + [_ZERO_ONLY] * 6
_SLOT_MASKS[OP_END_BLOCK] = [_ZERO_ONLY] * 7


class ProgramSamplerState:
    """Tracks structural context so sampling only ever emits decodable codes.

    Feed each emitted token through `consume`; `allowed` gives the boolean
    validity mask over the 78-token vocabulary for the next position.
    """

    def __init__(self, length):
        self.length = length
        self.pos = 0
        self.depth = 0
        self.ended = False
        self._slot = 0
        self._opcode = None

    def allowed(self):
        if self.ended:
            return _PAD_ONLY
        if self._slot > 0:
            return _SLOT_MASKS[self._opcode][self._slot - 1]
        remaining = self.length - self.pos
        mask = np.zeros(VOCAB_SIZE, dtype=bool)
        # a row costs 8 tokens; closing blocks cost 8 each; END costs 1
        if remaining >= STMT_WIDTH * (1 + self.depth) + 1:
            for op in OPCODE_DRAWS:
                mask[op] = True
        if self.depth < MAX_DEPTH and \
                remaining >= STMT_WIDTH * (2 + self.depth) + 1:
            mask[OP_FOR_T] = True
            mask[OP_FOR_R] = True
            mask[OP_REFLECT] = True
        if self.depth > 0:
            mask[OP_END_BLOCK] = True
        else:
            mask[OP_END] = True
        return mask

    def consume(self, token):
        token = int(token)
        if not self.allowed()[token]:
            raise ContractError(
                f"token {token} not permitted at position {self.pos}")
        if self.ended or token == OP_END:
            self.ended = True
            self.pos += 1
            return
        if self._slot == 0:
            self._opcode = token
            self._slot = 1
        elif self._slot < STMT_WIDTH - 1:
            self._slot += 1
        else:
            if self._opcode in (OP_FOR_T, OP_FOR_R, OP_REFLECT):
                self.depth += 1
            elif self._opcode == OP_END_BLOCK:
                self.depth -= 1
            self._slot = 0
            self._opcode = None
        self.pos += 1
