"""Shape-program DSL: syntax tree, parser/printer, voxel executor, exact
integer tokenizer, and the template synthesizer."""

from .lang import (AXES, PARAM_MAX, PARAM_MIN, PARTS, PRIMITIVES, Draw,
                   ForRotate, ForTranslate, ParseError, Program, Reflect,
                   parse, print_program, validate_program)
from .executor import execute, unroll
from .tokens import (N_PROGRAM, STMT_WIDTH, VOCAB_SIZE, ProgramSamplerState,
                     decode_statement, detokenize, encode_statement, tokenize,
                     tokenized_length)
from .templates import TEMPLATES, Template, make_pair, synthesize

__all__ = [
    "AXES", "PARAM_MAX", "PARAM_MIN", "PARTS", "PRIMITIVES",
    "Draw", "ForRotate", "ForTranslate", "Program", "Reflect", "ParseError",
    "parse", "print_program", "validate_program",
    "execute", "unroll",
    "N_PROGRAM", "STMT_WIDTH", "VOCAB_SIZE", "ProgramSamplerState",
    "encode_statement", "decode_statement", "tokenize", "detokenize",
    "tokenized_length",
    "TEMPLATES", "Template", "synthesize", "make_pair",
]
