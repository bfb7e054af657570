"""Shared exception types.

The CLI maps these onto process exit codes: contract violations exit 2,
file/format problems exit 3, training divergence exits 4.
"""


class ContractError(ValueError):
    """An operation was called with arguments that violate its contract."""


class ShapeConformanceError(ContractError):
    """Input shapes do not conform for the requested op."""

    def __init__(self, op: str, shapes, detail: str = ""):
        msg = f"{op}: non-conforming shapes {list(shapes)}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
        self.op = op
        self.shapes = list(shapes)


class CapacityError(ContractError):
    """A fixed-width code cannot hold the requested content."""


class DecodeError(ContractError):
    """A token stream failed structural validation."""

    def __init__(self, slot: int, detail: str):
        super().__init__(f"decode error at slot {slot}: {detail}")
        self.slot = slot


class FileFormatError(Exception):
    """A binary or JSON artifact has the wrong magic, version, or layout."""


class TrainingDivergence(RuntimeError):
    """Loss exceeded the divergence guard during training."""
