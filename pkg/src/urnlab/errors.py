"""Exception types shared across urnlab.

Each class carries the CLI exit code it maps to, so the command layer can
translate failures without a lookup table.
"""


class UrnlabError(Exception):
    exit_code = 1


class ConfigError(UrnlabError, ValueError):
    """Invalid input document, measure, margins or parameter."""

    exit_code = 2


class CapExceeded(UrnlabError):
    """A state space or work estimate is larger than the configured cap."""

    exit_code = 3


class DegenerateModel(UrnlabError):
    """The chain is reducible (or otherwise degenerate) where an irreducible one is required."""

    exit_code = 4


class StepBudgetExceeded(UrnlabError):
    """A simulation hit its jump budget before finishing."""

    exit_code = 5
