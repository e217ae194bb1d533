"""Error vocabulary shared by every gcsim module."""
from __future__ import annotations

from dataclasses import dataclass


class DomainError(ValueError):
    """A numeric argument lies outside the domain of the operation."""


class LogicError(RuntimeError):
    """Internal inconsistency: a simulator or aggregation bug, never a model outcome."""


class ConfigError(ValueError):
    """The configured topology cannot support the requested operation."""


@dataclass(frozen=True)
class ValidationIssue:
    """One violated scenario constraint, named by its field path."""

    field: str
    rule: str

    def __str__(self) -> str:
        return f"{self.field}: {self.rule}"


class ScenarioInvalid(ValueError):
    """Raised by callers that need an exception instead of an issue list."""

    def __init__(self, issues: list[ValidationIssue]):
        self.issues = list(issues)
        super().__init__("; ".join(str(issue) for issue in self.issues))
