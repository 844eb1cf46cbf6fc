from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class SourceSpan:
    file: str
    line: int
    column: int
    length: int
    offset: int = 0

    def __str__(self) -> str:
        return f"{self.file}:{self.line}:{self.column}"

    def text_in(self, source: str) -> str:
        return source[self.offset : self.offset + self.length]

    def within(self, source: str) -> bool:
        if self.line < 1 or self.column < 1 or self.length < 0:
            return False
        if self.offset < 0 or self.offset + self.length > len(source):
            return False
        # line/column must agree with the offset
        line_start = source.rfind("\n", 0, self.offset) + 1
        return source.count("\n", 0, self.offset) + 1 == self.line and self.offset - line_start + 1 == self.column


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # "error" | "warning"
    code: str
    message: str
    span: SourceSpan

    @property
    def is_error(self) -> bool:
        return self.severity == "error"

    def __str__(self) -> str:
        return f"{self.span}: {self.severity} {self.code}: {self.message}"


class DiagnosticError(Exception):
    """Raised by convenience loaders when parsing produced errors."""

    def __init__(self, diagnostics: list[Diagnostic]):
        self.diagnostics = diagnostics
        super().__init__("\n".join(str(d) for d in diagnostics))


def error(code: str, message: str, span: SourceSpan) -> Diagnostic:
    return Diagnostic("error", code, message, span)


def warning(code: str, message: str, span: SourceSpan) -> Diagnostic:
    return Diagnostic("warning", code, message, span)
