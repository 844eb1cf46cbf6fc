"""Tokenizer shared by the model (.frm) and scenario (.scn) grammars."""

from __future__ import annotations

import re
from dataclasses import dataclass

from .diagnostics import Diagnostic, SourceSpan, error

ID, INT, TIME, STRING, PUNCT, CMP, EOF = "ID", "INT", "TIME", "STRING", "PUNCT", "CMP", "EOF"

_TOKEN = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>\#[^\n]*)
  | (?P<time>\d{1,2}:\d{2}(?![\d:]))
  | (?P<int>-?\d+)
  | (?P<id>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<string>")
  | (?P<cmp><=|>=|==|!=|<|>)
  | (?P<punct>[{}\[\](),;:=.])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    value: object
    span: SourceSpan

    def is_(self, kind: str, text: str | None = None) -> bool:
        return self.kind == kind and (text is None or self.text == text)


def tokenize(source: str, file: str = "<input>") -> tuple[list[Token], list[Diagnostic]]:
    """Split ``source`` into tokens; always ends with an EOF token.

    Lexical problems are reported as diagnostics and the offending characters
    skipped, so the parser still sees a usable stream.
    """
    tokens: list[Token] = []
    diags: list[Diagnostic] = []
    pos, line, line_start = 0, 1, 0
    n = len(source)

    def span(start: int, end: int) -> SourceSpan:
        return SourceSpan(file, line, start - line_start + 1, end - start, start)

    while pos < n:
        m = _TOKEN.match(source, pos)
        if m is None:
            diags.append(error("E004", f"unexpected character {source[pos]!r}", span(pos, pos + 1)))
            pos += 1
            continue
        kind = m.lastgroup
        end = m.end()
        if kind == "nl":
            line += 1
            line_start = end
        elif kind == "time":
            text = m.group()
            hh, mm = (int(x) for x in text.split(":"))
            if hh >= 24 or mm >= 60:
                diags.append(error("E003", f"time of day {text} outside 00:00-23:59", span(pos, end)))
                value = 0
            else:
                value = hh * 60 + mm
            tokens.append(Token(TIME, text, value, span(pos, end)))
        elif kind == "int":
            tokens.append(Token(INT, m.group(), int(m.group()), span(pos, end)))
        elif kind == "id":
            tokens.append(Token(ID, m.group(), m.group(), span(pos, end)))
        elif kind == "cmp":
            tokens.append(Token(CMP, m.group(), m.group(), span(pos, end)))
        elif kind == "punct":
            tokens.append(Token(PUNCT, m.group(), m.group(), span(pos, end)))
        elif kind == "string":
            j, chars = pos + 1, []
            while j < n and source[j] not in '"\n':
                if source[j] == "\\" and j + 1 < n and source[j + 1] in '"\\':
                    chars.append(source[j + 1])
                    j += 2
                else:
                    chars.append(source[j])
                    j += 1
            if j >= n or source[j] == "\n":
                diags.append(error("E002", "unterminated string", span(pos, j)))
                end = j
            else:
                end = j + 1
            tokens.append(Token(STRING, source[pos:end], "".join(chars), span(pos, end)))
        pos = end
    tokens.append(Token(EOF, "", None, SourceSpan(file, line, pos - line_start + 1, 0, pos)))
    return tokens, diags
