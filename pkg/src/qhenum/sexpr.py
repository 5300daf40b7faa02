"""S-expression reading and writing.

Atoms are symbols (``str``) or integers (``int``); lists are Python lists.
Comments run from ``;`` to end of line.
"""

from __future__ import annotations

from typing import Union

Sexpr = Union[str, int, list]


class SexprError(ValueError):
    pass


_DELIMS = "()"
_WS = " \t\r\n"


def tokenize(text: str) -> list[str]:
    tokens: list[str] = []
    i = 0
    n = len(text)
    while i < n:
        c = text[i]
        if c in _WS:
            i += 1
        elif c == ";":
            while i < n and text[i] != "\n":
                i += 1
        elif c in _DELIMS:
            tokens.append(c)
            i += 1
        elif c == "|":
            j = text.find("|", i + 1)
            if j < 0:
                raise SexprError("unterminated |symbol|")
            tokens.append(text[i : j + 1])
            i = j + 1
        else:
            j = i
            while j < n and text[j] not in _WS and text[j] not in _DELIMS and text[j] != ";":
                j += 1
            tokens.append(text[i:j])
            i = j
    return tokens


def _atom(token: str) -> Sexpr:
    if token.lstrip("-").isdigit() and token not in ("-", ""):
        return int(token)
    return token


def parse_all(text: str) -> list[Sexpr]:
    tokens = tokenize(text)
    pos = 0

    def read() -> Sexpr:
        nonlocal pos
        if pos >= len(tokens):
            raise SexprError("unexpected end of input")
        tok = tokens[pos]
        pos += 1
        if tok == "(":
            items = []
            while True:
                if pos >= len(tokens):
                    raise SexprError("unbalanced parentheses")
                if tokens[pos] == ")":
                    pos += 1
                    return items
                items.append(read())
        if tok == ")":
            raise SexprError("unexpected ')'")
        return _atom(tok)

    out = []
    while pos < len(tokens):
        out.append(read())
    return out


def parse_one(text: str) -> Sexpr:
    forms = parse_all(text)
    if len(forms) != 1:
        raise SexprError(f"expected exactly one form, got {len(forms)}")
    return forms[0]


def to_text(expr: Sexpr) -> str:
    if isinstance(expr, bool):
        return "true" if expr else "false"
    if isinstance(expr, int):
        return str(expr)
    if isinstance(expr, str):
        return expr
    return "(" + " ".join(to_text(e) for e in expr) + ")"
