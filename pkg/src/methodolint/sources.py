"""Helpers for inspecting corpus-language (Python) source shipped as test data.

Test files are data: they are parsed and tokenized but never imported or
executed.
"""

from __future__ import annotations

import ast
import io
import tokenize

# Markers that reveal ground truth when they open a comment. Matching is
# case-insensitive and whitespace after '#' is ignored, so '#BUG', '# bug:'
# and '#   Fixes ...' are all caught. Deliberately prefix-based (no word
# boundary): catching '# fixture' is an acceptable cost for never missing
# '# FIXES'.
HINT_MARKERS = ("bug", "fix", "wrong", "correct", "leak", "bad", "good")


def syntax_error(source: str) -> str | None:
    """Return a one-line description if ``source`` is not valid Python, else None."""
    try:
        ast.parse(source)
    except SyntaxError as exc:
        return f"line {exc.lineno}: {exc.msg}"
    except ValueError as exc:  # e.g. NUL bytes
        return str(exc)
    return None


def iter_comments(source: str):
    """Yield ``(lineno, text)`` for every comment token in ``source``.

    Falls back to a line scan when the file does not tokenize, so the
    hint-comment check still works on syntactically broken input.
    """
    try:
        for tok in tokenize.generate_tokens(io.StringIO(source).readline):
            if tok.type == tokenize.COMMENT:
                yield tok.start[0], tok.string
    except (tokenize.TokenError, SyntaxError, IndentationError):
        for lineno, line in enumerate(source.splitlines(), start=1):
            if "#" in line:
                yield lineno, line[line.index("#"):]


def find_hint_comment(source: str) -> tuple[int, str] | None:
    """Return ``(lineno, comment)`` for the first hint comment, or None."""
    for lineno, comment in iter_comments(source):
        body = comment.lstrip("#").lstrip().lower()
        if body.startswith(HINT_MARKERS):
            return lineno, comment
    return None
