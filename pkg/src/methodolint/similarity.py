"""Structural similarity between corpus test files.

Sources are lexed with the Python tokenizer, identifiers are normalized to
``ID`` and string/number literals to ``LIT`` (comments dropped), and the
similarity of two files is the Jaccard index of their 5-token shingle sets.
Renaming every identifier therefore leaves the score unchanged, which is the
point: the diversity gate rejects copy-paste variants that only differ in
naming.
"""

from __future__ import annotations

import io
import keyword
import tokenize
from dataclasses import dataclass

SHINGLE_SIZE = 5

_DROPPED = {
    tokenize.COMMENT,
    tokenize.NL,
    tokenize.ENCODING,
    tokenize.ENDMARKER,
}


class TokenizeError(ValueError):
    """Raised when a source file cannot be lexed."""


def normalized_tokens(source: str) -> list[str]:
    """Lex ``source`` into the normalized token stream used for shingling.

    Keywords and operators are kept verbatim; identifiers become ``ID``,
    string and number literals become ``LIT``; logical newlines and
    indentation are kept as structural markers.
    """
    out: list[str] = []
    try:
        for tok in tokenize.generate_tokens(io.StringIO(source).readline):
            if tok.type in _DROPPED:
                continue
            if tok.type == tokenize.NAME:
                out.append(tok.string if keyword.iskeyword(tok.string) else "ID")
            elif tok.type in (tokenize.STRING, tokenize.NUMBER):
                out.append("LIT")
            elif tok.type == tokenize.NEWLINE:
                out.append("<nl>")
            elif tok.type == tokenize.INDENT:
                out.append("<indent>")
            elif tok.type == tokenize.DEDENT:
                out.append("<dedent>")
            else:
                out.append(tok.string)
    except (tokenize.TokenError, SyntaxError, IndentationError) as exc:
        raise TokenizeError(f"cannot tokenize source: {exc}") from exc
    return out


def shingle_set(tokens: list[str], size: int = SHINGLE_SIZE) -> set[tuple[str, ...]]:
    return {tuple(tokens[i:i + size]) for i in range(len(tokens) - size + 1)}


def similarity(tokens_a: list[str], tokens_b: list[str], size: int = SHINGLE_SIZE) -> float:
    """Jaccard index of the shingle sets of two normalized token streams.

    Two streams too short to form a shingle count as identical only when both
    are (score 1.0 keeps the self-similarity invariant for tiny files).
    """
    a = shingle_set(tokens_a, size)
    b = shingle_set(tokens_b, size)
    if not a and not b:
        return 1.0
    if not a or not b:
        return 0.0
    return len(a & b) / len(a | b)


@dataclass(frozen=True)
class SimilarityScore:
    """Pairwise score between two test files; symmetric, 1.0 for identical."""

    file_a: str
    file_b: str
    score: float


def pairwise_scores(named_sources: list[tuple[str, str]]) -> list[SimilarityScore]:
    """All unordered-pair scores within one group of ``(name, source)`` files."""
    streams = [(name, normalized_tokens(src)) for name, src in named_sources]
    scores = []
    for i in range(len(streams)):
        for j in range(i + 1, len(streams)):
            scores.append(SimilarityScore(
                file_a=streams[i][0],
                file_b=streams[j][0],
                score=similarity(streams[i][1], streams[j][1]),
            ))
    return scores
