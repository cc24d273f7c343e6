"""Injection-hardened, prefix-cache-friendly prompt assembly.

The user message puts the scanned file first, wrapped in nonce-carrying
delimiters, so every pattern's prompt for the same file shares an identical
byte prefix through the closing delimiter (serving stacks can cache that
prefix once). Defense against prompt injection is layered three times: the
system message declares delimited content to be data, the delimiters carry a
per-scan 128-bit nonce the scanned code cannot predict, and a reinforcement
line after the question restates the contract.
"""

from __future__ import annotations

import math
import secrets
import sys
from dataclasses import dataclass
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .registry import Pattern

DEFAULT_MAX_INPUT_TOKENS = 14_000
DEFAULT_CHARS_PER_TOKEN = 4.0
NONCE_ATTEMPTS = 8

_TEMPLATE_PATH = Path(__file__).parent / "templates" / "prompt_v1.toml"
_template_cache: dict | None = None


class NonceCollisionError(RuntimeError):
    """Could not find a delimiter nonce absent from the scanned code."""


@dataclass(frozen=True)
class TokenBudget:
    """Input budget for one scanned file, in estimated tokens."""

    max_input_tokens: int = DEFAULT_MAX_INPUT_TOKENS
    chars_per_token: float = DEFAULT_CHARS_PER_TOKEN

    def __post_init__(self):
        if self.max_input_tokens <= 0:
            raise ValueError("max_input_tokens must be positive")
        if self.chars_per_token <= 0:
            raise ValueError("chars_per_token must be positive")


@dataclass(frozen=True)
class PromptBundle:
    """One assembled (file, pattern) prompt plus its cache-prefix length."""

    pattern_id: str
    system_message: str
    user_message: str
    shared_prefix_len: int  # bytes; identical across patterns for one (file, nonce)
    nonce: str


@dataclass(frozen=True)
class BudgetCheck:
    fit: bool
    estimate: int
    reason: str | None = None  # set when fit is False


def load_template() -> dict:
    global _template_cache
    if _template_cache is None:
        _template_cache = tomllib.loads(_TEMPLATE_PATH.read_text(encoding="utf-8"))
    return _template_cache


def estimate_tokens(text: str, chars_per_token: float = DEFAULT_CHARS_PER_TOKEN) -> int:
    """Heuristic token count: ceil(len/chars_per_token), monotone in length."""
    if not text:
        return 0
    return math.ceil(len(text) / chars_per_token)


def open_delimiter(nonce: str) -> str:
    return f"<code-{nonce}>"


def close_delimiter(nonce: str) -> str:
    return f"</code-{nonce}>"


def _collides(code: str, nonce: str) -> bool:
    return open_delimiter(nonce) in code or close_delimiter(nonce) in code


def choose_nonce(code: str, attempts: int = NONCE_ATTEMPTS) -> str:
    """Random 128-bit hex nonce whose delimiters do not occur in ``code``."""
    for _ in range(attempts):
        nonce = secrets.token_hex(16)
        if not _collides(code, nonce):
            return nonce
    raise NonceCollisionError(
        f"no collision-free delimiter nonce found in {attempts} attempts"
    )


def build_prompt(code: str, pattern: Pattern, nonce: str | None = None) -> PromptBundle:
    """Assemble the prompt for one (file, pattern) pair.

    Pass the same ``nonce`` for every pattern of one file to keep the shared
    byte prefix; omit it to have one chosen (with internal regeneration on
    the astronomically unlikely collision). An explicitly supplied nonce that
    collides with the code raises, because silently regenerating would break
    prefix sharing with the caller's other prompts.
    """
    if nonce is None:
        nonce = choose_nonce(code)
    elif _collides(code, nonce):
        raise NonceCollisionError(f"supplied nonce {nonce!r} occurs in the code")

    template = load_template()
    open_d, close_d = open_delimiter(nonce), close_delimiter(nonce)
    system = template["system"].replace("%OPEN%", open_d).replace("%CLOSE%", close_d)
    reinforcement = template["reinforcement"].replace("%OPEN%", open_d).replace("%CLOSE%", close_d)

    prefix = f"{open_d}\n{code}\n{close_d}\n\n"
    user = f"{prefix}{pattern.detection_question}\n\n{reinforcement}"
    return PromptBundle(
        pattern_id=pattern.id,
        system_message=system,
        user_message=user,
        shared_prefix_len=len(prefix.encode("utf-8")),
        nonce=nonce,
    )


def check_budget(code: str, budget: TokenBudget, filename: str | None = None) -> BudgetCheck:
    """Decide whether ``code`` fits the input budget.

    The budget is the allowance for the file itself (prompt overhead is
    already carved out of it, which is why the default covers roughly
    1,000-line files). The skip reason names the file, its estimate, and the
    budget.
    """
    est = estimate_tokens(code, budget.chars_per_token)
    if est <= budget.max_input_tokens:
        return BudgetCheck(fit=True, estimate=est)
    name = filename or "<input>"
    reason = (
        f"{name}: estimated {est} > {budget.max_input_tokens} token input budget "
        f"({len(code)} chars at {budget.chars_per_token:g} chars/token)"
    )
    return BudgetCheck(fit=False, estimate=est, reason=reason)
