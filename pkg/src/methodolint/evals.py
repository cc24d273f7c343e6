"""Evaluation layers: pattern evals, integration evals, judging, metric math.

Undefined metrics stay undefined (None), never silently zero-filled; rounding
to whole percents happens only at the presentation edge.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Literal, Mapping, Sequence

from pydantic import BaseModel, ConfigDict, Field

from .client import EndpointConfig, InferenceError, request_structured, run_batch
from .prompts import build_prompt
from .registry import PatternRegistry, UnknownPatternError
from .scan import Finding, scan_file

__all__ = [
    "EvalMetrics", "UndefinedMetricError", "compute_prf", "conservative_precision",
    "percent", "format_pct",
    "PlantedBug", "ScenarioManifest", "load_scenario", "load_scenarios",
    "match_findings", "DEFAULT_MATCH_WINDOW",
    "EvalError", "PatternEvalResult", "eval_patterns", "eval_integration",
    "JudgeVerdict", "judge_findings", "JUDGE_CONTEXT_LINES",
]

DEFAULT_MATCH_WINDOW = 3
JUDGE_CONTEXT_LINES = 15


class UndefinedMetricError(ValueError):
    """A ratio was requested whose denominator is zero."""


@dataclass(frozen=True)
class EvalMetrics:
    """Confusion counts plus derived ratios; tn=None when negatives don't exist."""

    tp: int
    fp: int
    fn: int
    tn: int | None = None

    def __post_init__(self):
        for name in ("tp", "fp", "fn"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.tn is not None and self.tn < 0:
            raise ValueError("tn must be non-negative")

    @property
    def precision(self) -> float | None:
        d = self.tp + self.fp
        return self.tp / d if d else None

    @property
    def recall(self) -> float | None:
        d = self.tp + self.fn
        return self.tp / d if d else None

    @property
    def f1(self) -> float | None:
        p, r = self.precision, self.recall
        if p is None or r is None or p + r == 0:
            return None
        return 2 * p * r / (p + r)

    @property
    def accuracy(self) -> float | None:
        if self.tn is None:
            return None
        total = self.tp + self.fp + self.fn + self.tn
        return (self.tp + self.tn) / total if total else None

    def __add__(self, other: "EvalMetrics") -> "EvalMetrics":
        if not isinstance(other, EvalMetrics):
            return NotImplemented
        tn = None
        if self.tn is not None or other.tn is not None:
            tn = (self.tn or 0) + (other.tn or 0)
        return EvalMetrics(
            tp=self.tp + other.tp, fp=self.fp + other.fp,
            fn=self.fn + other.fn, tn=tn,
        )

    def to_dict(self) -> dict:
        return {
            "tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn,
            "precision": self.precision, "recall": self.recall,
            "f1": self.f1, "accuracy": self.accuracy,
        }


def compute_prf(tp: int, fp: int, fn: int) -> EvalMetrics:
    """Precision/recall/F1 from raw counts; accuracy stays undefined (no tn)."""
    return EvalMetrics(tp=tp, fp=fp, fn=fn, tn=None)


def conservative_precision(valid: int, invalid: int, uncertain: int) -> float:
    """valid / (valid + invalid + uncertain): uncertain stays in the denominator."""
    for name, v in (("valid", valid), ("invalid", invalid), ("uncertain", uncertain)):
        if v < 0:
            raise ValueError(f"{name} must be non-negative")
    total = valid + invalid + uncertain
    if total == 0:
        raise UndefinedMetricError("conservative precision undefined for zero verdicts")
    return valid / total


def percent(value: float) -> int:
    """Whole percent, decimal half-up (0.125 -> 13, 0.675 -> 68)."""
    return int(
        (Decimal(str(value)) * 100).quantize(Decimal("1"), rounding=ROUND_HALF_UP)
    )


def format_pct(value: float | None) -> str:
    return "undefined" if value is None else f"{percent(value)}%"


# -- ground-truth scenarios -----------------------------------------------------

@dataclass(frozen=True)
class PlantedBug:
    pattern_id: str
    line: int
    description: str = ""


@dataclass(frozen=True)
class ScenarioManifest:
    scenario_id: str
    code_file: str
    planted: tuple[PlantedBug, ...]


def load_scenario(path: Path) -> ScenarioManifest:
    """One scenario JSON; code_file resolved relative to the manifest."""
    path = Path(path)
    data = json.loads(path.read_text(encoding="utf-8"))
    try:
        scenario_id = data["scenario_id"]
        code_file = data["code_file"]
        raw_planted = data["planted"]
    except (KeyError, TypeError) as exc:
        raise ValueError(f"{path}: malformed scenario manifest ({exc})") from exc
    if not isinstance(raw_planted, list) or not raw_planted:
        raise ValueError(f"{path}: planted list must be non-empty")
    planted = []
    for entry in raw_planted:
        bug = PlantedBug(
            pattern_id=entry["pattern_id"],
            line=int(entry["line"]),
            description=entry.get("description", ""),
        )
        if bug.line <= 0:
            raise ValueError(f"{path}: planted line must be positive, got {bug.line}")
        planted.append(bug)
    code_path = Path(code_file)
    if not code_path.is_absolute():
        code_path = path.parent / code_path
    return ScenarioManifest(
        scenario_id=str(scenario_id),
        code_file=str(code_path),
        planted=tuple(planted),
    )


def load_scenarios(directory: Path) -> list[ScenarioManifest]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"scenario directory not found: {directory}")
    return [load_scenario(p) for p in sorted(directory.glob("*.json"))]


# -- finding <-> ground-truth matching --------------------------------------------

def _distance(finding: Finding, bug: PlantedBug) -> int | None:
    if not finding.line_refs:
        return None
    return min(abs(line - bug.line) for line in finding.line_refs)


def match_findings(
    findings: Sequence[Finding],
    manifest: ScenarioManifest,
    window: int = DEFAULT_MATCH_WINDOW,
) -> tuple[list[tuple[Finding, PlantedBug]], list[Finding], list[PlantedBug]]:
    """Greedy one-to-one matching of findings to planted bugs.

    A finding may match a planted bug only with the same pattern_id and a
    minimum line distance <= window. Candidate pairs are taken in ascending
    (distance, planted line, lowest finding line) order, so the outcome does
    not depend on the input order of ``findings``.
    """
    candidates = []
    for i, finding in enumerate(findings):
        for j, bug in enumerate(manifest.planted):
            if finding.pattern_id != bug.pattern_id:
                continue
            dist = _distance(finding, bug)
            if dist is None or dist > window:
                continue
            candidates.append((dist, bug.line, min(finding.line_refs),
                               tuple(finding.line_refs), i, j))
    candidates.sort(key=lambda c: c[:4])

    matched_findings: set[int] = set()
    matched_bugs: set[int] = set()
    tp_pairs: list[tuple[Finding, PlantedBug]] = []
    for _, _, _, _, i, j in candidates:
        if i in matched_findings or j in matched_bugs:
            continue
        matched_findings.add(i)
        matched_bugs.add(j)
        tp_pairs.append((findings[i], manifest.planted[j]))

    fp_findings = [f for i, f in enumerate(findings) if i not in matched_findings]
    fn_planted = [b for j, b in enumerate(manifest.planted) if j not in matched_bugs]
    return tp_pairs, fp_findings, fn_planted


# -- pattern evals ----------------------------------------------------------------

@dataclass(frozen=True)
class EvalError:
    pattern_id: str
    test_path: str
    error: str

    def to_dict(self) -> dict:
        return {"pattern_id": self.pattern_id, "test_path": self.test_path,
                "error": self.error}


@dataclass(frozen=True)
class PatternEvalResult:
    per_pattern: Mapping[str, EvalMetrics]
    aggregate: EvalMetrics
    errors: tuple[EvalError, ...]

    def to_dict(self) -> dict:
        return {
            "aggregate": self.aggregate.to_dict(),
            "per_pattern": {pid: m.to_dict() for pid, m in self.per_pattern.items()},
            "errors": [e.to_dict() for e in self.errors],
        }


def eval_patterns(reg: PatternRegistry, client: EndpointConfig) -> PatternEvalResult:
    """Run every pattern against its own test files.

    Positives expect detected=true (miss -> fn), negatives detected=false
    (hit -> fp). Client errors count as wrong answers and are also reported
    separately; accuracy counts test files.
    """
    jobs = []  # (pattern, test, bundle)
    for pattern in reg:
        for test in pattern.test_files:
            jobs.append((pattern, test, build_prompt(test.source, pattern)))

    results = run_batch([bundle for _, _, bundle in jobs], client)

    counts: dict[str, dict[str, int]] = {
        p.id: {"tp": 0, "fp": 0, "fn": 0, "tn": 0} for p in reg
    }
    errors: list[EvalError] = []
    for (pattern, test, _), result in zip(jobs, results):
        expected = test.kind == "positive"
        if isinstance(result, InferenceError):
            errors.append(EvalError(pattern.id, test.relative_path, str(result)))
            counts[pattern.id]["fn" if expected else "fp"] += 1
            continue
        if result.detected and expected:
            counts[pattern.id]["tp"] += 1
        elif result.detected and not expected:
            counts[pattern.id]["fp"] += 1
        elif not result.detected and expected:
            counts[pattern.id]["fn"] += 1
        else:
            counts[pattern.id]["tn"] += 1

    per_pattern = {pid: EvalMetrics(**c) for pid, c in sorted(counts.items())}
    aggregate = EvalMetrics(
        tp=sum(m.tp for m in per_pattern.values()),
        fp=sum(m.fp for m in per_pattern.values()),
        fn=sum(m.fn for m in per_pattern.values()),
        tn=sum(m.tn or 0 for m in per_pattern.values()),
    )
    return PatternEvalResult(
        per_pattern=per_pattern, aggregate=aggregate, errors=tuple(errors)
    )


# -- integration eval -------------------------------------------------------------

def eval_integration(
    scenarios_dir: Path,
    reg: PatternRegistry,
    client: EndpointConfig,
    window: int = DEFAULT_MATCH_WINDOW,
) -> EvalMetrics:
    """Scan each scenario's code file, match against its manifest, sum tp/fp/fn.

    Planted pattern ids must exist in the registry; a scenario file the budget
    skips contributes all its planted bugs as fn (misses, not silence).
    """
    scenarios = load_scenarios(scenarios_dir)
    known = set(reg.patterns)
    for scenario in scenarios:
        unknown = {b.pattern_id for b in scenario.planted} - known
        if unknown:
            raise UnknownPatternError(
                f"scenario {scenario.scenario_id}: planted pattern ids not in "
                f"registry: {sorted(unknown)}"
            )

    tp = fp = fn = 0
    for scenario in scenarios:
        outcome = scan_file(scenario.code_file, reg, client)
        tp_pairs, fp_findings, fn_planted = match_findings(
            list(outcome.findings), scenario, window
        )
        tp += len(tp_pairs)
        fp += len(fp_findings)
        fn += len(fn_planted)
    return compute_prf(tp, fp, fn)


# -- LLM-as-judge verification -----------------------------------------------------

class _JudgeResponse(BaseModel):
    model_config = ConfigDict(extra="forbid")

    verdict: Literal["valid", "invalid", "uncertain"]
    reasoning: str = Field(min_length=1)


@dataclass(frozen=True)
class JudgeVerdict:
    finding_ref: str
    verdict: str  # valid | invalid | uncertain
    reasoning: str

    def to_dict(self) -> dict:
        return {"finding_ref": self.finding_ref, "verdict": self.verdict,
                "reasoning": self.reasoning}


_JUDGE_SYSTEM = (
    "You are an independent reviewer of findings produced by a methodology "
    "linter for scientific Python code. For each finding, decide from the "
    "code context alone whether the reported issue is real. Answer valid "
    "when the code truly exhibits the reported issue, invalid when it does "
    "not, and uncertain when the context is insufficient to tell. Respond "
    'with a single JSON object: {"verdict": "valid"|"invalid"|"uncertain", '
    '"reasoning": string}.'
)


def _context_snippet(source: str, line_refs: Sequence[int], radius: int) -> str:
    lines = source.splitlines()
    if not lines:
        return ""
    if line_refs:
        lo = max(1, min(line_refs) - radius)
        hi = min(len(lines), max(line_refs) + radius)
    else:
        lo, hi = 1, min(len(lines), 2 * radius + 1)
    flagged = set(line_refs)
    out = []
    for n in range(lo, hi + 1):
        mark = ">>" if n in flagged else "  "
        out.append(f"{mark} {n:4d} | {lines[n - 1]}")
    return "\n".join(out)


def _judge_user(finding: Finding, snippet: str, repo_origin: str) -> str:
    lines = ", ".join(str(n) for n in finding.line_refs) or "not specified"
    return (
        f"Repository: {repo_origin or 'unknown'}\n"
        f"File: {finding.file}\n"
        f"Category: {finding.category}\n"
        f"Severity: {finding.severity}\n"
        f"Flagged lines: {lines}\n"
        f"Issue summary: {finding.issue_summary}\n"
        f"Explanation: {finding.explanation}\n\n"
        f"Code context (flagged lines marked with >>):\n{snippet}\n\n"
        "Is this finding valid, invalid, or uncertain?"
    )


def judge_findings(
    findings: Sequence[Finding],
    judge_cfg: EndpointConfig,
    repo_origin: str = "",
    context_lines: int = JUDGE_CONTEXT_LINES,
    sources: Mapping[str, str] | None = None,
) -> list[JudgeVerdict]:
    """One judge call per finding; failures degrade to uncertain, never valid.

    The judge sees the finding's metadata and the flagged snippet with
    surrounding context. It never sees the detection question, so it cannot
    parrot the pattern's own framing back as confirmation.
    """
    verdicts: list[JudgeVerdict] = []
    source_cache: dict[str, str | None] = dict(sources or {})
    for index, finding in enumerate(findings):
        ref = f"{finding.file}:{finding.pattern_id}:{index}"
        if finding.file not in source_cache:
            try:
                source_cache[finding.file] = Path(finding.file).read_text(encoding="utf-8")
            except (OSError, UnicodeDecodeError):
                source_cache[finding.file] = None
        source = source_cache[finding.file]
        if source is None:
            verdicts.append(JudgeVerdict(
                ref, "uncertain", f"code file unreadable: {finding.file}"
            ))
            continue
        snippet = _context_snippet(source, finding.line_refs, context_lines)
        try:
            response = request_structured(
                _JUDGE_SYSTEM, _judge_user(finding, snippet, repo_origin),
                _JudgeResponse, judge_cfg, ref,
            )
        except InferenceError as exc:
            verdicts.append(JudgeVerdict(ref, "uncertain", f"judge call failed: {exc}"))
            continue
        verdicts.append(JudgeVerdict(ref, response.verdict, response.reasoning))
    return verdicts
