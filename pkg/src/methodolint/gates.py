"""Quality gates for pattern bundles.

Three layers: 15 deterministic checks (D01..D15, free and byte-deterministic),
a structural-diversity check over normalized shingle similarity, and an
optional judge-backed semantic check that asks an endpoint whether each test
file actually exhibits (or does not exhibit) the questioned anti-pattern.

Every check always runs regardless of earlier failures, so one broken aspect
of a bundle never hides the rest.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence
from urllib.parse import urlparse

from pydantic import BaseModel, ConfigDict

from . import similarity as sim
from .client import EndpointConfig, InferenceError, request_structured
from .prompts import TokenBudget, estimate_tokens
from .registry import (
    CATEGORIES,
    CATEGORY_PREFIXES,
    ID_RE,
    QUESTION_MAX_CHARS,
    QUESTION_MIN_CHARS,
    RESERVED_DELIMITER,
    SEVERITIES,
    Pattern,
    RawBundle,
    _MANIFEST_SCHEMA,
    scan_bundles,
)
from .similarity import SimilarityScore  # re-exported for report consumers
from .sources import find_hint_comment, syntax_error

__all__ = [
    "CheckResult", "GateReport", "GateSummary", "SimilarityScore",
    "run_deterministic_gates", "run_diversity_gate", "run_semantic_gate",
    "gate_all", "DETERMINISTIC_CHECKS", "DEFAULT_DIVERSITY_THRESHOLD",
]

DEFAULT_DIVERSITY_THRESHOLD = 0.85

_YES_RE = re.compile(r"YES\s*=")
_NO_RE = re.compile(r"NO\s*=")


@dataclass(frozen=True)
class CheckResult:
    check_id: str
    status: str  # "pass" | "fail"
    detail: str

    @property
    def passed(self) -> bool:
        return self.status == "pass"


@dataclass(frozen=True)
class GateReport:
    pattern_id: str
    results: tuple[CheckResult, ...]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    @property
    def failures(self) -> tuple[CheckResult, ...]:
        return tuple(r for r in self.results if not r.passed)

    def to_dict(self) -> dict:
        return {
            "pattern_id": self.pattern_id,
            "passed": self.passed,
            "results": [
                {"check_id": r.check_id, "status": r.status, "detail": r.detail}
                for r in self.results
            ],
        }


def _ok(check_id: str) -> CheckResult:
    return CheckResult(check_id, "pass", "")


def _fail(check_id: str, detail: str) -> CheckResult:
    return CheckResult(check_id, "fail", detail or "failed")


def _readable_tests(bundle: RawBundle) -> dict[str, str]:
    return {rel: src for rel, src in bundle.disk_tests.items() if src is not None}


# -- the 15 deterministic checks ----------------------------------------------

def _d01_manifest_schema(b: RawBundle) -> CheckResult:
    if b.manifest is None:
        return _fail("D01", b.manifest_error or "manifest missing or unreadable")
    problems = []
    for key, typ in _MANIFEST_SCHEMA.items():
        if key not in b.manifest:
            problems.append(f"missing key {key!r}")
        elif not isinstance(b.manifest[key], typ):
            problems.append(f"key {key!r} must be {typ.__name__}")
        elif typ is list and not all(isinstance(v, str) for v in b.manifest[key]):
            problems.append(f"key {key!r} must be a list of strings")
    unknown = set(b.manifest) - set(_MANIFEST_SCHEMA)
    if unknown:
        problems.append(f"unknown keys {sorted(unknown)}")
    if problems:
        return _fail("D01", "; ".join(problems))
    return _ok("D01")


def _d02_id_format(b: RawBundle) -> CheckResult:
    if not b.manifest or not isinstance(b.manifest.get("id"), str):
        return _fail("D02", "no id available (manifest missing or malformed)")
    pattern_id = b.manifest["id"]
    if not ID_RE.match(pattern_id):
        return _fail("D02", f"id {pattern_id!r} does not match prefix-number form")
    category = b.manifest.get("category")
    if category in CATEGORY_PREFIXES:
        expected = CATEGORY_PREFIXES[category]
        if pattern_id.split("-")[0] != expected:
            return _fail(
                "D02",
                f"id {pattern_id!r} should use prefix {expected!r} for category {category!r}",
            )
    return _ok("D02")


def _d03_category(b: RawBundle) -> CheckResult:
    category = (b.manifest or {}).get("category")
    if category not in CATEGORIES:
        return _fail("D03", f"unknown category {category!r}")
    return _ok("D03")


def _d04_severity(b: RawBundle) -> CheckResult:
    severity = (b.manifest or {}).get("severity")
    if severity not in SEVERITIES:
        return _fail("D04", f"unknown severity {severity!r}")
    return _ok("D04")


def _d05_test_counts(b: RawBundle) -> CheckResult:
    pos, neg = len(b.declared_tests("positive")), len(b.declared_tests("negative"))
    if pos < 3 or neg < 3:
        return _fail("D05", f"needs at least 3 positive and 3 negative tests, has {pos}/{neg}")
    return _ok("D05")


def _d06_unique_filenames(b: RawBundle) -> CheckResult:
    declared = b.declared_tests("positive") + b.declared_tests("negative")
    seen, dupes = set(), set()
    for rel in declared:
        if rel in seen:
            dupes.add(rel)
        seen.add(rel)
    if dupes:
        return _fail("D06", f"duplicate test filenames: {sorted(dupes)}")
    return _ok("D06")


def _d07_tests_parse(b: RawBundle) -> CheckResult:
    problems = []
    for rel, source in sorted(_readable_tests(b).items()):
        err = syntax_error(source)
        if err:
            problems.append(f"{rel}: {err}")
    if problems:
        return _fail("D07", "; ".join(problems))
    return _ok("D07")


def _d08_no_hint_comments(b: RawBundle) -> CheckResult:
    problems = []
    for rel, source in sorted(_readable_tests(b).items()):
        hint = find_hint_comment(source)
        if hint:
            problems.append(f"{rel} line {hint[0]}: {hint[1]!r}")
    if problems:
        return _fail("D08", "hint comments: " + "; ".join(problems))
    return _ok("D08")


def _d09_yes_no_contract(b: RawBundle) -> CheckResult:
    question = (b.manifest or {}).get("detection_question")
    if not isinstance(question, str):
        return _fail("D09", "no detection question available")
    missing = [name for name, rx in (("YES=", _YES_RE), ("NO=", _NO_RE))
               if not rx.search(question)]
    if missing:
        return _fail("D09", f"question lacks contract clause(s): {', '.join(missing)}")
    return _ok("D09")


def _d10_question_length(b: RawBundle) -> CheckResult:
    question = (b.manifest or {}).get("detection_question")
    if not isinstance(question, str):
        return _fail("D10", "no detection question available")
    n = len(question)
    if not (QUESTION_MIN_CHARS <= n <= QUESTION_MAX_CHARS):
        return _fail(
            "D10",
            f"question length {n} outside {QUESTION_MIN_CHARS}..{QUESTION_MAX_CHARS} chars",
        )
    return _ok("D10")


def _d11_doc_refs(b: RawBundle) -> CheckResult:
    refs = (b.manifest or {}).get("doc_refs")
    if not isinstance(refs, list) or not refs:
        return _fail("D11", "doc_refs missing or empty")
    for ref in refs:
        if not isinstance(ref, str):
            return _fail("D11", f"doc ref {ref!r} is not a string")
        parsed = urlparse(ref)
        if parsed.scheme not in ("http", "https") or not parsed.netloc:
            return _fail("D11", f"doc ref {ref!r} is not an absolute URL")
    return _ok("D11")


def _d12_no_identical_tests(b: RawBundle) -> CheckResult:
    by_source: dict[str, str] = {}
    for rel, source in sorted(_readable_tests(b).items()):
        if source in by_source:
            return _fail("D12", f"{by_source[source]} and {rel} are byte-identical")
        by_source[source] = rel
    return _ok("D12")


def _d13_file_sync(b: RawBundle) -> CheckResult:
    declared = set(b.declared_tests("positive")) | set(b.declared_tests("negative"))
    on_disk = set(b.disk_tests)
    unreadable = sorted(rel for rel, src in b.disk_tests.items() if src is None)
    problems = []
    missing = sorted(declared - on_disk)
    if missing:
        problems.append(f"declared but missing on disk: {missing}")
    extra = sorted(on_disk - declared) if b.manifest else []
    if extra:
        problems.append(f"on disk but not declared: {extra}")
    if unreadable:
        problems.append(f"unreadable: {unreadable}")
    if problems:
        return _fail("D13", "; ".join(problems))
    return _ok("D13")


def _d14_token_budget(b: RawBundle, budget: TokenBudget) -> CheckResult:
    problems = []
    for rel, source in sorted(_readable_tests(b).items()):
        est = estimate_tokens(source, budget.chars_per_token)
        if est > budget.max_input_tokens:
            problems.append(f"{rel}: {est} > {budget.max_input_tokens} tokens")
    if problems:
        return _fail("D14", "; ".join(problems))
    return _ok("D14")


def _d15_reserved_delimiter(b: RawBundle) -> CheckResult:
    offenders = []
    question = (b.manifest or {}).get("detection_question")
    if isinstance(question, str) and RESERVED_DELIMITER in question:
        offenders.append("detection_question")
    for rel, source in sorted(_readable_tests(b).items()):
        if RESERVED_DELIMITER in source:
            offenders.append(rel)
    if offenders:
        return _fail("D15", f"reserved {RESERVED_DELIMITER!r} found in: {offenders}")
    return _ok("D15")


DETERMINISTIC_CHECKS = (
    ("D01", _d01_manifest_schema),
    ("D02", _d02_id_format),
    ("D03", _d03_category),
    ("D04", _d04_severity),
    ("D05", _d05_test_counts),
    ("D06", _d06_unique_filenames),
    ("D07", _d07_tests_parse),
    ("D08", _d08_no_hint_comments),
    ("D09", _d09_yes_no_contract),
    ("D10", _d10_question_length),
    ("D11", _d11_doc_refs),
    ("D12", _d12_no_identical_tests),
    ("D13", _d13_file_sync),
    ("D14", _d14_token_budget),
    ("D15", _d15_reserved_delimiter),
)


def _as_bundle(pattern_or_bundle: Pattern | RawBundle) -> RawBundle:
    if isinstance(pattern_or_bundle, Pattern):
        return RawBundle.from_pattern(pattern_or_bundle)
    return pattern_or_bundle


def run_deterministic_gates(
    pattern: Pattern | RawBundle, budget: TokenBudget | None = None
) -> GateReport:
    """Run all 15 deterministic checks; failures are report entries, never raises."""
    bundle = _as_bundle(pattern)
    budget = budget or TokenBudget()
    results = []
    for check_id, check in DETERMINISTIC_CHECKS:
        if check_id == "D14":
            results.append(check(bundle, budget))
        else:
            results.append(check(bundle))
    return GateReport(pattern_id=bundle.pattern_id, results=tuple(results))


# -- diversity gate ------------------------------------------------------------

class GateError(Exception):
    """A gate could not run (unparseable input, unreachable judge)."""


def _group_sources(bundle: RawBundle, kind: str) -> list[tuple[str, str]]:
    declared = bundle.declared_tests(kind)
    readable = _readable_tests(bundle)
    if declared:
        return [(rel, readable[rel]) for rel in declared if rel in readable]
    prefix = f"tests/{kind}_"
    return [(rel, src) for rel, src in sorted(readable.items()) if rel.startswith(prefix)]


def run_diversity_gate(
    pattern: Pattern | RawBundle, threshold: float = DEFAULT_DIVERSITY_THRESHOLD
) -> GateReport:
    """Fail any same-kind test pair whose normalized shingle Jaccard >= threshold."""
    bundle = _as_bundle(pattern)
    results = []
    for check_id, kind in (("DIV-POS", "positive"), ("DIV-NEG", "negative")):
        group = _group_sources(bundle, kind)
        try:
            scores = sim.pairwise_scores(group)
        except sim.TokenizeError as exc:
            raise GateError(f"{bundle.pattern_id}: {kind} tests: {exc}") from exc
        offenders = [s for s in scores if s.score >= threshold]
        if offenders:
            detail = "; ".join(
                f"{s.file_a} ~ {s.file_b}: score {s.score:.3f} >= {threshold:g}"
                for s in offenders
            )
            results.append(_fail(check_id, detail))
        else:
            results.append(_ok(check_id))
    return GateReport(pattern_id=bundle.pattern_id, results=tuple(results))


# -- semantic gate ---------------------------------------------------------------

class SemanticJudgment(BaseModel):
    model_config = ConfigDict(extra="forbid")

    exhibits: bool
    reasoning: str = ""


_SEMANTIC_SYSTEM = (
    "You are reviewing the test corpus of a methodology linter. Given one "
    "detection question and one test file, decide whether the file exhibits "
    "the anti-pattern the question describes. Respond with a single JSON "
    'object: {"exhibits": boolean, "reasoning": string}.'
)


def _semantic_user(pattern: Pattern, test) -> str:
    return (
        f"Detection question:\n{pattern.detection_question}\n\n"
        f"Test file {test.relative_path}:\n{test.source}\n\n"
        "Does this file exhibit the anti-pattern described by the question?"
    )


def run_semantic_gate(pattern: Pattern, judge: EndpointConfig) -> GateReport:
    """One judge call per test file; positives must exhibit, negatives must not.

    Raises GateError when the judge endpoint fails (unreachable, or schema
    still invalid after retries) — gate verdicts are never guessed.
    """
    results = []
    for test in pattern.test_files:
        expected = test.kind == "positive"
        try:
            judgment = request_structured(
                _SEMANTIC_SYSTEM, _semantic_user(pattern, test),
                SemanticJudgment, judge, f"{pattern.id}:{test.relative_path}",
            )
        except InferenceError as exc:
            raise GateError(f"semantic judge failed for {test.relative_path}: {exc}") from exc
        check_id = f"SEM:{test.relative_path}"
        if judgment.exhibits == expected:
            results.append(_ok(check_id))
        else:
            word = "exhibit" if expected else "be free of"
            results.append(_fail(
                check_id,
                f"{test.relative_path} ({test.kind}) should {word} the anti-pattern; "
                f"judge said exhibits={judgment.exhibits}: {judgment.reasoning}",
            ))
    return GateReport(pattern_id=pattern.id, results=tuple(results))


# -- aggregation -----------------------------------------------------------------

@dataclass(frozen=True)
class GateSummary:
    passed: int
    failed: int
    reports: tuple[GateReport, ...]

    @property
    def ok(self) -> bool:
        return self.failed == 0

    def failing_ids(self) -> list[str]:
        return [r.pattern_id for r in self.reports if not r.passed]

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "failed": self.failed,
            "reports": [r.to_dict() for r in self.reports],
        }


def _merge(reports: Sequence[GateReport]) -> GateReport:
    results = tuple(r for report in reports for r in report.results)
    return GateReport(pattern_id=reports[0].pattern_id, results=results)


def gate_all(
    target,
    *,
    diversity: bool = True,
    semantic: bool = False,
    judge: EndpointConfig | None = None,
    threshold: float = DEFAULT_DIVERSITY_THRESHOLD,
    budget: TokenBudget | None = None,
) -> GateSummary:
    """Gate every bundle in a registry, a directory, or an explicit list.

    Accepts a PatternRegistry, a corpus directory path (so bundles too broken
    to load still get per-check reports), or an iterable of Pattern/RawBundle.
    """
    if isinstance(target, (str, Path)):
        items: list[Pattern | RawBundle] = list(scan_bundles(Path(target)))
    else:
        items = list(target)

    reports = []
    for item in items:
        per_layer = [run_deterministic_gates(item, budget)]
        if diversity:
            try:
                per_layer.append(run_diversity_gate(item, threshold))
            except GateError as exc:
                per_layer.append(GateReport(
                    pattern_id=per_layer[0].pattern_id,
                    results=(
                        _fail("DIV-POS", f"diversity not computable: {exc}"),
                        _fail("DIV-NEG", f"diversity not computable: {exc}"),
                    ),
                ))
        if semantic:
            if judge is None:
                raise ValueError("semantic gating requires a judge endpoint config")
            if not isinstance(item, Pattern):
                raise GateError("semantic gate needs fully loaded patterns")
            per_layer.append(run_semantic_gate(item, judge))
        reports.append(_merge(per_layer))

    failed = sum(1 for r in reports if not r.passed)
    return GateSummary(passed=len(reports) - failed, failed=failed, reports=tuple(reports))
