"""Scan orchestration: discover files, fan out across patterns, report.

Files are processed sequentially by default (``file_parallelism`` raises
that) while each file's patterns run concurrently under the client's
bounded-concurrency contract. Every discovered file lands in exactly one of
files_scanned / files_skipped / files_errored, so nothing drops silently.
"""

from __future__ import annotations

import asyncio
import datetime as dt
import json
import logging
import time
from dataclasses import dataclass, field
from fnmatch import fnmatch
from pathlib import Path
from typing import Iterable, Sequence

from .client import EndpointConfig, InferenceError, ModelVerdict, probe_endpoint
from .client import run_batch_async
from .gates import gate_all
from .prompts import TokenBudget, build_prompt, check_budget, choose_nonce
from .registry import (
    DEFAULT_CORPUS_ROOT,
    Pattern,
    PatternRegistry,
    filter_by_categories,
    filter_by_ids,
    load_registry,
)

__all__ = [
    "Finding", "SkipRecord", "FileError", "PatternError", "FileScanOutcome",
    "ScanReport", "ScanOptions", "ScanAbort", "REPORT_VERSION",
    "discover_targets", "scan_file", "scan", "render_report", "exit_code_for",
]

log = logging.getLogger(__name__)

REPORT_VERSION = 1


class ScanAbort(Exception):
    """Operational failure that prevents the scan from running (exit 2)."""


@dataclass(frozen=True)
class Finding:
    pattern_id: str
    category: str
    severity: str
    file: str
    line_refs: tuple[int, ...]
    issue_summary: str
    explanation: str
    doc_refs: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "pattern_id": self.pattern_id,
            "category": self.category,
            "severity": self.severity,
            "file": self.file,
            "line_refs": list(self.line_refs),
            "issue_summary": self.issue_summary,
            "explanation": self.explanation,
            "doc_refs": list(self.doc_refs),
        }


@dataclass(frozen=True)
class SkipRecord:
    path: str
    reason: str

    def to_dict(self) -> dict:
        return {"path": self.path, "reason": self.reason}


@dataclass(frozen=True)
class FileError:
    path: str
    error: str

    def to_dict(self) -> dict:
        return {"path": self.path, "error": self.error}


@dataclass(frozen=True)
class PatternError:
    file: str
    pattern_id: str
    error: str

    def to_dict(self) -> dict:
        return {"file": self.file, "pattern_id": self.pattern_id, "error": self.error}


@dataclass(frozen=True)
class FileScanOutcome:
    """Result of scanning one file: findings, or a skip, plus per-pattern errors."""

    findings: tuple[Finding, ...]
    skip: SkipRecord | None
    pattern_errors: tuple[PatternError, ...]


@dataclass(frozen=True)
class ScanReport:
    findings: tuple[Finding, ...]
    files_scanned: tuple[str, ...]
    files_skipped: tuple[SkipRecord, ...]
    files_errored: tuple[FileError, ...]
    pattern_errors: tuple[PatternError, ...]
    started_at: str
    duration: float
    config_echo: dict

    def to_dict(self) -> dict:
        return {
            "report_version": REPORT_VERSION,
            "started_at": self.started_at,
            "duration": self.duration,
            "config": dict(self.config_echo),
            "files_scanned": list(self.files_scanned),
            "files_skipped": [s.to_dict() for s in self.files_skipped],
            "files_errored": [e.to_dict() for e in self.files_errored],
            "pattern_errors": [e.to_dict() for e in self.pattern_errors],
            "findings": [f.to_dict() for f in self.findings],
        }


@dataclass(frozen=True)
class ScanOptions:
    categories: tuple[str, ...] = ()
    pattern_ids: tuple[str, ...] = ()
    include_globs: tuple[str, ...] = ()
    exclude_globs: tuple[str, ...] = ()
    budget: TokenBudget = field(default_factory=TokenBudget)
    file_parallelism: int = 1
    registry_root: Path | None = None
    registry: PatternRegistry | None = None  # overrides registry_root when set
    check_gates: bool = True
    probe: bool = True


def discover_targets(
    paths: Sequence[str | Path],
    include_globs: Iterable[str] = (),
    exclude_globs: Iterable[str] = (),
) -> list[Path]:
    """Python files under ``paths``, deduplicated, lexicographically sorted.

    Globs match the path relative to the directory being walked (explicit
    file arguments match on their name).
    """
    include = tuple(include_globs)
    exclude = tuple(exclude_globs)

    def wanted(rel: str) -> bool:
        if include and not any(fnmatch(rel, g) for g in include):
            return False
        return not any(fnmatch(rel, g) for g in exclude)

    found: set[Path] = set()
    for raw in paths:
        path = Path(raw)
        if path.is_file():
            if path.suffix == ".py" and wanted(path.name):
                found.add(path.resolve())
        elif path.is_dir():
            for candidate in path.rglob("*.py"):
                if not candidate.is_file():
                    continue
                rel = candidate.relative_to(path).as_posix()
                if wanted(rel):
                    found.add(candidate.resolve())
        else:
            raise ScanAbort(f"target path does not exist: {path}")
    return sorted(found, key=lambda p: p.as_posix())


async def _scan_source_async(
    file: str,
    code: str,
    patterns: Sequence[Pattern],
    client: EndpointConfig,
    budget: TokenBudget,
    semaphore: asyncio.Semaphore | None = None,
) -> FileScanOutcome:
    verdict_check = check_budget(code, budget, filename=file)
    if not verdict_check.fit:
        return FileScanOutcome(
            findings=(),
            skip=SkipRecord(path=file, reason=verdict_check.reason),
            pattern_errors=(),
        )

    nonce = choose_nonce(code)
    bundles = [build_prompt(code, p, nonce) for p in patterns]
    results = await run_batch_async(bundles, client, semaphore)

    findings: list[Finding] = []
    errors: list[PatternError] = []
    for pattern, result in zip(patterns, results):
        if isinstance(result, InferenceError):
            errors.append(PatternError(file=file, pattern_id=pattern.id, error=str(result)))
            continue
        verdict: ModelVerdict = result
        if verdict.detected:
            findings.append(Finding(
                pattern_id=pattern.id,
                category=pattern.category,
                severity=pattern.severity,
                file=file,
                line_refs=tuple(verdict.line_refs),
                issue_summary=verdict.issue_summary,
                explanation=verdict.explanation,
                doc_refs=pattern.doc_refs,
            ))
    return FileScanOutcome(tuple(findings), None, tuple(errors))


def scan_file(
    file: str | Path,
    reg: PatternRegistry,
    client: EndpointConfig,
    budget: TokenBudget | None = None,
) -> FileScanOutcome:
    """Scan one file against every pattern in ``reg`` (shared per-file nonce)."""
    path = Path(file)
    code = path.read_text(encoding="utf-8")
    return asyncio.run(_scan_source_async(
        str(path), code, list(reg), client, budget or TokenBudget()
    ))


def _load_selected_registry(options: ScanOptions) -> PatternRegistry:
    if options.registry is not None:
        reg = options.registry
    else:
        root = options.registry_root or DEFAULT_CORPUS_ROOT
        reg = load_registry(root)
    reg = filter_by_categories(reg, options.categories)
    if options.pattern_ids:
        reg = filter_by_ids(reg, options.pattern_ids)
    return reg


def _warn_if_gate_dirty(reg: PatternRegistry) -> None:
    summary = gate_all(reg)
    if not summary.ok:
        log.warning(
            "scanning with a gate-dirty registry: %d pattern(s) failing (%s)",
            summary.failed, ", ".join(summary.failing_ids()),
        )


async def _scan_paths_async(
    targets: Sequence[Path],
    patterns: Sequence[Pattern],
    client: EndpointConfig,
    options: ScanOptions,
) -> tuple[list[str], list[SkipRecord], list[FileError], list[PatternError], list[Finding]]:
    gate = asyncio.Semaphore(max(1, options.file_parallelism))
    # One request bound for the whole run, even when several files overlap.
    requests = asyncio.Semaphore(client.max_concurrency)

    async def one(path: Path) -> tuple[str, FileScanOutcome | FileError]:
        async with gate:
            name = str(path)
            try:
                code = path.read_text(encoding="utf-8")
            except (OSError, UnicodeDecodeError) as exc:
                return name, FileError(path=name, error=str(exc))
            outcome = await _scan_source_async(
                name, code, patterns, client, options.budget, requests
            )
            return name, outcome

    scanned: list[str] = []
    skipped: list[SkipRecord] = []
    errored: list[FileError] = []
    pattern_errors: list[PatternError] = []
    findings: list[Finding] = []
    for name, result in await asyncio.gather(*(one(p) for p in targets)):
        if isinstance(result, FileError):
            errored.append(result)
        elif result.skip is not None:
            skipped.append(result.skip)
        else:
            scanned.append(name)
            findings.extend(result.findings)
            pattern_errors.extend(result.pattern_errors)
    return scanned, skipped, errored, pattern_errors, findings


def scan(
    paths: Sequence[str | Path],
    client: EndpointConfig,
    options: ScanOptions | None = None,
) -> ScanReport:
    """Run the full scan pipeline; raises ScanAbort on operational failure."""
    options = options or ScanOptions()
    started_at = dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")
    t0 = time.monotonic()

    reg = _load_selected_registry(options)
    if options.check_gates:
        _warn_if_gate_dirty(reg)
    targets = discover_targets(paths, options.include_globs, options.exclude_globs)

    if options.probe and targets:
        try:
            probe_endpoint(client)
        except InferenceError as exc:
            raise ScanAbort(str(exc)) from exc

    patterns = list(reg)
    scanned, skipped, errored, pattern_errors, findings = asyncio.run(
        _scan_paths_async(targets, patterns, client, options)
    )

    return ScanReport(
        findings=tuple(findings),
        files_scanned=tuple(scanned),
        files_skipped=tuple(skipped),
        files_errored=tuple(errored),
        pattern_errors=tuple(pattern_errors),
        started_at=started_at,
        duration=round(time.monotonic() - t0, 3),
        config_echo={
            "endpoint": client.base_url,
            "model": client.model_name,
            "categories": sorted(options.categories) or sorted({p.category for p in patterns}),
            "patterns_selected": len(patterns),
            "max_input_tokens": options.budget.max_input_tokens,
            "chars_per_token": options.budget.chars_per_token,
            "max_concurrency": client.max_concurrency,
            "file_parallelism": options.file_parallelism,
        },
    )


def exit_code_for(report: ScanReport) -> int:
    """0: clean; 1: findings present. Operational errors never reach here."""
    return 1 if report.findings else 0


_SEVERITY_ORDER = {"critical": 0, "high": 1, "medium": 2}


def render_report(report: ScanReport, format: str = "json") -> bytes:
    """Stable bytes for a report; identical reports render identically."""
    if format == "json":
        return (json.dumps(report.to_dict(), indent=2, sort_keys=False) + "\n").encode("utf-8")
    if format != "text":
        raise ValueError(f"unknown report format {format!r}")

    lines: list[str] = []
    lines.append(
        f"methodolint: scanned {len(report.files_scanned)} file(s), "
        f"{len(report.findings)} finding(s)"
    )
    by_file: dict[str, list[Finding]] = {}
    for finding in report.findings:
        by_file.setdefault(finding.file, []).append(finding)
    for file in sorted(by_file):
        lines.append("")
        lines.append(file)
        ordered = sorted(
            by_file[file],
            key=lambda f: (_SEVERITY_ORDER.get(f.severity, 9), f.pattern_id),
        )
        for finding in ordered:
            where = ",".join(str(n) for n in finding.line_refs) or "?"
            lines.append(
                f"  [{finding.severity.upper()}] {finding.pattern_id} "
                f"line {where}: {finding.issue_summary}"
            )
            if finding.explanation:
                lines.append(f"      {finding.explanation}")
            for ref in finding.doc_refs:
                lines.append(f"      see: {ref}")
    if report.files_skipped:
        lines.append("")
        lines.append("skipped:")
        for skip in report.files_skipped:
            lines.append(f"  {skip.path}: {skip.reason}")
    if report.files_errored:
        lines.append("")
        lines.append("errors:")
        for err in report.files_errored:
            lines.append(f"  {err.path}: {err.error}")
    if report.pattern_errors:
        lines.append("")
        lines.append("pattern errors:")
        for perr in report.pattern_errors:
            lines.append(f"  {perr.file} [{perr.pattern_id}]: {perr.error}")
    return ("\n".join(lines) + "\n").encode("utf-8")
