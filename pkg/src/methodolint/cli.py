"""Command-line interface.

Exit codes for ``scan``: 0 no findings, 1 findings present, 2 operational
error (and nothing on stdout). ``gate`` exits nonzero iff any bundle fails.
"""

from __future__ import annotations

import json
import sys
import time
from pathlib import Path

import click

from . import __version__
from .client import EndpointConfig, InferenceError
from .config import ConfigError, load_config_file, resolve_endpoint, setting
from .evals import (
    DEFAULT_MATCH_WINDOW,
    conservative_precision,
    eval_integration,
    eval_patterns,
    format_pct,
    judge_findings,
)
from .gates import DEFAULT_DIVERSITY_THRESHOLD, GateError, gate_all
from .mockserver import ScriptError, load_script, serve
from .prompts import DEFAULT_MAX_INPUT_TOKENS, TokenBudget
from .registry import (
    DEFAULT_CORPUS_ROOT,
    RegistryError,
    UnknownCategoryError,
    UnknownPatternError,
    load_registry,
)
from .scan import (
    Finding,
    ScanAbort,
    ScanOptions,
    exit_code_for,
    render_report,
    scan as run_scan,
)

_OPERATIONAL = (
    ScanAbort, RegistryError, UnknownPatternError, UnknownCategoryError,
    InferenceError, ConfigError, GateError, ScriptError, OSError, ValueError,
)


def _die(exc: BaseException) -> "SystemExit":
    message = str(exc)
    if isinstance(exc, KeyError):
        message = message.strip("'\"")
    click.echo(f"methodolint: error: {message}", err=True)
    return SystemExit(2)


def _csv(value: str | None) -> tuple[str, ...]:
    if not value:
        return ()
    return tuple(part.strip() for part in value.split(",") if part.strip())


def _endpoint_options(fn):
    fn = click.option("--max-concurrency", type=int, default=None,
                      help="Max requests in flight.")(fn)
    fn = click.option("--api-key", default=None, help="Bearer token.")(fn)
    fn = click.option("--model", default=None, help="Model name.")(fn)
    fn = click.option("--endpoint", default=None,
                      help="Chat-completions base URL.")(fn)
    fn = click.option("--config", "config_path", default=None,
                      type=click.Path(), help="Settings file path.")(fn)
    return fn


@click.group()
@click.version_option(version=__version__, prog_name="methodolint")
def main() -> None:
    """Methodology linter for scientific Python code."""


@main.command()
@click.argument("paths", nargs=-1, required=True, type=click.Path())
@_endpoint_options
@click.option("--categories", default=None, help="Comma-separated categories.")
@click.option("--patterns", "pattern_ids", default=None,
              help="Comma-separated pattern ids.")
@click.option("--format", "fmt", type=click.Choice(["json", "text"]),
              default=None, help="Report format (default json).")
@click.option("--max-input-tokens", type=int, default=None,
              help="Per-file token budget.")
@click.option("--include", "include_globs", multiple=True,
              help="Only files matching this glob.")
@click.option("--exclude", "exclude_globs", multiple=True,
              help="Skip files matching this glob.")
@click.option("--file-parallelism", type=int, default=None,
              help="Files scanned at once (default 1).")
@click.option("--patterns-dir", type=click.Path(), default=None,
              help="Alternate pattern corpus directory.")
@click.option("--no-gate-check", is_flag=True,
              help="Skip the gate-cleanliness warning pass.")
def scan(paths, endpoint, model, api_key, max_concurrency, config_path,
         categories, pattern_ids, fmt, max_input_tokens, include_globs,
         exclude_globs, file_parallelism, patterns_dir, no_gate_check):
    """Scan Python files for methodology issues."""
    try:
        file_cfg = load_config_file(config_path)
        client = resolve_endpoint(file_cfg, endpoint, model, api_key, max_concurrency)
        budget = TokenBudget(
            max_input_tokens=int(setting(max_input_tokens, None, file_cfg,
                                         "max_input_tokens", DEFAULT_MAX_INPUT_TOKENS)),
            chars_per_token=float(setting(None, None, file_cfg, "chars_per_token", 4.0)),
        )
        cats = (_csv(categories) if categories is not None
                else tuple(file_cfg.get("categories", ())))
        ids = (_csv(pattern_ids) if pattern_ids is not None
               else tuple(file_cfg.get("patterns", ())))
        options = ScanOptions(
            categories=cats,
            pattern_ids=ids,
            include_globs=tuple(include_globs),
            exclude_globs=tuple(exclude_globs) or tuple(file_cfg.get("exclude", ())),
            budget=budget,
            file_parallelism=int(setting(file_parallelism, None, file_cfg,
                                         "file_parallelism", 1)),
            registry_root=Path(patterns_dir) if patterns_dir else None,
            check_gates=not no_gate_check,
        )
        report = run_scan(paths, client, options)
        rendered = render_report(
            report, setting(fmt, None, file_cfg, "format", "json")
        )
    except _OPERATIONAL as exc:
        raise _die(exc)
    sys.stdout.buffer.write(rendered)
    sys.stdout.buffer.flush()
    raise SystemExit(exit_code_for(report))


@main.command()
@click.option("--patterns", "patterns_dir", type=click.Path(), default=None,
              help="Pattern corpus directory (default: bundled corpus).")
@click.option("--skip-semantic", is_flag=True,
              help="Run only deterministic and diversity gates.")
@click.option("--threshold", type=float, default=DEFAULT_DIVERSITY_THRESHOLD,
              show_default=True, help="Diversity similarity threshold.")
@click.option("--json", "as_json", is_flag=True, help="Emit the JSON report.")
@click.option("--judge-endpoint", default=None,
              help="Judge endpoint for the semantic gate.")
@click.option("--judge-model", default=None, help="Judge model name.")
@click.option("--api-key", default=None, help="Bearer token for the judge.")
def gate(patterns_dir, skip_semantic, threshold, as_json, judge_endpoint,
         judge_model, api_key):
    """Run quality gates over a pattern corpus."""
    root = Path(patterns_dir) if patterns_dir else DEFAULT_CORPUS_ROOT
    try:
        if skip_semantic:
            summary = gate_all(root, threshold=threshold)
        else:
            judge = resolve_endpoint({}, judge_endpoint, judge_model, api_key)
            registry = load_registry(root)
            summary = gate_all(registry, semantic=True, judge=judge,
                               threshold=threshold)
    except _OPERATIONAL as exc:
        raise _die(exc)

    if as_json:
        click.echo(json.dumps(summary.to_dict(), indent=2))
    else:
        for report in summary.reports:
            status = "pass" if report.passed else "FAIL"
            click.echo(f"{report.pattern_id}: {status}")
            for res in report.failures:
                click.echo(f"  {res.check_id}: {res.detail}")
        click.echo(f"passed {summary.passed}, failed {summary.failed}")
    raise SystemExit(0 if summary.ok else 1)


@main.command("eval-patterns")
@_endpoint_options
@click.option("--patterns-dir", type=click.Path(), default=None,
              help="Pattern corpus directory (default: bundled corpus).")
def eval_patterns_cmd(endpoint, model, api_key, max_concurrency, config_path,
                      patterns_dir):
    """Evaluate every pattern against its own test files."""
    try:
        file_cfg = load_config_file(config_path)
        client = resolve_endpoint(file_cfg, endpoint, model, api_key, max_concurrency)
        registry = load_registry(Path(patterns_dir) if patterns_dir
                                 else DEFAULT_CORPUS_ROOT)
        result = eval_patterns(registry, client)
    except _OPERATIONAL as exc:
        raise _die(exc)
    payload = result.to_dict()
    acc = result.aggregate.accuracy
    payload["aggregate"]["accuracy_pct"] = format_pct(acc)
    click.echo(json.dumps(payload, indent=2))


@main.command("eval-integration")
@_endpoint_options
@click.option("--scenarios", "scenarios_dir", required=True, type=click.Path(),
              help="Directory of scenario manifests plus code files.")
@click.option("--window", type=int, default=DEFAULT_MATCH_WINDOW,
              show_default=True, help="Line-distance matching window.")
@click.option("--patterns-dir", type=click.Path(), default=None,
              help="Pattern corpus directory (default: bundled corpus).")
def eval_integration_cmd(endpoint, model, api_key, max_concurrency, config_path,
                         scenarios_dir, window, patterns_dir):
    """Score scan findings against planted-bug scenario manifests."""
    try:
        file_cfg = load_config_file(config_path)
        client = resolve_endpoint(file_cfg, endpoint, model, api_key, max_concurrency)
        registry = load_registry(Path(patterns_dir) if patterns_dir
                                 else DEFAULT_CORPUS_ROOT)
        metrics = eval_integration(Path(scenarios_dir), registry, client, window)
    except _OPERATIONAL as exc:
        raise _die(exc)
    payload = metrics.to_dict()
    payload["window"] = window
    payload["precision_pct"] = format_pct(metrics.precision)
    payload["recall_pct"] = format_pct(metrics.recall)
    payload["f1_pct"] = format_pct(metrics.f1)
    click.echo(json.dumps(payload, indent=2))


@main.command()
@click.option("--report", "report_path", required=True, type=click.Path(),
              help="Scan report JSON to verify.")
@click.option("--judge-endpoint", default=None, help="Judge base URL.")
@click.option("--judge-model", default=None, help="Judge model name.")
@click.option("--api-key", default=None, help="Bearer token for the judge.")
@click.option("--repo-origin", default="", help="Repository label shown to the judge.")
@click.option("--config", "config_path", default=None, type=click.Path())
def judge(report_path, judge_endpoint, judge_model, api_key, repo_origin,
          config_path):
    """Ask an independent judge model to verify scan findings."""
    try:
        file_cfg = load_config_file(config_path)
        judge_cfg = resolve_endpoint(file_cfg, judge_endpoint, judge_model, api_key)
        data = json.loads(Path(report_path).read_text(encoding="utf-8"))
        if not isinstance(data.get("findings"), list):
            raise ValueError(f"{report_path}: not a scan report (no findings list)")
        findings = [
            Finding(
                pattern_id=f["pattern_id"], category=f["category"],
                severity=f["severity"], file=f["file"],
                line_refs=tuple(f["line_refs"]),
                issue_summary=f["issue_summary"], explanation=f["explanation"],
                doc_refs=tuple(f["doc_refs"]),
            )
            for f in data["findings"]
        ]
        verdicts = judge_findings(findings, judge_cfg, repo_origin=repo_origin)
    except (*_OPERATIONAL, KeyError, TypeError, json.JSONDecodeError) as exc:
        raise _die(exc)

    tally = {"valid": 0, "invalid": 0, "uncertain": 0}
    for verdict in verdicts:
        tally[verdict.verdict] += 1
    total = sum(tally.values())
    payload = {
        "verdicts": [v.to_dict() for v in verdicts],
        "summary": dict(tally),
    }
    if total:
        cp = conservative_precision(**tally)
        payload["summary"]["conservative_precision"] = cp
        payload["summary"]["conservative_precision_pct"] = format_pct(cp)
    click.echo(json.dumps(payload, indent=2))


@main.command("mock-serve")
@click.option("--script", "script_path", required=True, type=click.Path(),
              help="JSON script of response rules.")
@click.option("--port", type=int, default=0, show_default=True,
              help="Port to bind (0 picks a free one).")
@click.option("--reject-response-format", is_flag=True,
              help="Return 400 for requests carrying response_format.")
def mock_serve(script_path, port, reject_response_format):
    """Serve scripted chat-completions responses for offline testing."""
    try:
        rules = load_script(Path(script_path))
        server = serve(rules, port=port,
                       reject_response_format=reject_response_format)
    except _OPERATIONAL as exc:
        raise _die(exc)
    click.echo(f"mock server listening on {server.base_url} "
               f"({len(rules)} rule(s))")
    try:
        while True:
            time.sleep(0.5)
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()


if __name__ == "__main__":
    main()
