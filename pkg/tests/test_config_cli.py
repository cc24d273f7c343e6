"""Settings resolution and the click entry points."""

import json

import pytest
from click.testing import CliRunner

from conftest import SABOTAGES, catch_all_clean, detected_body, make_pattern, write_corpus
from methodolint.cli import main
from methodolint.client import ENV_API_KEY, ENV_ENDPOINT, ENV_MODEL, EndpointConfig
from methodolint.config import (
    CONFIG_FILENAME,
    ConfigError,
    load_config_file,
    resolve_endpoint,
    setting,
)
from methodolint.mockserver import ScriptRule


@pytest.fixture(autouse=True)
def _clean_env(monkeypatch):
    for var in (ENV_ENDPOINT, ENV_MODEL, ENV_API_KEY):
        monkeypatch.delenv(var, raising=False)


@pytest.fixture
def runner():
    return CliRunner()


# -- config file --------------------------------------------------------------


def test_missing_implicit_config_is_empty(tmp_path):
    assert load_config_file(start_dir=tmp_path) == {}


def test_missing_explicit_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config_file(tmp_path / "absent.toml")


def test_config_file_round_trip(tmp_path):
    path = tmp_path / CONFIG_FILENAME
    path.write_text(
        'endpoint = "http://127.0.0.1:9999"\n'
        'model = "local-model"\n'
        "max_concurrency = 4\n"
        "chars_per_token = 3.5\n"
        'categories = ["ai-training"]\n',
        encoding="utf-8",
    )
    cfg = load_config_file(start_dir=tmp_path)
    assert cfg["endpoint"] == "http://127.0.0.1:9999"
    assert cfg["max_concurrency"] == 4
    assert cfg["categories"] == ["ai-training"]


def test_config_rejects_unknown_keys_and_bad_types(tmp_path):
    path = tmp_path / CONFIG_FILENAME
    path.write_text('endpiont = "typo"\n', encoding="utf-8")
    with pytest.raises(ConfigError, match="endpiont"):
        load_config_file(path)
    path.write_text('max_concurrency = "four"\n', encoding="utf-8")
    with pytest.raises(ConfigError, match="wrong type"):
        load_config_file(path)
    path.write_text("not valid toml [[", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config_file(path)


# -- precedence ----------------------------------------------------------------


def test_setting_precedence(monkeypatch):
    file_cfg = {"model": "from-file"}
    monkeypatch.setenv(ENV_MODEL, "from-env")
    assert setting("from-cli", ENV_MODEL, file_cfg, "model") == "from-cli"
    assert setting(None, ENV_MODEL, file_cfg, "model") == "from-env"
    monkeypatch.delenv(ENV_MODEL)
    assert setting(None, ENV_MODEL, file_cfg, "model") == "from-file"
    assert setting(None, ENV_MODEL, {}, "model", "fallback") == "fallback"
    # empty tuple (unset multi-option) falls through like None
    assert setting((), None, {}, "model", "fallback") == "fallback"
    assert setting(("kept",), None, {}, "model") == ("kept",)


def test_resolve_endpoint_defaults():
    cfg = resolve_endpoint({})
    assert cfg.base_url == "http://127.0.0.1:8000"
    assert cfg.model_name == "default"
    assert cfg.api_key is None
    assert cfg.max_retries == 2
    assert cfg.max_concurrency == 8
    assert cfg.request_timeout == 120.0


def test_resolve_endpoint_layering(monkeypatch):
    file_cfg = {"endpoint": "http://file:1", "max_retries": 5, "api_key": "file-key"}
    monkeypatch.setenv(ENV_ENDPOINT, "http://env:1")
    layered = resolve_endpoint(file_cfg)
    assert layered.base_url == "http://env:1"      # env beats file
    assert layered.max_retries == 5                 # file beats default
    assert layered.api_key == "file-key"
    topped = resolve_endpoint(file_cfg, endpoint="http://cli:1")
    assert topped.base_url == "http://cli:1"        # cli beats env


# -- top-level CLI ----------------------------------------------------------------


def test_version_and_help(runner):
    version = runner.invoke(main, ["--version"])
    assert version.exit_code == 0 and "methodolint" in version.output
    top = runner.invoke(main, ["--help"])
    assert top.exit_code == 0
    for command in ("scan", "gate", "eval-patterns", "eval-integration", "judge"):
        assert command in top.output


# -- gate command --------------------------------------------------------------


def test_gate_cli_passes_clean_corpus(runner, tmp_path):
    corpus = write_corpus(tmp_path / "corpus", make_pattern("ml-901"))
    result = runner.invoke(main, ["gate", "--patterns", str(corpus), "--skip-semantic"])
    assert result.exit_code == 0
    assert "ml-901: pass" in result.output
    assert "passed 1, failed 0" in result.output


def test_gate_cli_flags_broken_bundle_with_json(runner, tmp_path):
    pattern = make_pattern("ml-901")
    corpus = write_corpus(tmp_path / "corpus", pattern)
    sabotage = dict(SABOTAGES)["D04"]
    sabotage(corpus / pattern.category / pattern.id, pattern)
    result = runner.invoke(
        main, ["gate", "--patterns", str(corpus), "--skip-semantic", "--json"]
    )
    assert result.exit_code == 1
    payload = json.loads(result.output)
    assert payload["failed"] == 1
    failed = [r["check_id"] for r in payload["reports"][0]["results"]
              if r["status"] == "fail"]
    assert failed == ["D04"]


def test_gate_cli_semantic_path_with_scripted_judge(runner, tmp_path, mock_endpoint):
    corpus = write_corpus(tmp_path / "corpus", make_pattern("ml-901"))
    agree = [
        ScriptRule(match_substring="Test file tests/positive_",
                   response_body=json.dumps({"exhibits": True, "reasoning": "yes"})),
        ScriptRule(match_substring="",
                   response_body=json.dumps({"exhibits": False, "reasoning": "no"})),
    ]
    server, _ = mock_endpoint(agree)
    result = runner.invoke(main, [
        "gate", "--patterns", str(corpus), "--judge-endpoint", server.base_url,
    ])
    assert result.exit_code == 0, result.output
    assert "passed 1, failed 0" in result.output
    assert len(server.request_log()) == 6  # one judgment per test file


def test_gate_cli_semantic_judge_down_is_operational(runner, tmp_path):
    corpus = write_corpus(tmp_path / "corpus", make_pattern("ml-901"))
    result = runner.invoke(main, [
        "gate", "--patterns", str(corpus), "--judge-endpoint", "http://127.0.0.1:9",
    ])
    assert result.exit_code == 2
    assert "methodolint: error:" in result.stderr


def test_gate_cli_missing_corpus_dir(runner, tmp_path):
    result = runner.invoke(main, [
        "gate", "--patterns", str(tmp_path / "void"), "--skip-semantic",
    ])
    assert result.exit_code == 2
    assert "methodolint: error:" in result.stderr


# -- scan command --------------------------------------------------------------


def _scan_args(target, corpus, cfg, *extra):
    return [
        "scan", str(target),
        "--endpoint", cfg.base_url, "--model", cfg.model_name,
        "--patterns-dir", str(corpus), "--no-gate-check", *extra,
    ]


def test_scan_cli_clean_exit_zero(runner, tmp_path, mock_endpoint):
    corpus = write_corpus(tmp_path / "corpus", make_pattern("ml-901"))
    target = tmp_path / "proj"
    target.mkdir()
    (target / "calm.py").write_text("pace = 'steady'\n")
    _, cfg = mock_endpoint([catch_all_clean()])
    result = runner.invoke(main, _scan_args(target, corpus, cfg))
    assert result.exit_code == 0, result.output
    payload = json.loads(result.output)
    assert payload["report_version"] == 1
    assert payload["findings"] == []
    assert payload["config"]["model"] == cfg.model_name


def test_scan_cli_findings_exit_one_and_text_format(runner, tmp_path, mock_endpoint):
    corpus = write_corpus(tmp_path / "corpus", make_pattern("ml-901"))
    target = tmp_path / "proj"
    target.mkdir()
    (target / "hot.py").write_text("trigger_token = 1\n")
    rules = [
        ScriptRule(match_substring="trigger_token", response_body=detected_body([1])),
        catch_all_clean(),
    ]
    _, cfg = mock_endpoint(rules)
    result = runner.invoke(main, _scan_args(target, corpus, cfg, "--format", "text"))
    assert result.exit_code == 1
    assert "1 finding(s)" in result.output
    assert "[HIGH] ml-901" in result.output


def test_scan_cli_unreachable_endpoint_exits_two(runner, tmp_path):
    corpus = write_corpus(tmp_path / "corpus", make_pattern("ml-901"))
    (tmp_path / "a.py").write_text("x = 1\n")
    dead = EndpointConfig(base_url="http://127.0.0.1:9", model_name="m")
    result = runner.invoke(main, _scan_args(tmp_path / "a.py", corpus, dead))
    assert result.exit_code == 2
    assert "methodolint: error:" in result.stderr
    assert result.stdout == ""  # nothing on stdout for operational failures


def test_scan_cli_unknown_pattern_id_exits_two(runner, tmp_path, mock_endpoint):
    corpus = write_corpus(tmp_path / "corpus", make_pattern("ml-901"))
    (tmp_path / "a.py").write_text("x = 1\n")
    _, cfg = mock_endpoint([catch_all_clean()])
    result = runner.invoke(main, _scan_args(
        tmp_path / "a.py", corpus, cfg, "--patterns", "zz-999",
    ))
    assert result.exit_code == 2
    assert "zz-999" in result.stderr


def test_scan_cli_reads_settings_from_config_file(runner, tmp_path, mock_endpoint):
    corpus = write_corpus(tmp_path / "corpus", make_pattern("ml-901"))
    target = tmp_path / "proj"
    target.mkdir()
    (target / "one.py").write_text("steady = True\n")
    (target / "noisy.py").write_text("steady = False\n")
    _, cfg = mock_endpoint([catch_all_clean()])
    conf = tmp_path / "custom.toml"
    conf.write_text(
        f'endpoint = "{cfg.base_url}"\n'
        'model = "configured-model"\n'
        'format = "text"\n'
        'exclude = ["noisy*"]\n',
        encoding="utf-8",
    )
    result = runner.invoke(main, [
        "scan", str(target), "--config", str(conf),
        "--patterns-dir", str(corpus), "--no-gate-check",
    ])
    assert result.exit_code == 0, result.output
    assert "scanned 1 file(s)" in result.output  # exclude glob honored


def test_scan_cli_env_endpoint(runner, tmp_path, mock_endpoint, monkeypatch):
    corpus = write_corpus(tmp_path / "corpus", make_pattern("ml-901"))
    (tmp_path / "a.py").write_text("x = 1\n")
    _, cfg = mock_endpoint([catch_all_clean()])
    monkeypatch.setenv(ENV_ENDPOINT, cfg.base_url)
    result = runner.invoke(main, [
        "scan", str(tmp_path / "a.py"),
        "--patterns-dir", str(corpus), "--no-gate-check",
    ])
    assert result.exit_code == 0, result.output
    assert json.loads(result.output)["config"]["endpoint"] == cfg.base_url


# -- eval and judge commands ----------------------------------------------------


def test_eval_patterns_cli(runner, tmp_path, mock_endpoint):
    corpus = write_corpus(tmp_path / "corpus", make_pattern("ml-901"))
    _, cfg = mock_endpoint([catch_all_clean()])
    result = runner.invoke(main, [
        "eval-patterns", "--endpoint", cfg.base_url,
        "--patterns-dir", str(corpus),
    ])
    assert result.exit_code == 0, result.output
    payload = json.loads(result.output)
    # all-clean endpoint: positives missed (fn), negatives clean (tn)
    assert payload["aggregate"]["fn"] == 3 and payload["aggregate"]["tn"] == 3
    assert payload["aggregate"]["accuracy_pct"] == "50%"
    assert payload["errors"] == []


def test_eval_integration_cli(runner, tmp_path, mock_endpoint):
    corpus = write_corpus(tmp_path / "corpus", make_pattern("ml-901"))
    scenarios = tmp_path / "scenarios"
    scenarios.mkdir()
    (scenarios / "case.py").write_text("planted_marker = 1\n")
    (scenarios / "case.json").write_text(json.dumps({
        "scenario_id": "case", "code_file": "case.py",
        "planted": [{"pattern_id": "ml-901", "line": 1}],
    }))
    rules = [
        ScriptRule(match_substring="planted_marker", response_body=detected_body([1])),
        catch_all_clean(),
    ]
    _, cfg = mock_endpoint(rules)
    result = runner.invoke(main, [
        "eval-integration", "--endpoint", cfg.base_url,
        "--scenarios", str(scenarios), "--patterns-dir", str(corpus),
    ])
    assert result.exit_code == 0, result.output
    payload = json.loads(result.output)
    assert payload["tp"] == 1 and payload["fp"] == 0 and payload["fn"] == 0
    assert payload["precision_pct"] == "100%"
    assert payload["window"] == 3


def test_judge_cli_summarizes_verdicts(runner, tmp_path, mock_endpoint):
    subject = tmp_path / "code.py"
    subject.write_text("a = 1\nb = 2\nc = 3\n")
    report = {
        "findings": [{
            "pattern_id": "ml-901", "category": "ai-training", "severity": "high",
            "file": str(subject), "line_refs": [2],
            "issue_summary": "issue", "explanation": "why", "doc_refs": [],
        }],
    }
    report_path = tmp_path / "report.json"
    report_path.write_text(json.dumps(report), encoding="utf-8")
    rules = [ScriptRule(
        match_substring="",
        response_body=json.dumps({"verdict": "valid", "reasoning": "checks out"}),
    )]
    server, _ = mock_endpoint(rules)
    result = runner.invoke(main, [
        "judge", "--report", str(report_path), "--judge-endpoint", server.base_url,
    ])
    assert result.exit_code == 0, result.output
    payload = json.loads(result.output)
    assert payload["summary"]["valid"] == 1
    assert payload["summary"]["conservative_precision"] == 1.0
    assert payload["summary"]["conservative_precision_pct"] == "100%"
    assert payload["verdicts"][0]["finding_ref"].endswith(":ml-901:0")


def test_judge_cli_bad_report_is_operational(runner, tmp_path):
    report_path = tmp_path / "report.json"
    report_path.write_text("{not json", encoding="utf-8")
    result = runner.invoke(main, [
        "judge", "--report", str(report_path), "--judge-endpoint", "http://127.0.0.1:9",
    ])
    assert result.exit_code == 2
    assert "methodolint: error:" in result.stderr


def test_judge_cli_rejects_json_that_is_not_a_scan_report(runner, tmp_path):
    # valid JSON but no findings key: likely a mistyped --report path
    report_path = tmp_path / "report.json"
    report_path.write_text(json.dumps({"oops": True}), encoding="utf-8")
    result = runner.invoke(main, [
        "judge", "--report", str(report_path), "--judge-endpoint", "http://127.0.0.1:9",
    ])
    assert result.exit_code == 2
    assert "not a scan report" in result.stderr

    report_path.write_text(json.dumps({"findings": "not-a-list"}), encoding="utf-8")
    result = runner.invoke(main, [
        "judge", "--report", str(report_path), "--judge-endpoint", "http://127.0.0.1:9",
    ])
    assert result.exit_code == 2
    assert "not a scan report" in result.stderr


# -- mock-serve command -----------------------------------------------------------


def test_mock_serve_cli_rejects_bad_scripts(runner, tmp_path):
    script = tmp_path / "script.json"
    script.write_text(json.dumps({"match_substring": "", "response_body": "x"}))
    result = runner.invoke(main, ["mock-serve", "--script", str(script)])
    assert result.exit_code == 2
    assert "methodolint: error:" in result.stderr

    missing = runner.invoke(main, ["mock-serve", "--script", str(tmp_path / "no.json")])
    assert missing.exit_code == 2
