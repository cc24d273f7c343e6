"""Shared fixtures: synthetic bundles, gate sabotage recipes, scripted endpoints."""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import pytest

from methodolint.client import EndpointConfig
from methodolint.mockserver import MockServer, ScriptRule
from methodolint.registry import (
    DEFAULT_CORPUS_ROOT,
    Pattern,
    TestFile,
    load_registry,
    render_manifest,
    write_bundle,
)

# --- synthetic pattern -----------------------------------------------------------
# Three structurally distinct sources per kind so the diversity gate passes.

_POS_SOURCES = {
    "tests/positive_script.py": (
        "import numpy as np\n"
        "\n"
        "draws = np.random.normal(0.0, 1.0, size=100000)\n"
        "print('mean:', draws.mean())\n"
        "np.save('draws.npy', draws)\n"
    ),
    "tests/positive_function.py": (
        "import numpy as np\n"
        "\n"
        "\n"
        "def resample(values, rounds):\n"
        "    out = []\n"
        "    for _ in range(rounds):\n"
        "        pick = np.random.choice(values, size=len(values))\n"
        "        out.append(pick.mean())\n"
        "    return out\n"
        "\n"
        "\n"
        "print(len(resample(np.arange(50), 200)))\n"
    ),
    "tests/positive_class.py": (
        "import numpy as np\n"
        "\n"
        "\n"
        "class Walker:\n"
        "    def __init__(self, dims):\n"
        "        self.state = np.zeros(dims)\n"
        "\n"
        "    def step(self):\n"
        "        self.state = self.state + np.random.uniform(-1, 1, self.state.shape)\n"
        "        return float(np.abs(self.state).max())\n"
        "\n"
        "\n"
        "walker = Walker(4)\n"
        "print(max(walker.step() for _ in range(64)))\n"
    ),
}

_NEG_SOURCES = {
    "tests/negative_seeded.py": (
        "import numpy as np\n"
        "\n"
        "np.random.seed(7)\n"
        "draws = np.random.normal(0.0, 1.0, size=100000)\n"
        "print('mean:', draws.mean())\n"
        "np.save('draws.npy', draws)\n"
    ),
    "tests/negative_generator.py": (
        "import numpy as np\n"
        "\n"
        "\n"
        "def resample(values, rounds, rng):\n"
        "    return [rng.choice(values, size=len(values)).mean()\n"
        "            for _ in range(rounds)]\n"
        "\n"
        "\n"
        "rng = np.random.default_rng(11)\n"
        "print(len(resample(np.arange(50), 200, rng)))\n"
    ),
    "tests/negative_deterministic.py": (
        "import numpy as np\n"
        "\n"
        "grid = np.linspace(0.0, 2.0, 401)\n"
        "surface = np.cos(grid) * np.exp(-grid / 3.0)\n"
        "print('peak at:', float(grid[surface.argmax()]))\n"
        "np.save('surface.npy', surface)\n"
    ),
}

_QUESTION = (
    "Analyze numpy-based random number use for missing seeds in result-bearing "
    "code. Unseeded draws from the global generator make every run produce "
    "different numbers, so saved outputs cannot be regenerated for checking. "
    "Look for: np.random calls with no np.random.seed or seeded Generator "
    "anywhere on the path. NOT a bug: seeded generators, or scripts with no "
    "randomness at all. YES = unseeded numpy randomness feeds the outputs. "
    "NO = the generator is seeded or unused."
)


def make_pattern(pid: str = "ml-901", **overrides) -> Pattern:
    fields = dict(
        id=pid,
        category="ai-training",
        severity="high",
        title="Unseeded numpy randomness",
        description="Numpy randomness without a seed makes runs unrepeatable.",
        detection_question=_QUESTION,
        doc_refs=(
            "https://numpy.org/doc/stable/reference/random/index.html",
            "https://docs.python.org/3/library/random.html",
        ),
        positive_tests=tuple(
            TestFile(rel, src, "positive") for rel, src in sorted(_POS_SOURCES.items())
        ),
        negative_tests=tuple(
            TestFile(rel, src, "negative") for rel, src in sorted(_NEG_SOURCES.items())
        ),
    )
    fields.update(overrides)
    return Pattern(**fields)


def write_corpus(root: Path, *patterns: Pattern) -> Path:
    """Write patterns in the on-disk corpus layout; returns the corpus root."""
    for pattern in patterns:
        write_bundle(pattern, root / pattern.category / pattern.id)
    return root


# --- sabotage recipes --------------------------------------------------------
# Each entry breaks a freshly written valid bundle so that exactly the named
# deterministic check fails. Used by the gate tests and acceptance criterion 2.

def _manifest_path(bundle_dir: Path) -> Path:
    return bundle_dir / "pattern.toml"


def _rewrite_manifest(bundle_dir: Path, pattern: Pattern) -> None:
    _manifest_path(bundle_dir).write_text(render_manifest(pattern), encoding="utf-8")


def _sab_d01_unknown_key(bundle_dir: Path, pattern: Pattern) -> None:
    path = _manifest_path(bundle_dir)
    path.write_text(path.read_text(encoding="utf-8") + 'stray = "x"\n', encoding="utf-8")


def _sab_d02_prefix_mismatch(bundle_dir: Path, pattern: Pattern) -> None:
    path = _manifest_path(bundle_dir)
    text = path.read_text(encoding="utf-8").replace(
        f'id = "{pattern.id}"', 'id = "zz-901"', 1
    )
    path.write_text(text, encoding="utf-8")


def _sab_d03_bad_category(bundle_dir: Path, pattern: Pattern) -> None:
    path = _manifest_path(bundle_dir)
    text = path.read_text(encoding="utf-8").replace(
        f'category = "{pattern.category}"', 'category = "ai-wrangling"', 1
    )
    path.write_text(text, encoding="utf-8")


def _sab_d04_bad_severity(bundle_dir: Path, pattern: Pattern) -> None:
    path = _manifest_path(bundle_dir)
    text = path.read_text(encoding="utf-8").replace(
        f'severity = "{pattern.severity}"', 'severity = "blocker"', 1
    )
    path.write_text(text, encoding="utf-8")


def _sab_d05_too_few_tests(bundle_dir: Path, pattern: Pattern) -> None:
    dropped = pattern.positive_tests[-1]
    _rewrite_manifest(
        bundle_dir,
        dataclasses.replace(pattern, positive_tests=pattern.positive_tests[:-1]),
    )
    (bundle_dir / dropped.relative_path).unlink()


def _sab_d06_duplicate_filename(bundle_dir: Path, pattern: Pattern) -> None:
    doubled = (pattern.positive_tests[0],) + pattern.positive_tests
    _rewrite_manifest(bundle_dir, dataclasses.replace(pattern, positive_tests=doubled))


def _sab_d07_syntax_error(bundle_dir: Path, pattern: Pattern) -> None:
    target = bundle_dir / pattern.positive_tests[0].relative_path
    target.write_text("def broken(:\n    pass\n", encoding="utf-8")


def _sab_d08_hint_comment(bundle_dir: Path, pattern: Pattern) -> None:
    target = bundle_dir / pattern.positive_tests[0].relative_path
    target.write_text(
        target.read_text(encoding="utf-8") + "# bug: the seed is missing above\n",
        encoding="utf-8",
    )


def _sab_d09_missing_contract(bundle_dir: Path, pattern: Pattern) -> None:
    question = pattern.detection_question.replace("YES =", "WHEN ->").replace("NO =", "ELSE ->")
    _rewrite_manifest(bundle_dir, dataclasses.replace(pattern, detection_question=question))


def _sab_d10_short_question(bundle_dir: Path, pattern: Pattern) -> None:
    _rewrite_manifest(bundle_dir, dataclasses.replace(
        pattern, detection_question="Analyze seeding. YES = unseeded. NO = seeded.",
    ))


def _sab_d11_empty_doc_refs(bundle_dir: Path, pattern: Pattern) -> None:
    _rewrite_manifest(bundle_dir, dataclasses.replace(pattern, doc_refs=()))


def _sab_d12_identical_tests(bundle_dir: Path, pattern: Pattern) -> None:
    first, second = pattern.negative_tests[0], pattern.negative_tests[1]
    (bundle_dir / second.relative_path).write_text(first.source, encoding="utf-8")


def _sab_d13_missing_on_disk(bundle_dir: Path, pattern: Pattern) -> None:
    (bundle_dir / pattern.positive_tests[0].relative_path).unlink()


def _sab_d14_oversized_test(bundle_dir: Path, pattern: Pattern) -> None:
    target = bundle_dir / pattern.negative_tests[0].relative_path
    padding = "p" * 60001
    target.write_text(
        target.read_text(encoding="utf-8") + f'\nPADDING = "{padding}"\n',
        encoding="utf-8",
    )


def _sab_d15_reserved_delimiter(bundle_dir: Path, pattern: Pattern) -> None:
    target = bundle_dir / pattern.negative_tests[0].relative_path
    target.write_text(
        target.read_text(encoding="utf-8") + '\nMARKER = "<code-x"\n',
        encoding="utf-8",
    )


SABOTAGES = (
    ("D01", _sab_d01_unknown_key),
    ("D02", _sab_d02_prefix_mismatch),
    ("D03", _sab_d03_bad_category),
    ("D04", _sab_d04_bad_severity),
    ("D05", _sab_d05_too_few_tests),
    ("D06", _sab_d06_duplicate_filename),
    ("D07", _sab_d07_syntax_error),
    ("D08", _sab_d08_hint_comment),
    ("D09", _sab_d09_missing_contract),
    ("D10", _sab_d10_short_question),
    ("D11", _sab_d11_empty_doc_refs),
    ("D12", _sab_d12_identical_tests),
    ("D13", _sab_d13_missing_on_disk),
    ("D14", _sab_d14_oversized_test),
    ("D15", _sab_d15_reserved_delimiter),
)


# --- scripted endpoint helpers -----------------------------------------------

def detected_body(lines, summary="issue present", explanation="evidence in file"):
    return json.dumps({
        "detected": True,
        "issue_summary": summary,
        "explanation": explanation,
        "line_refs": list(lines),
    })


def clean_body(explanation="no such issue"):
    return json.dumps({
        "detected": False,
        "issue_summary": "",
        "explanation": explanation,
        "line_refs": [],
    })


def catch_all_clean() -> ScriptRule:
    return ScriptRule(match_substring="", response_body=clean_body())


@pytest.fixture
def mock_endpoint():
    """Factory starting scripted servers; returns (server, EndpointConfig)."""
    servers: list[MockServer] = []

    def start(rules, *, max_concurrency=8, max_retries=2, model="mock-model",
              reject_response_format=False, request_timeout=30.0):
        server = MockServer(
            list(rules), reject_response_format=reject_response_format
        ).start()
        servers.append(server)
        cfg = EndpointConfig(
            base_url=server.base_url,
            model_name=model,
            max_retries=max_retries,
            max_concurrency=max_concurrency,
            request_timeout=request_timeout,
        )
        return server, cfg

    yield start
    for server in servers:
        server.stop()


@pytest.fixture(scope="session")
def corpus():
    return load_registry(DEFAULT_CORPUS_ROOT)


# --- acceptance summary ------------------------------------------------------

ACCEPTANCE_LINES: list[tuple[int, str]] = []


def record_acceptance(number: int, slug: str, status: str) -> None:
    ACCEPTANCE_LINES.append((number, f"acceptance criterion {number} ({slug}): {status}"))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for _, line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)
